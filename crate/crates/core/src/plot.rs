//! Learning curves from `metrics.jsonl`: the contrastive and CTC losses on
//! the train subset and the validation split, as CSV and as a small SVG.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::train::MetricRecord;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CurvePoint {
    pub step: u64,
    pub lu_train: Option<f64>,
    pub lu_valid: Option<f64>,
    pub ls_train: Option<f64>,
    pub ls_valid: Option<f64>,
}

/// One point per evaluated step. A step evaluated twice (e.g. after a
/// resume) keeps the later record.
pub fn curves(metrics: &[MetricRecord]) -> Vec<CurvePoint> {
    let mut by_step: BTreeMap<u64, CurvePoint> = BTreeMap::new();
    for m in metrics {
        let MetricRecord::Eval(e) = m else { continue };
        let p = by_step.entry(e.step).or_insert_with(|| CurvePoint {
            step: e.step,
            ..Default::default()
        });
        match e.split.as_str() {
            "train" => {
                p.lu_train = e.contrastive_loss;
                p.ls_train = e.ctc_loss;
            }
            "valid" => {
                p.lu_valid = e.contrastive_loss;
                p.ls_valid = e.ctc_loss;
            }
            _ => {}
        }
    }
    by_step.into_values().collect()
}

fn cell(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_default()
}

pub fn to_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("step,lu_train,lu_valid,ls_train,ls_valid\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            p.step,
            cell(p.lu_train),
            cell(p.lu_valid),
            cell(p.ls_train),
            cell(p.ls_valid)
        );
    }
    s
}

const W: f64 = 640.0;
const H: f64 = 220.0;
const PAD: f64 = 48.0;

struct Series<'a> {
    label: &'a str,
    color: &'a str,
    dashed: bool,
    values: Vec<(u64, f64)>,
}

fn panel(out: &mut String, top: f64, title: &str, series: &[Series], max_step: u64) {
    let vals: Vec<f64> = series
        .iter()
        .flat_map(|s| s.values.iter().map(|v| v.1))
        .filter(|v| v.is_finite())
        .collect();
    let (lo, hi) = vals
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (lo.min(0.0), lo.max(0.0) + 1.0) };
    let x = |step: u64| PAD + (W - 2.0 * PAD) * step as f64 / max_step.max(1) as f64;
    let y = |v: f64| top + H - PAD / 2.0 - (H - PAD) * (v - lo) / (hi - lo);
    let _ = writeln!(
        out,
        r##"<rect x="{PAD}" y="{}" width="{}" height="{}" fill="none" stroke="#888"/>"##,
        top + PAD / 2.0,
        W - 2.0 * PAD,
        H - PAD
    );
    let _ = writeln!(out, r#"<text x="{PAD}" y="{}" font-size="13">{title}</text>"#, top + PAD / 2.0 - 6.0);
    let _ = writeln!(
        out,
        r#"<text x="4" y="{}" font-size="10">{hi:.3}</text><text x="4" y="{}" font-size="10">{lo:.3}</text>"#,
        y(hi) + 4.0,
        y(lo)
    );
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .values
            .iter()
            .filter(|v| v.1.is_finite())
            .map(|&(st, v)| format!("{:.1},{:.1}", x(st), y(v)))
            .collect();
        let dash = if s.dashed { r#" stroke-dasharray="5,3""# } else { "" };
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5"{dash} points="{}"/>"#,
            s.color,
            pts.join(" ")
        );
        let ly = top + PAD / 2.0 + 14.0 + 14.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}"{dash}/><text x="{}" y="{}" font-size="11">{}</text>"#,
            W - PAD - 120.0,
            W - PAD - 96.0,
            s.color,
            W - PAD - 90.0,
            ly + 4.0,
            s.label
        );
    }
}

/// Two stacked panels (contrastive loss above, CTC loss below); train solid,
/// validation dashed. The x axis is the global update index.
pub fn to_svg(points: &[CurvePoint]) -> String {
    let max_step = points.iter().map(|p| p.step).max().unwrap_or(1);
    let col = |f: fn(&CurvePoint) -> Option<f64>| -> Vec<(u64, f64)> {
        points.iter().filter_map(|p| f(p).map(|v| (p.step, v))).collect()
    };
    let mut s = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{}" font-family="sans-serif">"#,
        2.0 * H + 20.0
    );
    s.push('\n');
    panel(
        &mut s,
        0.0,
        "contrastive loss",
        &[
            Series { label: "train", color: "#000000", dashed: false, values: col(|p| p.lu_train) },
            Series { label: "valid", color: "#000000", dashed: true, values: col(|p| p.lu_valid) },
        ],
        max_step,
    );
    panel(
        &mut s,
        H + 20.0,
        "CTC loss",
        &[
            Series { label: "train", color: "#1a8f2e", dashed: false, values: col(|p| p.ls_train) },
            Series { label: "valid", color: "#1a8f2e", dashed: true, values: col(|p| p.ls_valid) },
        ],
        max_step,
    );
    s.push_str("</svg>\n");
    s
}

/// Reads `metrics` and writes `curves.csv` and `curves.svg` into `out`.
pub fn plot_metrics(metrics: &Path, out: &Path) -> Result<Vec<CurvePoint>> {
    let records = crate::train::read_metrics(metrics)?;
    let points = curves(&records);
    if points.is_empty() {
        return Err(Error::format("metrics", "no evaluation records"));
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("curves.csv"), to_csv(&points))?;
    std::fs::write(out.join("curves.svg"), to_svg(&points))?;
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::EvalRecord;

    fn rec(step: u64, split: &str, ctc: f64, cpc: f64) -> MetricRecord {
        MetricRecord::Eval(EvalRecord {
            step,
            split: split.into(),
            wer: 0.5,
            cer: 0.2,
            ctc_loss: Some(ctc),
            contrastive_loss: Some(cpc),
        })
    }

    #[test]
    fn pivots_by_step() {
        let m = vec![rec(10, "valid", 2.0, 4.0), rec(10, "train", 1.0, 3.0), rec(20, "valid", 1.5, 3.5)];
        let pts = curves(&m);
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].ls_train, Some(1.0));
        assert_eq!(pts[0].lu_valid, Some(4.0));
        assert_eq!(pts[1].ls_train, None);
        let csv = to_csv(&pts);
        assert_eq!(csv.lines().nth(2).unwrap(), "20,,3.5,,1.5");
        let svg = to_svg(&pts);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 4);
    }
}
