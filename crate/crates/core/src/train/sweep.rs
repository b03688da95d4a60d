use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{train, TrainData, TrainerConfig};
use crate::error::{Error, Result};
use crate::model::{AcousticModel, ModelConfig};

/// One configuration of the sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCell {
    pub label: String,
    pub update_ratio: usize,
    /// `lr_unsup / lr_sup`; `lr_sup` is kept from the base config.
    pub lr_ratio: f64,
    pub single_optimizer: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub cells: Vec<SweepCell>,
    pub seeds: Vec<u64>,
}

impl SweepGrid {
    /// Baseline at learning-rate ratio `lr_ratio` plus one change per row:
    /// update ratio 5:1, a five times smaller learning-rate ratio, and a
    /// single shared optimizer.
    pub fn ablation(seeds: Vec<u64>, lr_ratio: f64) -> Self {
        let cell = |label: &str, n: usize, r: f64, single: bool| SweepCell {
            label: label.into(),
            update_ratio: n,
            lr_ratio: r,
            single_optimizer: single,
        };
        Self {
            cells: vec![
                cell("baseline", 1, lr_ratio, false),
                cell("update ratio", 5, lr_ratio, false),
                cell("lr ratio", 1, lr_ratio / 5.0, false),
                cell("single optimizer", 1, lr_ratio, true),
            ],
            seeds,
        }
    }

    /// Every combination of the given axes.
    pub fn cartesian(update_ratios: &[usize], lr_ratios: &[f64], single: &[bool], seeds: Vec<u64>) -> Self {
        let mut cells = Vec::new();
        for &n in update_ratios {
            for &r in lr_ratios {
                for &s in single {
                    cells.push(SweepCell {
                        label: format!("N={n} lr={r}:1{}", if s { " single" } else { "" }),
                        update_ratio: n,
                        lr_ratio: r,
                        single_optimizer: s,
                    });
                }
            }
        }
        Self { cells, seeds }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: SweepCell,
    /// `(seed, valid WER, valid CER)` at the end of each run.
    pub runs: Vec<(u64, f64, f64)>,
    pub median_wer: f64,
    pub median_cer: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

impl SweepCell {
    pub fn apply(&self, base: &TrainerConfig, seed: u64) -> TrainerConfig {
        TrainerConfig {
            update_ratio: self.update_ratio,
            lr_unsup: base.lr_sup * self.lr_ratio,
            single_optimizer: self.single_optimizer,
            seed,
            ..base.clone()
        }
    }
}

/// Trains every cell for every seed (model initialized from the same seed)
/// and reports final validation error rates. With `out`, each run writes to
/// `out/<cell index>-seed<seed>/`.
pub fn hyperparam_sweep(
    model_cfg: &ModelConfig,
    base: &TrainerConfig,
    grid: &SweepGrid,
    data: &TrainData,
    out: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    if grid.cells.is_empty() || grid.seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one cell and one seed".into()));
    }
    grid.cells
        .iter()
        .enumerate()
        .map(|(ci, cell)| {
            let runs = grid
                .seeds
                .iter()
                .map(|&seed| {
                    let cfg = cell.apply(base, seed);
                    let model = AcousticModel::new(model_cfg.clone(), seed)?;
                    let dir = out.map(|o| o.join(format!("{ci}-seed{seed}")));
                    let outcome = train(model, cfg, data.clone(), dir.as_deref())?;
                    let last = outcome
                        .metrics
                        .iter()
                        .rev()
                        .find_map(|m| match m {
                            super::MetricRecord::Eval(e) if e.split == "valid" => Some(e.clone()),
                            _ => None,
                        })
                        .ok_or_else(|| Error::contract("run finished without an evaluation"))?;
                    log::info!("sweep {} seed {seed}: WER {:.4} CER {:.4}", cell.label, last.wer, last.cer);
                    Ok((seed, last.wer, last.cer))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepRow {
                cell: cell.clone(),
                median_wer: median(runs.iter().map(|r| r.1).collect()),
                median_cer: median(runs.iter().map(|r| r.2).collect()),
                runs,
            })
        })
        .collect()
}

/// Markdown table, one row per cell.
pub fn format_table(rows: &[SweepRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "| Hyperparameter | Updates | LR | Optimizers | valid WER | valid CER |");
    let _ = writeln!(s, "|---|---|---|---|---|---|");
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {}:1 | {}:1 | {} | {:.4} | {:.4} |",
            r.cell.label,
            r.cell.update_ratio,
            r.cell.lr_ratio,
            if r.cell.single_optimizer { "single" } else { "separate" },
            r.median_wer,
            r.median_cer
        );
    }
    s
}
