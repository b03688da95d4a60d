use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{beam_decode, cer, greedy_decode, wer, BeamConfig, ErrorRate, Fusion, MergeMode, NgramLm, Smoothing};
use crate::data::{normalize_samples, Corpus, Tokenizer};
use crate::error::{Error, Result};
use crate::model::AcousticModel;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    /// 0 selects best-path decoding.
    pub beam_size: usize,
    pub merge: MergeMode,
    pub alpha: f64,
    pub beta: f64,
    pub lm_order: usize,
    pub smoothing: Smoothing,
    /// Grid searched by [`tune_fusion`]; 0 is always added to both axes.
    pub alpha_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_size: 0,
            merge: MergeMode::LogSumExp,
            alpha: 0.0,
            beta: 0.0,
            lm_order: 4,
            smoothing: Smoothing::default(),
            alpha_grid: vec![0.0, 0.25, 0.5, 1.0, 2.0],
            beta_grid: vec![-1.0, 0.0, 1.0, 2.0],
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lm_order < 1 {
            return Err(Error::Config("lm_order must be at least 1".into()));
        }
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::Config("alpha and beta must be finite".into()));
        }
        Ok(())
    }

    fn decode(&self, logprobs: &Tensor, blank: usize, lm: Option<&NgramLm>) -> Result<Vec<usize>> {
        if self.beam_size == 0 {
            return greedy_decode(logprobs, blank);
        }
        let cfg = BeamConfig {
            beam_size: self.beam_size,
            merge: self.merge,
        };
        let fusion = lm.map(|lm| Fusion {
            lm,
            alpha: self.alpha,
            beta: self.beta,
        });
        beam_decode(logprobs, blank, &cfg, fusion.as_ref())
    }
}

/// Model output for one reference transcript.
#[derive(Clone, Debug)]
pub struct EvalItem {
    pub id: String,
    pub reference: String,
    pub logprobs: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UttRecord {
    pub utt_id: String,
    #[serde(rename = "ref")]
    pub reference: String,
    #[serde(rename = "hyp")]
    pub hypothesis: String,
    pub wer: f64,
    pub cer: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub utterances: usize,
    pub wer: f64,
    pub cer: f64,
    pub word_errors: usize,
    pub words: usize,
    pub char_errors: usize,
    pub chars: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub records: Vec<UttRecord>,
    pub summary: EvalSummary,
}

impl EvalReport {
    /// One JSON line per utterance followed by a `{"summary": ...}` line.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in &self.records {
            writeln!(f, "{}", serde_json::to_string(r)?)?;
        }
        writeln!(
            f,
            "{}",
            serde_json::json!({ "summary": &self.summary })
        )?;
        f.flush()?;
        Ok(())
    }
}

/// Decodes precomputed log-probabilities and scores them. Utterances are
/// decoded in parallel; results keep input order.
pub fn evaluate_logprobs(
    items: &[EvalItem],
    blank: usize,
    cfg: &DecodeConfig,
    lm: Option<&NgramLm>,
) -> Result<EvalReport> {
    let tok = Tokenizer::new();
    let scored: Vec<(UttRecord, ErrorRate, ErrorRate)> = items
        .par_iter()
        .map(|it| {
            let hyp = tok.decode_lossy(&cfg.decode(&it.logprobs, blank, lm)?);
            let w = wer(&it.reference, &hyp)?;
            let c = cer(&it.reference, &hyp)?;
            Ok((
                UttRecord {
                    utt_id: it.id.clone(),
                    reference: it.reference.clone(),
                    hypothesis: hyp,
                    wer: w.rate,
                    cer: c.rate,
                },
                w,
                c,
            ))
        })
        .collect::<Result<_>>()?;
    let w = ErrorRate::pooled(scored.iter().map(|s| &s.1))?;
    let c = ErrorRate::pooled(scored.iter().map(|s| &s.2))?;
    Ok(EvalReport {
        summary: EvalSummary {
            utterances: scored.len(),
            wer: w.rate,
            cer: c.rate,
            word_errors: w.errors,
            words: w.ref_len,
            char_errors: c.errors,
            chars: c.ref_len,
        },
        records: scored.into_iter().map(|s| s.0).collect(),
    })
}

/// Eval-mode log-probabilities for every labeled utterance of `corpus`.
pub fn infer_corpus(model: &AcousticModel, corpus: &Corpus) -> Result<Vec<EvalItem>> {
    corpus
        .utterances
        .par_iter()
        .map(|u| {
            let reference = u
                .transcript
                .clone()
                .ok_or_else(|| Error::contract(format!("utterance {} has no transcript", u.id)))?;
            Ok(EvalItem {
                id: u.id.clone(),
                reference,
                logprobs: model.infer(&normalize_samples(&u.samples)?)?,
            })
        })
        .collect()
}

pub fn evaluate(
    model: &AcousticModel,
    corpus: &Corpus,
    cfg: &DecodeConfig,
    lm: Option<&NgramLm>,
) -> Result<EvalReport> {
    let items = infer_corpus(model, corpus)?;
    evaluate_logprobs(&items, model.config().blank(), cfg, lm)
}

/// Text of one raw (unnormalized) recording.
pub fn transcribe(
    model: &AcousticModel,
    samples: &[f64],
    cfg: &DecodeConfig,
    lm: Option<&NgramLm>,
) -> Result<String> {
    let lp = model.infer(&normalize_samples(samples)?)?;
    let ids = cfg.decode(&lp, model.config().blank(), lm)?;
    Ok(Tokenizer::new().decode_lossy(&ids))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub alpha: f64,
    pub beta: f64,
    pub wer: f64,
    /// `(alpha, beta, wer)` per grid cell.
    pub grid: Vec<(f64, f64, f64)>,
}

/// Grid search of the fusion weights by corpus WER. `(0, 0)` is evaluated
/// first and only displaced by a strictly lower WER.
pub fn tune_fusion(items: &[EvalItem], blank: usize, cfg: &DecodeConfig, lm: &NgramLm) -> Result<TuneResult> {
    if cfg.beam_size == 0 {
        return Err(Error::Config("fusion tuning needs beam_size >= 1".into()));
    }
    let axis = |g: &[f64]| {
        let mut v = vec![0.0];
        v.extend(g.iter().copied().filter(|x| *x != 0.0));
        v
    };
    let mut grid = Vec::new();
    let mut best: Option<(f64, f64, f64)> = None;
    for &alpha in &axis(&cfg.alpha_grid) {
        for &beta in &axis(&cfg.beta_grid) {
            let c = DecodeConfig {
                alpha,
                beta,
                ..cfg.clone()
            };
            let w = evaluate_logprobs(items, blank, &c, Some(lm))?.summary.wer;
            grid.push((alpha, beta, w));
            if best.is_none_or(|b| w < b.2) {
                best = Some((alpha, beta, w));
            }
        }
    }
    let (alpha, beta, wer) = best.expect("grid is never empty");
    Ok(TuneResult {
        alpha,
        beta,
        wer,
        grid,
    })
}
