//! CTC decoding (best path and prefix beam search with word-level n-gram
//! shallow fusion) and error-rate evaluation.

mod eval;
mod lm;
mod metrics;

pub use eval::{
    infer_corpus,
    evaluate, evaluate_logprobs, transcribe, tune_fusion, DecodeConfig, EvalItem, EvalReport,
    EvalSummary, TuneResult, UttRecord,
};
pub use lm::{NgramLm, Smoothing, BOS, UNK};
pub use metrics::{cer, edit_distance, error_rate, wer, ErrorRate};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::Tokenizer;
use crate::error::{Error, Result};
use crate::losses::collapse;
use crate::tensor::kernels::log_add;
use crate::tensor::Tensor;

/// Upper bound on paths enumerated by [`exhaustive_prefix_scores`].
pub const EXHAUSTIVE_LIMIT: f64 = 1e7;

/// Best path: per-frame argmax, merge repeats, drop blanks.
pub fn greedy_decode(logprobs: &Tensor, blank: usize) -> Result<Vec<usize>> {
    let (_, v) = logprobs.dims2()?;
    if blank >= v {
        return Err(Error::contract(format!("blank {blank} outside vocabulary of {v}")));
    }
    Ok(collapse(&logprobs.argmax_rows()?, blank))
}

/// How hypotheses reaching the same prefix are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeMode {
    /// Sum of path probabilities (prefix probability).
    #[default]
    LogSumExp,
    /// Best single path (Viterbi). With one beam this reproduces best-path
    /// decoding exactly.
    Max,
}

impl MergeMode {
    fn combine(self, a: f64, b: f64) -> f64 {
        match self {
            MergeMode::LogSumExp => log_add(a, b),
            MergeMode::Max => a.max(b),
        }
    }
}

/// Word-level LM shallow fusion: at every completed word the hypothesis
/// gains `alpha · ln p_LM(word | previous words) + beta`.
#[derive(Clone, Copy, Debug)]
pub struct Fusion<'a> {
    pub lm: &'a NgramLm,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Clone, Debug)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_pb: f64,
    pub log_pnb: f64,
    /// Accumulated fusion bonus.
    pub lm_score: f64,
    /// Acoustic plus fusion score; after the last frame this includes the
    /// bonus for a trailing unfinished word.
    pub score: f64,
    history: Vec<u32>,
    partial: String,
}

impl Hypothesis {
    fn root() -> Self {
        Self {
            tokens: Vec::new(),
            log_pb: 0.0,
            log_pnb: f64::NEG_INFINITY,
            lm_score: 0.0,
            score: 0.0,
            history: Vec::new(),
            partial: String::new(),
        }
    }

    pub fn acoustic(&self, merge: MergeMode) -> f64 {
        merge.combine(self.log_pb, self.log_pnb)
    }

    fn extended(&self, token: usize, fusion: Option<&Fusion<'_>>) -> Self {
        let mut tokens = self.tokens.clone();
        tokens.push(token);
        let mut next = Self {
            tokens,
            log_pb: f64::NEG_INFINITY,
            log_pnb: f64::NEG_INFINITY,
            lm_score: self.lm_score,
            score: f64::NEG_INFINITY,
            history: Vec::new(),
            partial: String::new(),
        };
        if let Some(f) = fusion {
            next.history = self.history.clone();
            if token == Tokenizer::WORD_BOUNDARY {
                if !self.partial.is_empty() {
                    next.lm_score += f.word_bonus(&self.history, &self.partial);
                    next.history.push(f.lm.word_id(&self.partial));
                }
            } else if let Some(c) = Tokenizer::token_char(token) {
                next.partial = format!("{}{c}", self.partial);
            }
        }
        next
    }
}

impl Fusion<'_> {
    fn word_bonus(&self, history: &[u32], word: &str) -> f64 {
        if self.alpha == 0.0 {
            return self.beta;
        }
        self.alpha * self.lm.log_prob_ids(history, self.lm.word_id(word)) + self.beta
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub merge: MergeMode,
}

impl BeamConfig {
    pub fn new(beam_size: usize) -> Self {
        Self {
            beam_size,
            merge: MergeMode::default(),
        }
    }
}

/// Prefix beam search over the CTC lattice. Returns the final beam, best
/// first; ties are broken by token sequence so the result is deterministic.
pub fn beam_search(
    logprobs: &Tensor,
    blank: usize,
    cfg: &BeamConfig,
    fusion: Option<&Fusion<'_>>,
) -> Result<Vec<Hypothesis>> {
    if cfg.beam_size < 1 {
        return Err(Error::Config("beam_size must be at least 1".into()));
    }
    let (frames, v) = logprobs.dims2()?;
    if blank >= v {
        return Err(Error::contract(format!("blank {blank} outside vocabulary of {v}")));
    }
    let merge = cfg.merge;
    let mut beam = vec![Hypothesis::root()];
    for t in 0..frames {
        let row = logprobs.row(t);
        let mut next: Vec<Hypothesis> = Vec::new();
        let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut slot = |h: &Hypothesis, token: Option<usize>, next: &mut Vec<Hypothesis>| -> usize {
            let key = match token {
                None => h.tokens.clone(),
                Some(c) => {
                    let mut k = h.tokens.clone();
                    k.push(c);
                    k
                }
            };
            *index.entry(key).or_insert_with(|| {
                let fresh = match token {
                    None => Hypothesis {
                        log_pb: f64::NEG_INFINITY,
                        log_pnb: f64::NEG_INFINITY,
                        ..h.clone()
                    },
                    Some(c) => h.extended(c, fusion),
                };
                next.push(fresh);
                next.len() - 1
            })
        };
        for h in &beam {
            let total = h.acoustic(merge);
            // stay on the same prefix through a blank
            let i = slot(h, None, &mut next);
            next[i].log_pb = merge.combine(next[i].log_pb, total + row[blank]);
            let last = h.tokens.last().copied();
            for (c, &lp) in row.iter().enumerate() {
                if c == blank {
                    continue;
                }
                if Some(c) == last {
                    // repeated symbol without a blank collapses onto the prefix
                    let i = slot(h, None, &mut next);
                    next[i].log_pnb = merge.combine(next[i].log_pnb, h.log_pnb + lp);
                    let j = slot(h, Some(c), &mut next);
                    next[j].log_pnb = merge.combine(next[j].log_pnb, h.log_pb + lp);
                } else {
                    let j = slot(h, Some(c), &mut next);
                    next[j].log_pnb = merge.combine(next[j].log_pnb, total + lp);
                }
            }
        }
        for h in &mut next {
            h.score = h.acoustic(merge) + h.lm_score;
        }
        // prefixes only reachable through a zero-probability branch
        next.retain(|h| h.score > f64::NEG_INFINITY);
        rank(&mut next);
        next.truncate(cfg.beam_size);
        beam = next;
    }
    if let Some(f) = fusion {
        for h in &mut beam {
            if !h.partial.is_empty() {
                h.score += f.word_bonus(&h.history, &h.partial);
            }
        }
    }
    rank(&mut beam);
    Ok(beam)
}

fn rank(hyps: &mut [Hypothesis]) {
    hyps.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens)));
}

/// Best token sequence of [`beam_search`].
pub fn beam_decode(
    logprobs: &Tensor,
    blank: usize,
    cfg: &BeamConfig,
    fusion: Option<&Fusion<'_>>,
) -> Result<Vec<usize>> {
    Ok(beam_search(logprobs, blank, cfg, fusion)?
        .into_iter()
        .next()
        .map(|h| h.tokens)
        .unwrap_or_default())
}

/// Exact log-probability of every reachable collapsed prefix, by enumerating
/// all `V^F` frame paths. Sorted best first.
pub fn exhaustive_prefix_scores(logprobs: &Tensor, blank: usize) -> Result<Vec<(Vec<usize>, f64)>> {
    let (frames, v) = logprobs.dims2()?;
    let paths = (v as f64).powi(frames as i32);
    if paths > EXHAUSTIVE_LIMIT {
        return Err(Error::OracleTooLarge {
            paths,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let mut scores: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut path = vec![0usize; frames];
    for n in 0..paths as usize {
        let mut rest = n;
        let mut lp = 0.0;
        for (t, p) in path.iter_mut().enumerate() {
            *p = rest % v;
            rest /= v;
            lp += logprobs.at2(t, *p);
        }
        let e = scores
            .entry(collapse(&path, blank))
            .or_insert(f64::NEG_INFINITY);
        *e = log_add(*e, lp);
    }
    let mut out: Vec<_> = scores.into_iter().collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn lp(rows: &[&[f64]]) -> Tensor {
        let t = Tensor::from_rows(&rows.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect::<Vec<_>>())
            .unwrap();
        t
    }

    fn random_logprobs(frames: usize, v: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let g = crate::tensor::Graph::new();
        let x = g.constant(Tensor::randn(&[frames, v], 2.0, rng));
        let out = x.log_softmax(1).unwrap().value().clone();
        out
    }

    #[test]
    fn greedy_examples() {
        // vocabulary a=0, b=1, blank=2
        let m = lp(&[&[0.8, 0.1, 0.1], &[0.8, 0.1, 0.1], &[0.1, 0.1, 0.8], &[0.1, 0.8, 0.1]]);
        assert_eq!(greedy_decode(&m, 2).unwrap(), vec![0, 1]);
        let m = lp(&[&[0.1, 0.1, 0.8], &[0.1, 0.1, 0.8]]);
        assert!(greedy_decode(&m, 2).unwrap().is_empty());
        let m = lp(&[&[0.8, 0.1, 0.1], &[0.1, 0.1, 0.8], &[0.8, 0.1, 0.1]]);
        assert_eq!(greedy_decode(&m, 2).unwrap(), vec![0, 0]);
    }

    #[test]
    fn max_merge_beam_one_is_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = BeamConfig {
            beam_size: 1,
            merge: MergeMode::Max,
        };
        for _ in 0..100 {
            let m = random_logprobs(12, 5, &mut rng);
            assert_eq!(beam_decode(&m, 4, &cfg, None).unwrap(), greedy_decode(&m, 4).unwrap());
        }
    }

    #[test]
    fn summed_merge_at_beam_one_is_not_best_path() {
        // prefix sums can outweigh the single best path, so the default merge
        // does not reduce to best-path decoding at beam 1
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = BeamConfig::new(1);
        let differing = (0..500)
            .filter(|_| {
                let m = random_logprobs(6, 3, &mut rng);
                beam_decode(&m, 2, &cfg, None).unwrap() != greedy_decode(&m, 2).unwrap()
            })
            .count();
        assert!(differing > 0);
    }

    #[test]
    fn unpruned_beam_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..30 {
            let m = random_logprobs(5, 4, &mut rng);
            let oracle = exhaustive_prefix_scores(&m, 3).unwrap();
            let beam = beam_search(&m, 3, &BeamConfig::new(10_000), None).unwrap();
            assert_eq!(beam[0].tokens, oracle[0].0);
            assert!((beam[0].score - oracle[0].1).abs() < 1e-10);
            assert_eq!(beam.len(), oracle.len());
            let mass: f64 = beam.iter().map(|h| h.score.exp()).sum();
            assert!((mass - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fusion_with_zero_weights_is_inert() {
        let lm = NgramLm::train(&["ab ba", "ab ab"], 2, Smoothing::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fusion = Fusion {
            lm: &lm,
            alpha: 0.0,
            beta: 0.0,
        };
        for _ in 0..20 {
            let m = random_logprobs(10, Tokenizer::VOCAB, &mut rng);
            let cfg = BeamConfig::new(4);
            assert_eq!(
                beam_decode(&m, Tokenizer::BLANK, &cfg, Some(&fusion)).unwrap(),
                beam_decode(&m, Tokenizer::BLANK, &cfg, None).unwrap()
            );
        }
    }

    #[test]
    fn zero_beam_is_rejected() {
        let m = lp(&[&[0.5, 0.5]]);
        assert!(matches!(
            beam_search(&m, 1, &BeamConfig::new(0), None),
            Err(Error::Config(_))
        ));
    }
}
