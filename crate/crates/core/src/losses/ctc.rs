//! Connectionist temporal classification: log-space alpha/beta recursions
//! over the blank-interleaved target, plus an exhaustive path-enumeration
//! oracle for small instances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::kernels::{log_add, logsumexp};
use crate::tensor::{Tensor, Var};

/// Largest number of frame paths [`ctc_bruteforce`] will enumerate.
pub const BRUTEFORCE_LIMIT: f64 = 1e7;

/// Token sequence for one labeled utterance, without blanks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CtcTarget {
    pub utterance: String,
    pub tokens: Vec<usize>,
}

impl CtcTarget {
    /// Validates ids against a vocabulary of `vocab` entries whose blank is
    /// `blank`.
    pub fn new(utterance: &str, tokens: Vec<usize>, vocab: usize, blank: usize) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::contract(format!("empty CTC target for {utterance}")));
        }
        if let Some(bad) = tokens.iter().find(|t| **t >= vocab || **t == blank) {
            return Err(Error::contract(format!(
                "token {bad} invalid for vocab {vocab} with blank {blank}"
            )));
        }
        Ok(Self {
            utterance: utterance.to_string(),
            tokens,
        })
    }

    /// Minimum number of frames that can emit this target.
    pub fn min_frames(&self) -> usize {
        min_frames(&self.tokens)
    }
}

/// Label count plus one separating blank per adjacent repeat.
pub fn min_frames(tokens: &[usize]) -> usize {
    tokens.len() + tokens.windows(2).filter(|w| w[0] == w[1]).count()
}

fn expand(tokens: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * tokens.len() + 1);
    ext.push(blank);
    for &t in tokens {
        ext.push(t);
        ext.push(blank);
    }
    ext
}

fn check(logprobs: &Tensor, tokens: &[usize], blank: usize) -> Result<(usize, usize)> {
    let (frames, vocab) = logprobs.dims2()?;
    if blank >= vocab {
        return Err(Error::contract(format!("blank {blank} outside vocab {vocab}")));
    }
    if let Some(bad) = tokens.iter().find(|t| **t >= vocab || **t == blank) {
        return Err(Error::contract(format!("invalid target token {bad}")));
    }
    let needed = min_frames(tokens);
    if frames < needed || frames == 0 {
        return Err(Error::AlignmentInfeasible { frames, needed });
    }
    Ok((frames, vocab))
}

/// Whether the expanded state `s` may be entered directly from `s - 2`.
fn can_skip(ext: &[usize], s: usize, blank: usize) -> bool {
    s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]
}

fn alphas(lp: &Tensor, ext: &[usize], blank: usize) -> Vec<f64> {
    let (frames, _) = lp.dims2().expect("checked");
    let s_len = ext.len();
    let mut a = vec![f64::NEG_INFINITY; frames * s_len];
    a[0] = lp.at2(0, ext[0]);
    if s_len > 1 {
        a[1] = lp.at2(0, ext[1]);
    }
    for t in 1..frames {
        for s in 0..s_len {
            let prev = &a[(t - 1) * s_len..t * s_len];
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if can_skip(ext, s, blank) {
                acc = log_add(acc, prev[s - 2]);
            }
            a[t * s_len + s] = acc + lp.at2(t, ext[s]);
        }
    }
    a
}

fn betas(lp: &Tensor, ext: &[usize], blank: usize) -> Vec<f64> {
    let (frames, _) = lp.dims2().expect("checked");
    let s_len = ext.len();
    let mut b = vec![f64::NEG_INFINITY; frames * s_len];
    let last = frames - 1;
    b[last * s_len + s_len - 1] = lp.at2(last, ext[s_len - 1]);
    if s_len > 1 {
        b[last * s_len + s_len - 2] = lp.at2(last, ext[s_len - 2]);
    }
    for t in (0..last).rev() {
        for s in 0..s_len {
            let next = &b[(t + 1) * s_len..(t + 2) * s_len];
            let mut acc = next[s];
            if s + 1 < s_len {
                acc = log_add(acc, next[s + 1]);
            }
            if s + 2 < s_len && can_skip(ext, s + 2, blank) {
                acc = log_add(acc, next[s + 2]);
            }
            b[t * s_len + s] = acc + lp.at2(t, ext[s]);
        }
    }
    b
}

fn log_likelihood(alpha: &[f64], frames: usize, s_len: usize) -> f64 {
    let row = &alpha[(frames - 1) * s_len..frames * s_len];
    if s_len == 1 {
        row[0]
    } else {
        log_add(row[s_len - 1], row[s_len - 2])
    }
}

/// Negative log-likelihood `-ln Σ_{π: B(π)=y} Π_t p(π_t)` by the forward
/// recursion.
pub fn ctc_forward(logprobs: &Tensor, tokens: &[usize], blank: usize) -> Result<f64> {
    let (frames, _) = check(logprobs, tokens, blank)?;
    let ext = expand(tokens, blank);
    let a = alphas(logprobs, &ext, blank);
    let ll = log_likelihood(&a, frames, ext.len());
    if ll == f64::NEG_INFINITY {
        return Err(Error::AlignmentInfeasible {
            frames,
            needed: min_frames(tokens),
        });
    }
    Ok(-ll)
}

/// Gradient of [`ctc_forward`] with respect to every entry of `logprobs`.
pub fn ctc_grad(logprobs: &Tensor, tokens: &[usize], blank: usize) -> Result<Tensor> {
    let (frames, vocab) = check(logprobs, tokens, blank)?;
    let ext = expand(tokens, blank);
    let s_len = ext.len();
    let a = alphas(logprobs, &ext, blank);
    let b = betas(logprobs, &ext, blank);
    let ll = log_likelihood(&a, frames, s_len);
    let mut grad = Tensor::zeros(&[frames, vocab]);
    let mut per_token = vec![f64::NEG_INFINITY; vocab];
    for t in 0..frames {
        per_token.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
        for s in 0..s_len {
            let k = ext[s];
            per_token[k] = log_add(per_token[k], a[t * s_len + s] + b[t * s_len + s]);
        }
        for (k, lse) in per_token.iter().enumerate() {
            if *lse > f64::NEG_INFINITY {
                grad.data_mut()[t * vocab + k] = -(lse - logprobs.at2(t, k) - ll).exp();
            }
        }
    }
    Ok(grad)
}

/// Differentiable CTC loss for one utterance.
pub fn ctc_loss<'g>(logprobs: Var<'g>, target: &CtcTarget, blank: usize) -> Result<Var<'g>> {
    logprobs.ctc(&target.tokens, blank)
}

/// Standard CTC collapse: merge adjacent repeats, then drop blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != blank {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

/// Exhaustive oracle: enumerates all `V^F` frame paths and sums those that
/// collapse to `tokens`. Returns `+∞` when no path does.
pub fn ctc_bruteforce(logprobs: &Tensor, tokens: &[usize], blank: usize) -> Result<f64> {
    let (frames, vocab) = logprobs.dims2()?;
    let paths = (vocab as f64).powi(frames as i32);
    if paths > BRUTEFORCE_LIMIT {
        return Err(Error::OracleTooLarge {
            paths,
            limit: BRUTEFORCE_LIMIT,
        });
    }
    let mut path = vec![0usize; frames];
    let mut matching = Vec::new();
    loop {
        if collapse(&path, blank) == tokens {
            matching.push(path.iter().enumerate().map(|(t, &k)| logprobs.at2(t, k)).sum());
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == frames {
                let lse = logsumexp(&matching);
                return Ok(-lse);
            }
            path[pos] += 1;
            if path[pos] < vocab {
                break;
            }
            path[pos] = 0;
            pos += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(frames: usize, vocab: usize) -> Tensor {
        Tensor::full(&[frames, vocab], -(vocab as f64).ln())
    }

    #[test]
    fn single_frame_single_label() {
        let lp = Tensor::matrix(1, 3, vec![-0.2, -1.9, -3.0]).unwrap();
        assert!((ctc_forward(&lp, &[0], 2).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn two_frames_uniform_is_log3() {
        // paths {aa, a_, _a} each with probability 1/9
        let lp = uniform(2, 3);
        let loss = ctc_forward(&lp, &[0], 2).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        assert!((ctc_bruteforce(&lp, &[0], 2).unwrap() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn repeat_needs_separating_blank() {
        // F=3, "aa": only a_a is valid
        let lp = uniform(3, 3);
        let expected = 27f64.ln();
        assert!((ctc_bruteforce(&lp, &[0, 0], 2).unwrap() - expected).abs() < 1e-12);
        assert!((ctc_forward(&lp, &[0, 0], 2).unwrap() - expected).abs() < 1e-12);
        assert!(matches!(
            ctc_forward(&uniform(2, 3), &[0, 0], 2),
            Err(Error::AlignmentInfeasible { frames: 2, needed: 3 })
        ));
    }

    #[test]
    fn bruteforce_reports_infinity_when_unreachable() {
        let lp = uniform(2, 3);
        assert_eq!(ctc_bruteforce(&lp, &[0, 0], 2).unwrap(), f64::INFINITY);
    }

    #[test]
    fn bruteforce_rejects_large_instances() {
        let lp = uniform(12, 5);
        assert!(matches!(
            ctc_bruteforce(&lp, &[0], 4),
            Err(Error::OracleTooLarge { .. })
        ));
    }

    #[test]
    fn target_validation() {
        assert!(CtcTarget::new("u", vec![], 29, 28).is_err());
        assert!(CtcTarget::new("u", vec![28], 29, 28).is_err());
        assert!(CtcTarget::new("u", vec![29], 29, 28).is_err());
        let t = CtcTarget::new("u", vec![1, 1, 2], 29, 28).unwrap();
        assert_eq!(t.min_frames(), 4);
    }

    #[test]
    fn collapse_rules() {
        assert_eq!(collapse(&[0, 0, 2, 1], 2), vec![0, 1]);
        assert_eq!(collapse(&[0, 2, 0], 2), vec![0, 0]);
        assert!(collapse(&[2, 2], 2).is_empty());
    }
}
