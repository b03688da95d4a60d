use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorRate {
    pub errors: usize,
    pub ref_len: usize,
    pub rate: f64,
}

impl ErrorRate {
    fn new(errors: usize, ref_len: usize) -> Result<Self> {
        if ref_len == 0 {
            return Err(Error::UndefinedRate);
        }
        Ok(Self {
            errors,
            ref_len,
            rate: errors as f64 / ref_len as f64,
        })
    }

    /// Pools error counts (corpus-level rate).
    pub fn pooled<'a>(parts: impl IntoIterator<Item = &'a ErrorRate>) -> Result<Self> {
        let (e, n) = parts
            .into_iter()
            .fold((0, 0), |(e, n), r| (e + r.errors, n + r.ref_len));
        Self::new(e, n)
    }
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn error_rate<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<ErrorRate> {
    ErrorRate::new(edit_distance(reference, hypothesis), reference.len())
}

/// Word error rate over whitespace-separated words.
pub fn wer(reference: &str, hypothesis: &str) -> Result<ErrorRate> {
    let r: Vec<&str> = reference.split_whitespace().collect();
    let h: Vec<&str> = hypothesis.split_whitespace().collect();
    error_rate(&r, &h)
}

/// Character error rate over the whitespace-normalized text, spaces included.
pub fn cer(reference: &str, hypothesis: &str) -> Result<ErrorRate> {
    let norm = |s: &str| -> Vec<char> { s.split_whitespace().collect::<Vec<_>>().join(" ").chars().collect() };
    error_rate(&norm(reference), &norm(hypothesis))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(wer("a b c", "a b c").unwrap().rate, 0.0);
        assert!((wer("a b c", "a x c").unwrap().rate - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(wer("a", "a b").unwrap().rate, 1.0);
        assert!(matches!(wer("", "a"), Err(Error::UndefinedRate)));
        assert_eq!(cer("ab  c", "ab c").unwrap().errors, 0);
        assert_eq!(cer("abc", "abd").unwrap().errors, 1);
    }

    #[test]
    fn pooled_rate_weights_by_length() {
        let a = wer("a b c d", "a b c d").unwrap();
        let b = wer("x", "y").unwrap();
        assert_eq!(ErrorRate::pooled([&a, &b]).unwrap().rate, 0.2);
    }
}
