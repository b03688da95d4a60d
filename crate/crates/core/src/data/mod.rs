//! Corpora, tokenization, normalization, duration filtering, length-budget
//! batching and the feature-masking augmentation.

mod batching;
mod corpus;
mod synth;
mod tokenizer;

pub use batching::{plan_batches, BatchPlan, BatchStream, StreamPosition};
pub use corpus::{Corpus, Utterance, CORPUS_VERSION};
pub use synth::{generate_corpus, SynthSpec};
pub use tokenizer::Tokenizer;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{AcousticModel, MaskPlan};
use crate::tensor::{Graph, Var};

/// Variance below which a signal counts as constant.
pub const NORM_VAR_EPS: f64 = 1e-8;

/// Zero mean, unit variance over time. Constant signals map to zeros.
pub fn normalize(u: &Utterance) -> Result<Utterance> {
    Ok(Utterance {
        samples: normalize_samples(&u.samples)?,
        ..u.clone()
    })
}

pub fn normalize_samples(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::contract("cannot normalize an empty signal"));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var < NORM_VAR_EPS {
        log::debug!("normalizing a constant signal to zeros");
        return Ok(vec![0.0; x.len()]);
    }
    let inv = 1.0 / var.sqrt();
    Ok(x.iter().map(|v| (v - mean) * inv).collect())
}

/// Keeps utterances with `min_s ≤ duration ≤ max_s`.
pub fn filter_by_duration(corpus: &Corpus, min_s: f64, max_s: f64) -> Result<Corpus> {
    if min_s > max_s {
        return Err(Error::Config(format!(
            "duration filter min {min_s} s exceeds max {max_s} s"
        )));
    }
    let kept: Vec<Utterance> = corpus
        .utterances
        .iter()
        .filter(|u| {
            let d = u.duration();
            d >= min_s && d <= max_s
        })
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "no utterance lasts between {min_s} s and {max_s} s"
        )));
    }
    Ok(Corpus::new(corpus.sample_rate, kept))
}

/// Masking parameters of the feature-masking augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentMask {
    pub start_p: f64,
    pub span: usize,
}

/// Augmentation for supervised steps: draws a [`MaskPlan`] exactly as the
/// contrastive path does and overwrites those frames with the mask embedding.
/// Identity (and no RNG use) when `train` is false.
pub fn specaugment_mask<'g, R: Rng + ?Sized>(
    model: &AcousticModel,
    g: &'g Graph,
    z: Var<'g>,
    mask: AugmentMask,
    train: bool,
    rng: &mut R,
) -> Result<(Var<'g>, Option<MaskPlan>)> {
    if !train {
        return Ok((z, None));
    }
    let frames = z.shape()[0];
    let plan = MaskPlan::sample(frames, mask.start_p, mask.span, rng);
    let masked = model.apply_mask(g, z, &plan)?;
    Ok((masked, Some(plan)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_definition() {
        let x: Vec<f64> = (0..500).map(|i| ((i * 37) % 101) as f64 * 0.3 - 4.0).collect();
        let y = normalize_samples(&x).unwrap();
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let std = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-12);
        assert!((std - 1.0).abs() < 1e-9);
        let again = normalize_samples(&y).unwrap();
        assert!(again.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn normalize_affine_and_constant() {
        let x = [0.3, -1.2, 2.5, 0.0, 0.7];
        let ax: Vec<f64> = x.iter().map(|v| 3.7 * v - 11.0).collect();
        let a = normalize_samples(&x).unwrap();
        let b = normalize_samples(&ax).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-12));
        assert_eq!(normalize_samples(&[4.2; 9]).unwrap(), vec![0.0; 9]);
        assert!(normalize_samples(&[]).is_err());
    }

    fn utt(id: &str, seconds: f64) -> Utterance {
        Utterance {
            id: id.into(),
            samples: vec![0.1; (seconds * 100.0) as usize],
            sample_rate: 100,
            transcript: None,
        }
    }

    #[test]
    fn duration_filter() {
        let c = Corpus::new(100, vec![utt("a", 1.0), utt("b", 5.0), utt("c", 40.0)]);
        let f = filter_by_duration(&c, 2.0, 33.0).unwrap();
        assert_eq!(f.utterances.iter().map(|u| u.id.as_str()).collect::<Vec<_>>(), ["b"]);
        assert_eq!(filter_by_duration(&c, 0.5, 50.0).unwrap(), c);
        assert!(matches!(filter_by_duration(&c, 3.0, 2.0), Err(Error::Config(_))));
        assert!(matches!(
            filter_by_duration(&c, 100.0, 200.0),
            Err(Error::EmptyCorpus(_))
        ));
    }
}
