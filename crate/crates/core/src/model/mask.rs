use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Masked frames of one utterance: the union of spans `[start, start + span)`
/// clipped to the sequence end.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub utterance: String,
    pub num_frames: usize,
    /// Sorted, unique.
    pub indices: Vec<usize>,
    /// Sorted span starts.
    pub starts: Vec<usize>,
    pub span: usize,
    /// Seed of the RNG the plan was drawn from, when drawn by
    /// [`MaskPlan::sample_seeded`].
    pub seed: Option<u64>,
}

impl MaskPlan {
    /// Every frame starts a span with probability `start_p`. If no frame
    /// does, one span is forced at a uniformly random start so at least one
    /// frame is always masked.
    pub fn sample<R: Rng + ?Sized>(
        num_frames: usize,
        start_p: f64,
        span: usize,
        rng: &mut R,
    ) -> Self {
        assert!(num_frames >= 1, "mask plan over zero frames");
        assert!(span >= 1, "mask span must be positive");
        let mut starts: Vec<usize> = (0..num_frames)
            .filter(|_| rng.random::<f64>() < start_p)
            .collect();
        if starts.is_empty() {
            starts.push(rng.random_range(0..num_frames));
        }
        Self::from_starts(num_frames, starts, span)
    }

    pub fn sample_seeded(
        utterance: &str,
        num_frames: usize,
        start_p: f64,
        span: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut plan = Self::sample(num_frames, start_p, span, &mut rng);
        plan.utterance = utterance.to_string();
        plan.seed = Some(seed);
        plan
    }

    /// Builds a plan from explicit span starts.
    pub fn from_starts(num_frames: usize, mut starts: Vec<usize>, span: usize) -> Self {
        starts.sort_unstable();
        starts.dedup();
        let mut masked = vec![false; num_frames];
        for &s in &starts {
            for m in masked.iter_mut().take((s + span).min(num_frames)).skip(s) {
                *m = true;
            }
        }
        let indices = masked
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.then_some(i))
            .collect();
        Self {
            utterance: String::new(),
            num_frames,
            indices,
            starts,
            span,
            seed: None,
        }
    }

    /// A plan with no masked frames.
    pub fn empty(num_frames: usize) -> Self {
        Self {
            utterance: String::new(),
            num_frames,
            indices: Vec::new(),
            starts: Vec::new(),
            span: 1,
            seed: None,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.indices.binary_search(&frame).is_ok()
    }

    pub fn masked_fraction(&self) -> f64 {
        self.indices.len() as f64 / self.num_frames as f64
    }

    /// Checks the plan against a sequence of `frames` frames.
    pub fn validate(&self, frames: usize) -> Result<()> {
        if let Some(bad) = self.indices.iter().find(|i| **i >= frames) {
            return Err(Error::contract(format!(
                "mask index {bad} out of range for {frames} frames"
            )));
        }
        if self.indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract("mask indices not sorted and unique"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_probability_forces_one_span() {
        for seed in 0..50 {
            let plan = MaskPlan::sample_seeded("u", 40, 0.0, 10, seed);
            assert_eq!(plan.starts.len(), 1);
            let s = plan.starts[0];
            assert_eq!(plan.indices, (s..(s + 10).min(40)).collect::<Vec<_>>());
        }
    }

    #[test]
    fn saturation_masks_everything() {
        let plan = MaskPlan::sample_seeded("u", 17, 1.0, 1, 3);
        assert_eq!(plan.indices, (0..17).collect::<Vec<_>>());
    }

    #[test]
    fn overlapping_spans_merge_and_clip() {
        let plan = MaskPlan::from_starts(10, vec![7, 1, 3], 3);
        assert_eq!(plan.indices, vec![1, 2, 3, 4, 5, 7, 8, 9]);
        assert_eq!(plan.starts, vec![1, 3, 7]);
        plan.validate(10).unwrap();
        assert!(plan.validate(9).is_err());
    }
}
