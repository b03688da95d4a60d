use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::StreamPosition;

/// Named random streams of a training run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Masking = 1,
    Negatives = 2,
    LayerDrop = 3,
    Dropout = 4,
    Augmentation = 5,
    LabeledOrder = 6,
    UnlabeledOrder = 7,
    Eval = 8,
}

/// Independent generator for `(seed, stream, draw, item)`. A "draw" is one
/// training step's use of the stream; `item` separates utterances in a batch
/// so they can be processed in any order.
pub fn stream_rng(seed: u64, stream: Stream, draw: u64, item: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"joint-asr stream");
    h.update(seed.to_le_bytes());
    h.update((stream as u64).to_le_bytes());
    h.update(draw.to_le_bytes());
    h.update(item.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// 64-bit seed for streams that hold their own generator.
pub fn stream_seed(seed: u64, stream: Stream) -> u64 {
    use rand::RngCore;
    stream_rng(seed, stream, 0, 0).next_u64()
}

/// Draws consumed so far from each per-step stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngCounters {
    pub masking: u64,
    pub negatives: u64,
    pub layer_drop: u64,
    pub dropout: u64,
    pub augmentation: u64,
}

/// Step kind recorded in the trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "U")]
    Unsup,
    #[serde(rename = "S")]
    Sup,
}

impl Phase {
    pub fn symbol(self) -> char {
        match self {
            Phase::Unsup => 'U',
            Phase::Sup => 'S',
        }
    }
}

/// Everything besides parameters and optimizer moments needed to continue a
/// run exactly.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub global_step: u64,
    pub unsup_steps: u64,
    pub sup_steps: u64,
    pub rng: RngCounters,
    pub labeled_stream: Option<StreamPosition>,
    pub unlabeled_stream: Option<StreamPosition>,
    pub best_wer: Option<f64>,
    pub best_step: Option<u64>,
    pub evals_since_best: usize,
    pub stopped_early: bool,
    /// One symbol per update, `U` or `S`.
    pub trace: String,
    pub skipped_unsup_utts: u64,
    pub skipped_sup_utts: u64,
}

/// True when `trace` is a prefix of `(U^n S)*`, or of `S*` when there is no
/// unlabeled data.
pub fn trace_matches(trace: &str, n: usize, has_unlabeled: bool) -> bool {
    trace.chars().enumerate().all(|(i, c)| {
        let expected = if has_unlabeled && i % (n + 1) < n { 'U' } else { 'S' };
        c == expected
    })
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a: u64 = stream_rng(1, Stream::Masking, 0, 0).random();
        assert_eq!(a, stream_rng(1, Stream::Masking, 0, 0).random::<u64>());
        assert_ne!(a, stream_rng(1, Stream::Negatives, 0, 0).random::<u64>());
        assert_ne!(a, stream_rng(1, Stream::Masking, 1, 0).random::<u64>());
        assert_ne!(a, stream_rng(1, Stream::Masking, 0, 1).random::<u64>());
        assert_ne!(a, stream_rng(2, Stream::Masking, 0, 0).random::<u64>());
    }

    #[test]
    fn trace_pattern() {
        assert!(trace_matches("USUSU", 1, true));
        assert!(trace_matches("UUUUUSUU", 5, true));
        assert!(!trace_matches("USS", 1, true));
        assert!(trace_matches("SSS", 3, false));
        assert!(!trace_matches("U", 3, false));
    }
}
