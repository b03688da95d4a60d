use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::Corpus;
use crate::error::{Error, Result};

/// Batches of utterance indices, each within the audio-length budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batches: Vec<Vec<usize>>,
    /// Total seconds of audio per batch.
    pub durations: Vec<f64>,
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }
}

fn budget_samples(budget_seconds: f64, sample_rate: usize) -> usize {
    (budget_seconds * sample_rate as f64 + 1e-9).floor() as usize
}

/// Shuffles the corpus and packs utterances greedily so that no batch holds
/// more than `budget_seconds` of audio.
pub fn plan_batches<R: Rng + ?Sized>(
    corpus: &Corpus,
    budget_seconds: f64,
    rng: &mut R,
) -> Result<BatchPlan> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus("nothing to batch".into()));
    }
    let budget = budget_samples(budget_seconds, corpus.sample_rate);
    if let Some(u) = corpus.utterances.iter().find(|u| u.samples.len() > budget) {
        return Err(Error::Config(format!(
            "utterance {} ({:.3} s) exceeds the batch budget of {budget_seconds} s",
            u.id,
            u.duration()
        )));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut used = 0;
    for i in order {
        let n = corpus.utterances[i].samples.len();
        if !current.is_empty() && used + n > budget {
            batches.push(std::mem::take(&mut current));
            used = 0;
        }
        current.push(i);
        used += n;
    }
    if !current.is_empty() {
        batches.push(current);
    }
    let sr = corpus.sample_rate as f64;
    let durations = batches
        .iter()
        .map(|b| {
            b.iter()
                .map(|&i| corpus.utterances[i].samples.len())
                .sum::<usize>() as f64
                / sr
        })
        .collect();
    Ok(BatchPlan { batches, durations })
}

/// Position of a [`BatchStream`]; enough to resume it exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamPosition {
    pub epoch: u64,
    pub cursor: usize,
}

/// Endless sequence of batches over a corpus, reshuffled every epoch. The
/// plan of epoch `e` depends only on `(seed, e)`.
#[derive(Clone, Debug)]
pub struct BatchStream {
    seed: u64,
    budget_seconds: f64,
    pos: StreamPosition,
    plan: BatchPlan,
}

fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    rng
}

impl BatchStream {
    pub fn new(corpus: &Corpus, budget_seconds: f64, seed: u64) -> Result<Self> {
        Self::resume(
            corpus,
            budget_seconds,
            seed,
            StreamPosition {
                epoch: 0,
                cursor: 0,
            },
        )
    }

    pub fn resume(
        corpus: &Corpus,
        budget_seconds: f64,
        seed: u64,
        pos: StreamPosition,
    ) -> Result<Self> {
        let plan = plan_batches(corpus, budget_seconds, &mut epoch_rng(seed, pos.epoch))?;
        if pos.cursor > plan.len() {
            return Err(Error::format("stream position", format!("{pos:?}")));
        }
        Ok(Self {
            seed,
            budget_seconds,
            pos,
            plan,
        })
    }

    pub fn position(&self) -> StreamPosition {
        self.pos
    }

    pub fn next_batch(&mut self, corpus: &Corpus) -> Result<Vec<usize>> {
        if self.pos.cursor >= self.plan.len() {
            self.pos.epoch += 1;
            self.pos.cursor = 0;
            self.plan = plan_batches(
                corpus,
                self.budget_seconds,
                &mut epoch_rng(self.seed, self.pos.epoch),
            )?;
        }
        let b = self.plan.batches[self.pos.cursor].clone();
        self.pos.cursor += 1;
        Ok(b)
    }
}
