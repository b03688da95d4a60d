//! Frequency-coded synthetic speech: every token is a fixed-length sinusoid at
//! its own frequency, utterances are token strings rendered back to back plus
//! white noise.

use std::f64::consts::TAU;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::corpus::{Corpus, Utterance};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub num_utts: usize,
    /// Letters words are spelled with. The word boundary is always added.
    pub charset: String,
    /// Inclusive range of words per utterance.
    pub words_per_utt: (usize, usize),
    /// Inclusive range of letters per lexicon word.
    pub word_len: (usize, usize),
    pub lexicon_size: usize,
    /// Likely successors per word; gives transcripts n-gram structure.
    pub successors: usize,
    pub noise_sigma: f64,
    pub token_samples: usize,
    pub sample_rate: usize,
    /// Seeds the lexicon and the word-transition table.
    pub language_seed: u64,
    /// Seeds utterance sampling and noise.
    pub seed: u64,
    pub id_prefix: String,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_utts: 100,
            charset: "abcdefgh".into(),
            words_per_utt: (2, 4),
            word_len: (2, 4),
            lexicon_size: 40,
            successors: 3,
            noise_sigma: 0.5,
            token_samples: 24,
            sample_rate: 1_000,
            language_seed: 7,
            seed: 0,
            id_prefix: "utt".into(),
        }
    }
}

impl SynthSpec {
    /// Token characters in template order (letters, then the word boundary).
    pub fn inventory(&self) -> Vec<char> {
        let mut inv: Vec<char> = self.charset.chars().collect();
        inv.push(' ');
        inv
    }

    /// Frequency in Hz of the `j`-th inventory token; exactly on a DFT bin of
    /// a single token segment.
    pub fn frequency(&self, j: usize) -> f64 {
        (j + 1) as f64 * self.sample_rate as f64 / self.token_samples as f64
    }

    fn validate(&self) -> Result<()> {
        if self.num_utts == 0 {
            return Err(Error::EmptyCorpus("num_utts = 0".into()));
        }
        let inv = self.inventory();
        if self.charset.is_empty()
            || self
                .charset
                .chars()
                .any(|c| !c.is_ascii_lowercase() && c != '\'')
        {
            return Err(Error::Config(format!("bad charset {:?}", self.charset)));
        }
        // all template frequencies strictly below Nyquist
        if 2 * inv.len() >= self.token_samples {
            return Err(Error::Config(format!(
                "{} tokens need more than {} samples per token",
                inv.len(),
                self.token_samples
            )));
        }
        let (a, b) = self.words_per_utt;
        let (c, d) = self.word_len;
        if a == 0 || a > b || c == 0 || c > d || self.lexicon_size == 0 || self.successors == 0 {
            return Err(Error::Config("invalid length ranges or lexicon size".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be non-negative".into()));
        }
        Ok(())
    }

    /// The random lexicon and per-word successor lists.
    pub fn language(&self) -> (Vec<String>, Vec<Vec<usize>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.language_seed);
        let letters: Vec<char> = self.charset.chars().collect();
        let mut lexicon: Vec<String> = Vec::new();
        let mut attempts = 0;
        while lexicon.len() < self.lexicon_size && attempts < 100 * self.lexicon_size {
            attempts += 1;
            let len = rng.random_range(self.word_len.0..=self.word_len.1);
            let w: String = (0..len)
                .map(|_| *letters.choose(&mut rng).expect("nonempty charset"))
                .collect();
            if !lexicon.contains(&w) {
                lexicon.push(w);
            }
        }
        let n = lexicon.len();
        let succ = (0..n)
            .map(|_| (0..self.successors).map(|_| rng.random_range(0..n)).collect())
            .collect();
        (lexicon, succ)
    }

    /// Renders `text` (over the inventory) to samples, noise-free.
    pub fn render(&self, text: &str) -> Result<Vec<f64>> {
        let inv = self.inventory();
        let mut out = Vec::with_capacity(text.len() * self.token_samples);
        for c in text.chars() {
            let j = inv
                .iter()
                .position(|x| *x == c)
                .ok_or_else(|| Error::contract(format!("{c:?} not in synth inventory")))?;
            let f = self.frequency(j);
            out.extend((0..self.token_samples).map(|n| {
                (TAU * f * n as f64 / self.sample_rate as f64).sin()
            }));
        }
        Ok(out)
    }
}

/// Generates a labeled corpus; deterministic given the spec.
pub fn generate_corpus(spec: &SynthSpec) -> Result<Corpus> {
    spec.validate()?;
    let (lexicon, succ) = spec.language();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0))
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut utts = Vec::with_capacity(spec.num_utts);
    for i in 0..spec.num_utts {
        let n_words = rng.random_range(spec.words_per_utt.0..=spec.words_per_utt.1);
        let mut w = rng.random_range(0..lexicon.len());
        let mut words = vec![lexicon[w].as_str()];
        for _ in 1..n_words {
            w = *succ[w].choose(&mut rng).expect("nonempty successors");
            words.push(lexicon[w].as_str());
        }
        let text = words.join(" ");
        let mut samples = spec.render(&text)?;
        if spec.noise_sigma > 0.0 {
            for s in &mut samples {
                *s += noise.sample(&mut rng);
            }
        }
        utts.push(Utterance {
            id: format!("{}{:06}", spec.id_prefix, i),
            samples,
            sample_rate: spec.sample_rate,
            transcript: Some(text),
        });
    }
    Ok(Corpus::new(spec.sample_rate, utts))
}
