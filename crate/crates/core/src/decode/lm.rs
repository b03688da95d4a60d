//! Word-level n-gram language model with add-k (default) or interpolated
//! Kneser-Ney smoothing.
//!
//! The predicted vocabulary is every training word plus `<unk>`. Histories
//! are left-padded with `<s>`; there is no end-of-sentence event, since the
//! decoder only scores completed words.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Smoothing {
    AddK { k: f64 },
    KneserNey { discount: f64 },
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing::AddK { k: 0.1 }
    }
}

type Gram = Vec<u32>;

#[derive(Clone, Debug)]
pub struct NgramLm {
    order: usize,
    smoothing: Smoothing,
    /// Word strings by id; id 0 is `<unk>`, id 1 is `<s>`.
    words: Vec<String>,
    ids: HashMap<String, u32>,
    /// `counts[j]` holds (j+1)-gram counts. For Kneser-Ney, orders below the
    /// top hold continuation counts instead.
    counts: Vec<HashMap<Gram, u64>>,
    /// Per order: history → (total count, distinct followers).
    contexts: Vec<HashMap<Gram, (u64, u64)>>,
}

const UNK_ID: u32 = 0;
const BOS_ID: u32 = 1;

impl NgramLm {
    /// Counts n-grams over whitespace-separated words of `transcripts`.
    pub fn train<S: AsRef<str>>(transcripts: &[S], order: usize, smoothing: Smoothing) -> Result<Self> {
        if order < 1 {
            return Err(Error::Config("n-gram order must be at least 1".into()));
        }
        match smoothing {
            Smoothing::AddK { k } if !(k >= 0.0) => {
                return Err(Error::Config(format!("add-k constant must be >= 0, got {k}")))
            }
            Smoothing::KneserNey { discount } if !(discount > 0.0 && discount < 1.0) => {
                return Err(Error::Config(format!("discount must lie in (0, 1), got {discount}")))
            }
            _ => {}
        }
        let sentences: Vec<Vec<&str>> = transcripts
            .iter()
            .map(|t| t.as_ref().split_whitespace().collect::<Vec<_>>())
            .filter(|s| !s.is_empty())
            .collect();
        if sentences.is_empty() {
            return Err(Error::EmptyCorpus("no words to train a language model on".into()));
        }
        let mut vocab: Vec<&str> = sentences.iter().flatten().copied().collect();
        vocab.sort_unstable();
        vocab.dedup();
        let mut lm = Self::empty(order, smoothing, vocab.iter().map(|w| w.to_string()));
        let mut raw: Vec<HashMap<Gram, u64>> = vec![HashMap::new(); order];
        for s in &sentences {
            let mut padded: Vec<u32> = vec![BOS_ID; order - 1];
            padded.extend(s.iter().map(|w| lm.ids[*w]));
            for i in (order - 1)..padded.len() {
                for j in 0..order {
                    let gram = padded[i - j..=i].to_vec();
                    *raw[j].entry(gram).or_default() += 1;
                }
            }
        }
        lm.set_counts(raw);
        Ok(lm)
    }

    fn empty(order: usize, smoothing: Smoothing, vocab: impl Iterator<Item = String>) -> Self {
        let mut words = vec![UNK.to_string(), BOS.to_string()];
        words.extend(vocab.filter(|w| w != UNK && w != BOS));
        let ids = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Self {
            order,
            smoothing,
            words,
            ids,
            counts: Vec::new(),
            contexts: Vec::new(),
        }
    }

    /// Installs raw n-gram counts, replacing lower orders by continuation
    /// counts under Kneser-Ney.
    fn set_counts(&mut self, raw: Vec<HashMap<Gram, u64>>) {
        let n = self.order;
        let mut counts = raw;
        if matches!(self.smoothing, Smoothing::KneserNey { .. }) {
            for j in (0..n - 1).rev() {
                let mut cont: HashMap<Gram, u64> = HashMap::new();
                for gram in counts[j + 1].keys() {
                    *cont.entry(gram[1..].to_vec()).or_default() += 1;
                }
                counts[j] = cont;
            }
        }
        self.install(counts);
    }

    /// Sets final counts and derives per-history totals.
    fn install(&mut self, counts: Vec<HashMap<Gram, u64>>) {
        self.contexts = counts
            .iter()
            .map(|table| {
                let mut ctx: HashMap<Gram, (u64, u64)> = HashMap::new();
                for (gram, &c) in table {
                    let e = ctx.entry(gram[..gram.len() - 1].to_vec()).or_default();
                    e.0 += c;
                    e.1 += 1;
                }
                ctx
            })
            .collect();
        self.counts = counts;
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> Smoothing {
        self.smoothing
    }

    /// Size of the predicted vocabulary (training words plus `<unk>`).
    pub fn vocab_size(&self) -> usize {
        self.words.len() - 1
    }

    /// Predicted words, `<unk>` first.
    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.words
            .iter()
            .enumerate()
            .filter(|(i, _)| *i as u32 != BOS_ID)
            .map(|(_, w)| w.as_str())
    }

    pub fn word_id(&self, word: &str) -> u32 {
        self.ids.get(word).copied().filter(|&i| i != BOS_ID).unwrap_or(UNK_ID)
    }

    /// `ln p(word | history)`, history given oldest first; only the last
    /// `order - 1` words are used and shorter histories are `<s>`-padded.
    pub fn log_prob(&self, history: &[&str], word: &str) -> f64 {
        let h: Vec<u32> = history.iter().map(|w| self.word_id(w)).collect();
        self.log_prob_ids(&h, self.word_id(word))
    }

    pub fn log_prob_ids(&self, history: &[u32], word: u32) -> f64 {
        let n = self.order;
        let mut ctx = vec![BOS_ID; (n - 1).saturating_sub(history.len())];
        ctx.extend_from_slice(&history[history.len().saturating_sub(n - 1)..]);
        self.prob(&ctx, word).ln()
    }

    /// `p(w | ctx)` with `ctx.len() == order - 1`, recursing on shorter
    /// histories.
    fn prob(&self, ctx: &[u32], w: u32) -> f64 {
        let j = ctx.len();
        let size = self.vocab_size() as f64;
        let lower = if j == 0 {
            1.0 / size
        } else {
            self.prob(&ctx[1..], w)
        };
        let (total, distinct) = self.contexts[j].get(ctx).copied().unwrap_or((0, 0));
        let mut gram = ctx.to_vec();
        gram.push(w);
        let c = self.counts[j].get(&gram).copied().unwrap_or(0) as f64;
        match self.smoothing {
            Smoothing::AddK { k } => {
                let denom = total as f64 + k * size;
                if denom == 0.0 {
                    lower
                } else if j == 0 {
                    (c + k) / denom
                } else {
                    (c + k * size * lower) / denom
                }
            }
            Smoothing::KneserNey { discount } => {
                if total == 0 {
                    lower
                } else {
                    let t = total as f64;
                    (c - discount).max(0.0) / t + discount * distinct as f64 / t * lower
                }
            }
        }
    }

    /// Per-word perplexity over whitespace-separated sentences.
    pub fn perplexity<S: AsRef<str>>(&self, sentences: &[S]) -> f64 {
        let mut nll = 0.0;
        let mut count = 0usize;
        for s in sentences {
            let ids: Vec<u32> = s.as_ref().split_whitespace().map(|w| self.word_id(w)).collect();
            for i in 0..ids.len() {
                nll -= self.log_prob_ids(&ids[..i], ids[i]);
                count += 1;
            }
        }
        (nll / count.max(1) as f64).exp()
    }

    /// Plain-text count listing in the spirit of ARPA files: a header, the
    /// vocabulary, then one section of `count<TAB>w1 w2 ...` lines per order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let smoothing = match self.smoothing {
            Smoothing::AddK { k } => format!("add-k {k}"),
            Smoothing::KneserNey { discount } => format!("kneser-ney {discount}"),
        };
        let _ = writeln!(out, "\\data\\");
        let _ = writeln!(out, "order={}", self.order);
        let _ = writeln!(out, "smoothing={smoothing}");
        let _ = writeln!(out, "\\vocab:");
        for w in &self.words[2..] {
            let _ = writeln!(out, "{w}");
        }
        for (j, table) in self.counts.iter().enumerate() {
            let kind = if j + 1 < self.order && matches!(self.smoothing, Smoothing::KneserNey { .. }) {
                "continuation"
            } else {
                "raw"
            };
            let _ = writeln!(out, "\\{}-grams: {kind}", j + 1);
            let sorted: BTreeMap<Vec<&str>, u64> = table
                .iter()
                .map(|(g, c)| (g.iter().map(|&i| self.words[i as usize].as_str()).collect(), *c))
                .collect();
            for (g, c) in sorted {
                let _ = writeln!(out, "{c}\t{}", g.join(" "));
            }
        }
        let _ = writeln!(out, "\\end\\");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |d: String| Error::format("language model", d);
        let mut lines = text.lines();
        if lines.next() != Some("\\data\\") {
            return Err(bad("missing \\data\\ header".into()));
        }
        let order: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("order="))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing order".into()))?;
        let smoothing = match lines
            .next()
            .and_then(|l| l.strip_prefix("smoothing="))
            .and_then(|v| v.split_once(' '))
        {
            Some(("add-k", v)) => Smoothing::AddK {
                k: v.parse().map_err(|_| bad(format!("bad add-k constant {v}")))?,
            },
            Some(("kneser-ney", v)) => Smoothing::KneserNey {
                discount: v.parse().map_err(|_| bad(format!("bad discount {v}")))?,
            },
            _ => return Err(bad("missing smoothing line".into())),
        };
        if order < 1 {
            return Err(bad("order must be positive".into()));
        }
        if lines.next() != Some("\\vocab:") {
            return Err(bad("missing vocabulary section".into()));
        }
        let mut vocab = Vec::new();
        let mut line = lines.next();
        while let Some(l) = line {
            if l.starts_with('\\') {
                break;
            }
            vocab.push(l.to_string());
            line = lines.next();
        }
        let mut lm = Self::empty(order, smoothing, vocab.into_iter());
        let mut counts: Vec<HashMap<Gram, u64>> = vec![HashMap::new(); order];
        let mut current: Option<usize> = None;
        while let Some(l) = line {
            if l == "\\end\\" {
                break;
            }
            if let Some(rest) = l.strip_prefix('\\') {
                let j: usize = rest
                    .split('-')
                    .next()
                    .and_then(|v| v.parse().ok())
                    .filter(|j| (1..=order).contains(j))
                    .ok_or_else(|| bad(format!("bad section header {l}")))?;
                current = Some(j - 1);
            } else {
                let j = current.ok_or_else(|| bad("counts before any section".into()))?;
                let (c, words) = l
                    .split_once('\t')
                    .ok_or_else(|| bad(format!("bad count line {l}")))?;
                let c: u64 = c.parse().map_err(|_| bad(format!("bad count {c}")))?;
                let gram: Option<Gram> = words.split(' ').map(|w| lm.ids.get(w).copied()).collect();
                let gram = gram.ok_or_else(|| bad(format!("unknown word in {l}")))?;
                if gram.len() != j + 1 {
                    return Err(bad(format!("{l} is not a {}-gram", j + 1)));
                }
                counts[j].insert(gram, c);
            }
            line = lines.next();
        }
        // counts on disk are already in their final (raw or continuation) form
        lm.install(counts);
        Ok(lm)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
