use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CORPUS_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.tsv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub samples: Vec<f64>,
    pub sample_rate: usize,
    pub transcript: Option<String>,
}

impl Utterance {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// A set of utterances sharing one sample rate.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Corpus {
    pub sample_rate: usize,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn new(sample_rate: usize, utterances: Vec<Utterance>) -> Self {
        Self {
            sample_rate,
            utterances,
        }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn total_duration(&self) -> f64 {
        self.utterances.iter().map(Utterance::duration).sum()
    }

    /// Copy without transcripts.
    pub fn unlabeled(&self) -> Self {
        Self {
            sample_rate: self.sample_rate,
            utterances: self
                .utterances
                .iter()
                .map(|u| Utterance {
                    transcript: None,
                    ..u.clone()
                })
                .collect(),
        }
    }

    /// Splits off the last `count` utterances.
    pub fn split_tail(mut self, count: usize) -> (Self, Self) {
        let at = self.utterances.len().saturating_sub(count);
        let tail = self.utterances.split_off(at);
        let sr = self.sample_rate;
        (self, Self::new(sr, tail))
    }

    pub fn transcripts(&self) -> Vec<&str> {
        self.utterances
            .iter()
            .filter_map(|u| u.transcript.as_deref())
            .collect()
    }

    /// Writes `manifest.tsv` plus one little-endian `f64` sample file per
    /// utterance under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("audio"))?;
        let mut w = BufWriter::new(fs::File::create(dir.join(MANIFEST))?);
        writeln!(
            w,
            "# joint-asr corpus version={CORPUS_VERSION} sample_rate={} encoding=f64le",
            self.sample_rate
        )?;
        writeln!(w, "id\tduration\ttranscript\tpath")?;
        for u in &self.utterances {
            if u.id.contains(['\t', '/', '\n']) {
                return Err(Error::format("utterance id", u.id.clone()));
            }
            let rel = format!("audio/{}.f64", u.id);
            let mut bytes = Vec::with_capacity(u.samples.len() * 8);
            for s in &u.samples {
                bytes.extend_from_slice(&s.to_le_bytes());
            }
            fs::write(dir.join(&rel), bytes)?;
            writeln!(
                w,
                "{}\t{:.6}\t{}\t{}",
                u.id,
                u.duration(),
                u.transcript.as_deref().unwrap_or(""),
                rel
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = dir.join(MANIFEST);
        if !manifest.exists() {
            return Err(Error::MissingPath(manifest));
        }
        let mut lines = BufReader::new(fs::File::open(&manifest)?).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format("corpus manifest", "empty file"))??;
        let mut version = None;
        let mut sample_rate = None;
        for field in header.trim_start_matches('#').split_whitespace() {
            if let Some(v) = field.strip_prefix("version=") {
                version = v.parse::<u32>().ok();
            } else if let Some(v) = field.strip_prefix("sample_rate=") {
                sample_rate = v.parse::<usize>().ok();
            }
        }
        if version != Some(CORPUS_VERSION) {
            return Err(Error::format("corpus manifest", format!("unsupported version in {header:?}")));
        }
        let sample_rate =
            sample_rate.ok_or_else(|| Error::format("corpus manifest", "missing sample_rate"))?;
        let _columns = lines.next();
        let mut utterances = Vec::new();
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let [id, _duration, transcript, path] = cols[..] else {
                return Err(Error::format("corpus manifest", format!("bad row {line:?}")));
            };
            let bytes = fs::read(dir.join(path))?;
            if bytes.len() % 8 != 0 {
                return Err(Error::format("sample file", path.to_string()));
            }
            let samples = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            utterances.push(Utterance {
                id: id.to_string(),
                samples,
                sample_rate,
                transcript: (!transcript.is_empty()).then(|| transcript.to_string()),
            });
        }
        Ok(Self::new(sample_rate, utterances))
    }
}
