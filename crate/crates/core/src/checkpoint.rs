//! Versioned binary checkpoint container.
//!
//! ```text
//! magic "JASRCKPT" | u32 version
//! json model config | json trainer config (or null)
//! u32 n, n × tensor record (name, u32 ndim, u64 dims, f64 data)
//! u32 k, k × optimizer (name, u64 step, u32 n, n × (param name, m, v))
//! json train state (or null)
//! 32-byte SHA-256 of everything above
//! ```
//!
//! Integers and floats are little-endian; strings and JSON blobs are
//! prefixed by a u64 byte length. Floats are stored bit-exactly.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{AcousticModel, ModelConfig};
use crate::optim::{AdamConfig, AdamState};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::train::{TrainState, TrainerConfig};

pub const MAGIC: &[u8; 8] = b"JASRCKPT";
pub const VERSION: u32 = 1;

/// Moments of one optimizer, keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerBlob {
    pub name: String,
    pub step: u64,
    pub moments: Vec<(String, Tensor, Tensor)>,
}

impl OptimizerBlob {
    pub fn capture(name: &str, state: &AdamState, store: &ParamStore) -> Self {
        let moments = state
            .registered()
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                let (m, v) = state.moments(i);
                (store.name(id).to_string(), m.clone(), v.clone())
            })
            .collect();
        Self {
            name: name.to_string(),
            step: state.step_count(),
            moments,
        }
    }

    /// Rebuilds the optimizer over `store`, registering parameters in the
    /// stored order.
    pub fn restore(&self, store: &ParamStore, cfg: AdamConfig) -> Result<AdamState> {
        let ids = self
            .moments
            .iter()
            .map(|(name, _, _)| {
                store
                    .find(name)
                    .ok_or_else(|| Error::format("checkpoint", format!("unknown parameter {name}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut st = AdamState::new(store, ids, cfg);
        let (m, v) = self.moments.iter().map(|(_, m, v)| (m.clone(), v.clone())).unzip();
        st.restore(m, v, self.step)?;
        Ok(st)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub trainer: Option<TrainerConfig>,
    pub params: Vec<(String, Tensor)>,
    pub optimizers: Vec<OptimizerBlob>,
    pub state: Option<TrainState>,
}

impl Checkpoint {
    /// Parameters only.
    pub fn from_model(model: &AcousticModel) -> Self {
        Self {
            model: model.config().clone(),
            trainer: None,
            params: model
                .params()
                .named()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
            optimizers: Vec::new(),
            state: None,
        }
    }

    pub fn build_model(&self) -> Result<AcousticModel> {
        let mut model = AcousticModel::new(self.model.clone(), 0)?;
        model.load_params(self.params.clone())?;
        Ok(model)
    }

    /// Rejects a checkpoint written under a different configuration.
    pub fn check_config(&self, model: &ModelConfig, trainer: Option<&TrainerConfig>) -> Result<()> {
        if &self.model != model {
            return Err(Error::ConfigMismatch);
        }
        if let (Some(mine), Some(theirs)) = (&self.trainer, trainer) {
            if mine != theirs {
                return Err(Error::ConfigMismatch);
            }
        }
        Ok(())
    }

    pub fn optimizer(&self, name: &str) -> Option<&OptimizerBlob> {
        self.optimizers.iter().find(|o| o.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.bytes(serde_json::to_string(&self.model)?.as_bytes());
        w.bytes(serde_json::to_string(&self.trainer)?.as_bytes());
        w.u32(self.params.len() as u32);
        for (name, t) in &self.params {
            w.bytes(name.as_bytes());
            w.tensor(t);
        }
        w.u32(self.optimizers.len() as u32);
        for o in &self.optimizers {
            w.bytes(o.name.as_bytes());
            w.u64(o.step);
            w.u32(o.moments.len() as u32);
            for (name, m, v) in &o.moments {
                w.bytes(name.as_bytes());
                w.tensor(m);
                w.tensor(v);
            }
        }
        w.bytes(serde_json::to_string(&self.state)?.as_bytes());
        let digest = Sha256::digest(&w.0);
        w.0.extend_from_slice(&digest);
        Ok(w.0)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < MAGIC.len() + 4 + 32 || &buf[..MAGIC.len()] != MAGIC {
            return Err(Error::format("checkpoint", "not a checkpoint file"));
        }
        let (body, digest) = buf.split_at(buf.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::format("checkpoint", "checksum mismatch"));
        }
        let mut r = Reader {
            buf: body,
            pos: MAGIC.len(),
        };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(
                "checkpoint",
                format!("version {version}, expected {VERSION}"),
            ));
        }
        let model: ModelConfig = serde_json::from_slice(r.bytes()?)?;
        let trainer: Option<TrainerConfig> = serde_json::from_slice(r.bytes()?)?;
        let n = r.u32()?;
        let mut params = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let name = r.string()?;
            params.push((name, r.tensor()?));
        }
        let k = r.u32()?;
        let mut optimizers = Vec::with_capacity(k as usize);
        for _ in 0..k {
            let name = r.string()?;
            let step = r.u64()?;
            let n = r.u32()?;
            let mut moments = Vec::with_capacity(n as usize);
            for _ in 0..n {
                let pname = r.string()?;
                let m = r.tensor()?;
                let v = r.tensor()?;
                moments.push((pname, m, v));
            }
            optimizers.push(OptimizerBlob {
                name,
                step,
                moments,
            });
        }
        let state: Option<TrainState> = serde_json::from_slice(r.bytes()?)?;
        if r.pos != body.len() {
            return Err(Error::format("checkpoint", "trailing bytes"));
        }
        Ok(Self {
            model,
            trainer,
            params,
            optimizers,
            state,
        })
    }

    /// Writes through a temporary file so a crash never leaves a torn file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }

    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for x in t.data() {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| Error::format("checkpoint", "truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u64()?;
        self.take(usize::try_from(n).map_err(|_| Error::format("checkpoint", "length overflow"))?)
    }

    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec())
            .map_err(|_| Error::format("checkpoint", "name is not UTF-8"))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let ndim = self.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::format("checkpoint", "tensor size overflow"))?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::format("checkpoint", "tensor size overflow"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(shape, data)
    }
}
