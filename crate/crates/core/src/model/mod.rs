//! The acoustic model: convolutional encoder `z = f(x)`, span masking
//! `ẑ = mask(z)`, transformer context network `z̃ = g(ẑ)` and the linear
//! softmax classifier producing per-frame token log-probabilities.

mod config;
mod mask;

pub use config::ModelConfig;
pub use mask::MaskPlan;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::tensor::{ConvSpec, Graph, Tensor, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
struct ConvLayer {
    weight: ParamId,
    bias: ParamId,
    ln_gamma: ParamId,
    ln_beta: ParamId,
    kernel: usize,
    stride: usize,
}

#[derive(Clone, Debug)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
struct Block {
    ln1: (ParamId, ParamId),
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: (ParamId, ParamId),
    ff1: Linear,
    ff2: Linear,
}

/// Randomness and mode for one forward pass of the context network.
pub struct Stochastic<'a> {
    pub train: bool,
    pub layer_drop: &'a mut dyn RngCore,
    pub dropout: &'a mut dyn RngCore,
}

/// Diagnostics captured during a context-network pass.
#[derive(Debug, Default)]
pub struct ContextTrace {
    /// Attention probabilities per executed layer and head (`F × F`).
    pub attention: Vec<Vec<Tensor>>,
    /// Which layers ran (false = dropped).
    pub executed: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct AcousticModel {
    cfg: ModelConfig,
    params: ParamStore,
    convs: Vec<ConvLayer>,
    proj: Option<Linear>,
    mask_embedding: ParamId,
    pos_conv: (ParamId, ParamId),
    blocks: Vec<Block>,
    ln_out: (ParamId, ParamId),
    classifier: Linear,
}

fn linear(
    store: &mut ParamStore,
    name: &str,
    group: ParamGroup,
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) -> Linear {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Linear {
        weight: store.add(
            &format!("{name}.weight"),
            group,
            Tensor::uniform(&[fan_in, fan_out], bound, rng),
        ),
        bias: store.add(
            &format!("{name}.bias"),
            group,
            Tensor::uniform(&[fan_out], bound, rng),
        ),
    }
}

fn layer_norm(store: &mut ParamStore, name: &str, group: ParamGroup, dim: usize) -> (ParamId, ParamId) {
    (
        store.add(&format!("{name}.gamma"), group, Tensor::full(&[dim], 1.0)),
        store.add(&format!("{name}.beta"), group, Tensor::zeros(&[dim])),
    )
}

impl AcousticModel {
    /// Randomly initialized model.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let enc = ParamGroup::Encoder;
        let ctx = ParamGroup::Context;

        let mut convs = Vec::new();
        let mut c_in = 1;
        for (i, (&k, &s)) in cfg.conv_kernels.iter().zip(&cfg.conv_strides).enumerate() {
            let fan_in = c_in * k;
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weight = store.add(
                &format!("encoder.conv{i}.weight"),
                enc,
                Tensor::uniform(&[cfg.conv_channels, c_in, k], bound, &mut rng),
            );
            let bias = store.add(
                &format!("encoder.conv{i}.bias"),
                enc,
                Tensor::uniform(&[cfg.conv_channels], bound, &mut rng),
            );
            let (ln_gamma, ln_beta) =
                layer_norm(&mut store, &format!("encoder.ln{i}"), enc, cfg.conv_channels);
            convs.push(ConvLayer {
                weight,
                bias,
                ln_gamma,
                ln_beta,
                kernel: k,
                stride: s,
            });
            c_in = cfg.conv_channels;
        }
        let d = cfg.ctx_hidden;
        let proj = (cfg.conv_channels != d)
            .then(|| linear(&mut store, "encoder.proj", ctx, cfg.conv_channels, d, &mut rng));

        let mask_embedding = store.add(
            "mask_embedding",
            ctx,
            Tensor::new(vec![d], (0..d).map(|_| rng.random::<f64>()).collect())?,
        );
        let cin_g = d / cfg.pos_conv_groups;
        let pos_bound = 1.0 / ((cin_g * cfg.pos_conv_kernel) as f64).sqrt();
        let pos_conv = (
            store.add(
                "context.pos_conv.weight",
                ctx,
                Tensor::uniform(&[d, cin_g, cfg.pos_conv_kernel], pos_bound, &mut rng),
            ),
            store.add(
                "context.pos_conv.bias",
                ctx,
                Tensor::zeros(&[d]),
            ),
        );

        let blocks = (0..cfg.ctx_layers)
            .map(|l| {
                let p = format!("context.layer{l}");
                Block {
                    ln1: layer_norm(&mut store, &format!("{p}.ln1"), ctx, d),
                    q: linear(&mut store, &format!("{p}.attn.q"), ctx, d, d, &mut rng),
                    k: linear(&mut store, &format!("{p}.attn.k"), ctx, d, d, &mut rng),
                    v: linear(&mut store, &format!("{p}.attn.v"), ctx, d, d, &mut rng),
                    o: linear(&mut store, &format!("{p}.attn.o"), ctx, d, d, &mut rng),
                    ln2: layer_norm(&mut store, &format!("{p}.ln2"), ctx, d),
                    ff1: linear(&mut store, &format!("{p}.ffn.fc1"), ctx, d, cfg.ctx_ffn, &mut rng),
                    ff2: linear(&mut store, &format!("{p}.ffn.fc2"), ctx, cfg.ctx_ffn, d, &mut rng),
                }
            })
            .collect();
        let ln_out = layer_norm(&mut store, "context.ln_out", ctx, d);
        let classifier = linear(
            &mut store,
            "classifier",
            ParamGroup::Classifier,
            d,
            cfg.vocab_size,
            &mut rng,
        );

        Ok(Self {
            cfg,
            params: store,
            convs,
            proj,
            mask_embedding,
            pos_conv,
            blocks,
            ln_out,
            classifier,
        })
    }

    /// A copy of the model with `store` in place of its parameters.
    pub fn with_params(&self, store: &ParamStore) -> Self {
        Self {
            params: store.clone(),
            ..self.clone()
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn mask_embedding_id(&self) -> ParamId {
        self.mask_embedding
    }

    pub fn classifier_ids(&self) -> (ParamId, ParamId) {
        (self.classifier.weight, self.classifier.bias)
    }

    pub fn num_frames(&self, samples: usize) -> Result<usize> {
        self.cfg.num_frames(samples)
    }

    fn apply_linear<'g>(&self, g: &'g Graph, x: Var<'g>, lin: &Linear) -> Result<Var<'g>> {
        let w = g.param(&self.params, lin.weight);
        let b = g.param(&self.params, lin.bias);
        x.matmul(w)?.add_bias(b)
    }

    fn apply_ln<'g>(&self, g: &'g Graph, x: Var<'g>, ln: (ParamId, ParamId)) -> Result<Var<'g>> {
        x.layer_norm(g.param(&self.params, ln.0), g.param(&self.params, ln.1), LN_EPS)
    }

    /// `z = f(x)`: the convolutional encoder over (already normalized) raw
    /// samples, giving `F × D` features.
    pub fn encode<'g>(&self, g: &'g Graph, audio: &[f64]) -> Result<Var<'g>> {
        let frames = self.cfg.num_frames(audio.len())?;
        let mut x = g.constant(Tensor::matrix(1, audio.len(), audio.to_vec())?);
        let mut feats = None;
        for layer in &self.convs {
            let y = x.conv1d(
                g.param(&self.params, layer.weight),
                Some(g.param(&self.params, layer.bias)),
                ConvSpec::strided(layer.stride),
            )?;
            debug_assert!(layer.kernel > 0);
            // channels-last for the per-frame norm
            let y = y.transpose()?;
            let y = self.apply_ln(g, y, (layer.ln_gamma, layer.ln_beta))?.gelu();
            x = y.transpose()?;
            feats = Some(y);
        }
        let mut z = feats.expect("at least one conv layer");
        if let Some(p) = &self.proj {
            z = self.apply_linear(g, z, p)?;
        }
        debug_assert_eq!(z.shape()[0], frames);
        Ok(z)
    }

    /// `ẑ = mask(z)`: rows listed in `plan` replaced by the learned mask
    /// embedding. `z` itself is left untouched.
    pub fn apply_mask<'g>(&self, g: &'g Graph, z: Var<'g>, plan: &MaskPlan) -> Result<Var<'g>> {
        let frames = z.shape()[0];
        plan.validate(frames)?;
        if plan.is_empty() {
            return Ok(z);
        }
        z.replace_rows(g.param(&self.params, self.mask_embedding), &plan.indices)
    }

    /// `z̃ = g(ẑ)`.
    pub fn contextualize<'g>(
        &self,
        g: &'g Graph,
        zhat: Var<'g>,
        st: &mut Stochastic<'_>,
    ) -> Result<Var<'g>> {
        self.contextualize_traced(g, zhat, st, None)
    }

    /// [`contextualize`](Self::contextualize) that optionally records
    /// attention maps and which layers ran.
    pub fn contextualize_traced<'g>(
        &self,
        g: &'g Graph,
        zhat: Var<'g>,
        st: &mut Stochastic<'_>,
        mut trace: Option<&mut ContextTrace>,
    ) -> Result<Var<'g>> {
        let frames = zhat.shape()[0];
        let d = self.cfg.ctx_hidden;
        let k = self.cfg.pos_conv_kernel;
        // positional convolution: same-length output via symmetric padding of
        // k/2, trimming the extra trailing frame for even kernels
        let pos = zhat.transpose()?.conv1d(
            g.param(&self.params, self.pos_conv.0),
            Some(g.param(&self.params, self.pos_conv.1)),
            ConvSpec {
                stride: 1,
                groups: self.cfg.pos_conv_groups,
                padding: k / 2,
            },
        )?;
        let pos = if k % 2 == 0 { pos.slice_cols(0, frames)? } else { pos };
        let mut x = zhat.add(pos.transpose()?.gelu())?;
        x = x.dropout(self.cfg.dropout_p, st.train, st.dropout)?;

        let heads = self.cfg.ctx_heads;
        let dh = d / heads;
        for block in &self.blocks {
            if st.train && self.cfg.layer_drop_p > 0.0 {
                let skip = st.layer_drop.random::<f64>() < self.cfg.layer_drop_p;
                if let Some(t) = trace.as_deref_mut() {
                    t.executed.push(!skip);
                }
                if skip {
                    continue;
                }
            } else if let Some(t) = trace.as_deref_mut() {
                t.executed.push(true);
            }
            let h = self.apply_ln(g, x, block.ln1)?;
            let q = self.apply_linear(g, h, &block.q)?;
            let kk = self.apply_linear(g, h, &block.k)?;
            let v = self.apply_linear(g, h, &block.v)?;
            let mut outs = Vec::with_capacity(heads);
            let mut maps = Vec::new();
            for hd in 0..heads {
                let qh = q.slice_cols(hd * dh, dh)?;
                let kh = kk.slice_cols(hd * dh, dh)?;
                let vh = v.slice_cols(hd * dh, dh)?;
                let scores = qh.matmul(kh.transpose()?)?.scale(1.0 / (dh as f64).sqrt());
                let attn = scores.softmax(1)?;
                if trace.is_some() {
                    maps.push(attn.value().clone());
                }
                outs.push(attn.matmul(vh)?);
            }
            if let Some(t) = trace.as_deref_mut() {
                t.attention.push(maps);
            }
            let a = Var::concat(&outs, 1)?;
            let a = self.apply_linear(g, a, &block.o)?;
            x = x.add(a.dropout(self.cfg.dropout_p, st.train, st.dropout)?)?;

            let h = self.apply_ln(g, x, block.ln2)?;
            let f = self.apply_linear(g, h, &block.ff1)?.gelu();
            let f = self.apply_linear(g, f, &block.ff2)?;
            x = x.add(f.dropout(self.cfg.dropout_p, st.train, st.dropout)?)?;
        }
        self.apply_ln(g, x, self.ln_out)
    }

    /// Per-frame log-distribution over the vocabulary (`F × V`).
    pub fn classify<'g>(&self, g: &'g Graph, ztilde: Var<'g>) -> Result<Var<'g>> {
        self.apply_linear(g, ztilde, &self.classifier)?.log_softmax(1)
    }

    /// Eval-mode log-probabilities for one utterance, without masking.
    pub fn infer(&self, audio: &[f64]) -> Result<Tensor> {
        let g = Graph::new();
        let z = self.encode(&g, audio)?;
        // eval mode never draws from these
        let mut r1 = ChaCha8Rng::seed_from_u64(0);
        let mut r2 = ChaCha8Rng::seed_from_u64(0);
        let mut st = Stochastic {
            train: false,
            layer_drop: &mut r1,
            dropout: &mut r2,
        };
        let zt = self.contextualize(&g, z, &mut st)?;
        let lp = self.classify(&g, zt)?;
        let out = lp.value().clone();
        Ok(out)
    }

    /// Overwrites parameters from a named listing (checkpoint load).
    pub fn load_params(&mut self, named: Vec<(String, Tensor)>) -> Result<()> {
        self.params.load_from(named)
    }

    pub fn check_frames(&self, audio_len: usize) -> Result<usize> {
        let f = self.cfg.num_frames(audio_len)?;
        if f == 0 {
            return Err(Error::InputTooShort {
                len: audio_len,
                needed: self.cfg.receptive_field(),
            });
        }
        Ok(f)
    }
}
