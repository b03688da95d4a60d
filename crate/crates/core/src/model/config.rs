use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture constants of the acoustic model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub conv_kernels: Vec<usize>,
    pub conv_strides: Vec<usize>,
    pub conv_channels: usize,
    pub ctx_layers: usize,
    pub ctx_heads: usize,
    pub ctx_hidden: usize,
    pub ctx_ffn: usize,
    pub pos_conv_kernel: usize,
    pub pos_conv_groups: usize,
    pub layer_drop_p: f64,
    pub dropout_p: f64,
    /// Per-frame probability of starting a masked span.
    pub mask_start_p: f64,
    /// Length of each masked span in frames.
    pub mask_span: usize,
    pub vocab_size: usize,
    pub sample_rate: usize,
}

impl ModelConfig {
    /// wav2vec-2.0-style Base network: 7-layer conv encoder, 12 transformer
    /// layers of width 768.
    pub fn paper_base() -> Self {
        Self {
            conv_kernels: vec![10, 3, 3, 3, 3, 2, 2],
            conv_strides: vec![5, 2, 2, 2, 2, 2, 2],
            conv_channels: 512,
            ctx_layers: 12,
            ctx_heads: 8,
            ctx_hidden: 768,
            ctx_ffn: 3072,
            pos_conv_kernel: 128,
            pos_conv_groups: 16,
            layer_drop_p: 0.05,
            dropout_p: 0.1,
            mask_start_p: 0.075,
            mask_span: 10,
            vocab_size: 29,
            sample_rate: 16_000,
        }
    }

    /// Large network: 24 layers of width 1024.
    pub fn paper_large() -> Self {
        Self {
            ctx_layers: 24,
            ctx_heads: 16,
            ctx_hidden: 1024,
            ctx_ffn: 4096,
            layer_drop_p: 0.2,
            mask_start_p: 0.065,
            ..Self::paper_base()
        }
    }

    /// Desk-scale network used for every training experiment.
    pub fn toy() -> Self {
        Self {
            conv_kernels: vec![16, 3],
            conv_strides: vec![2, 2],
            conv_channels: 64,
            ctx_layers: 2,
            ctx_heads: 2,
            ctx_hidden: 64,
            ctx_ffn: 128,
            pos_conv_kernel: 8,
            pos_conv_groups: 4,
            layer_drop_p: 0.05,
            dropout_p: 0.1,
            mask_start_p: 0.075,
            mask_span: 10,
            vocab_size: 29,
            sample_rate: 1_000,
        }
    }

    /// A network small enough for finite-difference checks of the whole
    /// model (a few thousand parameters).
    pub fn tiny() -> Self {
        Self {
            conv_kernels: vec![4, 3],
            conv_strides: vec![2, 2],
            conv_channels: 8,
            ctx_layers: 1,
            ctx_heads: 2,
            ctx_hidden: 8,
            ctx_ffn: 16,
            pos_conv_kernel: 4,
            pos_conv_groups: 2,
            layer_drop_p: 0.0,
            dropout_p: 0.0,
            mask_start_p: 0.2,
            mask_span: 2,
            vocab_size: 6,
            sample_rate: 1_000,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "paper" | "base" => Ok(Self::paper_base()),
            "large" => Ok(Self::paper_large()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown preset {other}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.conv_kernels.is_empty() || self.conv_kernels.len() != self.conv_strides.len() {
            return bad("conv_kernels and conv_strides must be nonempty and equally long".into());
        }
        if self.conv_kernels.contains(&0) || self.conv_strides.contains(&0) {
            return bad("conv kernels and strides must be positive".into());
        }
        if self.ctx_heads == 0 || self.ctx_hidden % self.ctx_heads != 0 {
            return bad(format!(
                "ctx_hidden {} not divisible by ctx_heads {}",
                self.ctx_hidden, self.ctx_heads
            ));
        }
        if self.pos_conv_groups == 0 || self.ctx_hidden % self.pos_conv_groups != 0 {
            return bad("ctx_hidden must be divisible by pos_conv_groups".into());
        }
        if self.pos_conv_kernel == 0 {
            return bad("pos_conv_kernel must be positive".into());
        }
        for (name, p) in [
            ("layer_drop_p", self.layer_drop_p),
            ("dropout_p", self.dropout_p),
            ("mask_start_p", self.mask_start_p),
        ] {
            if !(0.0..1.0).contains(&p) && !(name == "layer_drop_p" && p == 1.0) {
                return bad(format!("{name}={p} must lie in [0, 1)"));
            }
        }
        if self.mask_span == 0 {
            return bad("mask_span must be at least 1".into());
        }
        if self.vocab_size < 2 || self.conv_channels == 0 || self.ctx_hidden == 0 {
            return bad("vocab_size, conv_channels and ctx_hidden must be positive".into());
        }
        Ok(())
    }

    /// Samples between consecutive encoder frames.
    pub fn frame_stride(&self) -> usize {
        self.conv_strides.iter().product()
    }

    /// Samples seen by one encoder frame.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for (k, s) in self.conv_kernels.iter().zip(&self.conv_strides) {
            rf += (k - 1) * jump;
            jump *= s;
        }
        rf
    }

    /// Encoder frames for `samples` input samples, composing the per-layer
    /// `floor((T - K) / s) + 1` rule.
    pub fn num_frames(&self, samples: usize) -> Result<usize> {
        let mut t = samples;
        for (k, s) in self.conv_kernels.iter().zip(&self.conv_strides) {
            if t < *k {
                return Err(Error::InputTooShort {
                    len: samples,
                    needed: self.receptive_field(),
                });
            }
            t = (t - k) / s + 1;
        }
        Ok(t)
    }

    pub fn blank(&self) -> usize {
        self.vocab_size - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for cfg in [
            ModelConfig::paper_base(),
            ModelConfig::paper_large(),
            ModelConfig::toy(),
            ModelConfig::tiny(),
        ] {
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn paper_preset_frame_arithmetic() {
        let cfg = ModelConfig::paper_base();
        assert_eq!(cfg.num_frames(16_000).unwrap(), 49);
        assert_eq!(cfg.frame_stride(), 320);
        // 400 samples = 25 ms at 16 kHz
        assert_eq!(cfg.receptive_field(), 400);
    }

    #[test]
    fn toy_preset_frame_arithmetic() {
        let cfg = ModelConfig::toy();
        assert_eq!(cfg.num_frames(40).unwrap(), 6);
        assert_eq!(cfg.receptive_field(), 20);
        assert!(matches!(
            cfg.num_frames(19),
            Err(Error::InputTooShort { .. })
        ));
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = ModelConfig::toy();
        cfg.ctx_heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::toy();
        cfg.conv_strides.pop();
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::toy();
        cfg.dropout_p = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::toy();
        cfg.mask_span = 0;
        assert!(cfg.validate().is_err());
    }
}
