use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::ContrastiveConfig;
use crate::optim::AdamConfig;

/// Optional override of the augmentation mask, which otherwise reuses the
/// model's contrastive masking parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskOverride {
    pub start_p: f64,
    pub span: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    /// Unsupervised updates per supervised update (N).
    pub update_ratio: usize,
    /// Combined count of unsupervised and supervised updates.
    pub total_updates: u64,
    /// Warmup length, counted in each loss's own updates.
    pub warmup_updates: u64,
    pub lr_unsup: f64,
    pub lr_sup: f64,
    pub encoder_grad_scale: f64,
    pub eval_every: u64,
    /// Evaluations without a validation-WER improvement before stopping;
    /// 0 disables early stopping.
    pub patience: usize,
    pub seed: u64,
    pub unsup_batch_seconds: f64,
    pub sup_batch_seconds: f64,
    pub specaugment: bool,
    pub specaugment_mask: Option<MaskOverride>,
    /// One optimizer state shared by both losses (ablation).
    pub single_optimizer: bool,
    /// Training utterances (per corpus) whose eval-mode losses are tracked.
    pub train_eval_utts: usize,
    pub contrastive: ContrastiveConfig,
    pub adam: AdamConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            update_ratio: 1,
            total_updates: 2_000,
            warmup_updates: 100,
            lr_unsup: 2e-3,
            lr_sup: 1e-4,
            encoder_grad_scale: 0.1,
            eval_every: 500,
            patience: 0,
            seed: 0,
            unsup_batch_seconds: 1.0,
            sup_batch_seconds: 1.0,
            specaugment: true,
            specaugment_mask: None,
            single_optimizer: false,
            train_eval_utts: 64,
            contrastive: ContrastiveConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainerConfig {
    /// Desk-scale schedule for the toy model and synthetic corpora.
    pub fn toy() -> Self {
        Self {
            total_updates: 3_000,
            lr_unsup: 1e-3,
            lr_sup: 1e-3,
            eval_every: 1_000,
            train_eval_utts: 100,
            contrastive: ContrastiveConfig {
                num_negatives: 20,
                ..ContrastiveConfig::default()
            },
            ..Self::default()
        }
    }

    /// `toy`, or the full-scale defaults for `paper`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "paper" | "base" => Ok(Self::default()),
            _ => Err(Error::Config(format!("unknown preset {name:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.update_ratio < 1 {
            return bad("update_ratio must be at least 1".into());
        }
        if self.total_updates == 0 {
            return bad("total_updates must be positive".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive".into());
        }
        for (name, v) in [("lr_unsup", self.lr_unsup), ("lr_sup", self.lr_sup)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a nonnegative number, got {v}"));
            }
        }
        if !(self.encoder_grad_scale.is_finite() && self.encoder_grad_scale >= 0.0) {
            return bad("encoder_grad_scale must be nonnegative".into());
        }
        if !(self.unsup_batch_seconds > 0.0 && self.sup_batch_seconds > 0.0) {
            return bad("batch budgets must be positive".into());
        }
        if let Some(m) = self.specaugment_mask {
            if !(0.0..1.0).contains(&m.start_p) || m.span == 0 {
                return bad("specaugment_mask needs start_p in [0, 1) and span >= 1".into());
            }
        }
        self.contrastive.validate()
    }

    /// Updates each loss receives over the run (used as schedule lengths).
    pub fn planned_updates(&self, has_unlabeled: bool) -> (u64, u64) {
        if !has_unlabeled {
            return (0, self.total_updates);
        }
        let cycle = self.update_ratio as u64 + 1;
        let full = self.total_updates / cycle;
        let rest = self.total_updates % cycle;
        let unsup = full * self.update_ratio as u64 + rest.min(self.update_ratio as u64);
        (unsup, self.total_updates - unsup)
    }
}
