//! Masked contrastive loss: at every masked frame the context output (anchor)
//! has to pick out the unmasked encoder feature of that frame (positive) among
//! encoder features of other frames (negatives).
//!
//! With `s(a, b) = exp(cos(a, b) / τ)`:
//!
//! ```text
//! L_u = 1/T Σ_t −ln s(z_t, z̃_t) / (s(z_t, z̃_t) + Σ_{t'} s(z_{t'}, z̃_t))
//! ```
//!
//! The temperature sits inside the exponent; placing `1/τ` in front of the
//! exponential instead would cancel it out of the ratio.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MaskPlan;
use crate::tensor::Var;

/// Norm floor used by the cosine similarity.
pub const COSINE_EPS: f64 = 1e-8;

/// Frames negatives are drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativePool {
    /// Every frame of the utterance except the anchor.
    OtherFrames,
    /// Only unmasked frames. Falls back to [`NegativePool::OtherFrames`] when
    /// every frame is masked.
    NonMaskedFrames,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub num_negatives: usize,
    pub negative_pool: NegativePool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            num_negatives: 100,
            negative_pool: NegativePool::OtherFrames,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.num_negatives == 0 {
            return Err(Error::Config("num_negatives must be at least 1".into()));
        }
        Ok(())
    }
}

fn pool(plan: &MaskPlan, num_frames: usize, anchor: usize, kind: NegativePool) -> Vec<usize> {
    let others = || (0..num_frames).filter(|&f| f != anchor);
    match kind {
        NegativePool::OtherFrames => others().collect(),
        NegativePool::NonMaskedFrames => {
            let unmasked: Vec<usize> = others().filter(|f| !plan.contains(*f)).collect();
            if unmasked.is_empty() {
                others().collect()
            } else {
                unmasked
            }
        }
    }
}

/// `K` negative frame indices for `anchor`, uniform over the configured pool;
/// without replacement when the pool holds at least `K` frames.
pub fn sample_negatives<R: Rng + ?Sized>(
    plan: &MaskPlan,
    num_frames: usize,
    anchor: usize,
    cfg: &ContrastiveConfig,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if num_frames <= 1 {
        return Err(Error::NoNegatives);
    }
    if !plan.contains(anchor) {
        return Err(Error::contract(format!("anchor {anchor} is not a masked frame")));
    }
    let candidates = pool(plan, num_frames, anchor, cfg.negative_pool);
    let k = cfg.num_negatives;
    if candidates.len() >= k {
        Ok(index::sample(rng, candidates.len(), k)
            .into_iter()
            .map(|i| candidates[i])
            .collect())
    } else {
        Ok((0..k)
            .map(|_| candidates[rng.random_range(0..candidates.len())])
            .collect())
    }
}

/// Negatives for every masked frame of `plan`, in plan order.
pub fn draw_negatives<R: Rng + ?Sized>(
    plan: &MaskPlan,
    num_frames: usize,
    cfg: &ContrastiveConfig,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    plan.indices
        .iter()
        .map(|&t| sample_negatives(plan, num_frames, t, cfg, rng))
        .collect()
}

/// Contrastive loss with negatives drawn from `rng`.
pub fn contrastive_loss<'g, R: Rng + ?Sized>(
    z: Var<'g>,
    ztilde: Var<'g>,
    plan: &MaskPlan,
    cfg: &ContrastiveConfig,
    rng: &mut R,
) -> Result<Var<'g>> {
    if plan.is_empty() {
        return Err(Error::contract("contrastive loss needs at least one masked frame"));
    }
    let frames = z.shape()[0];
    let negatives = draw_negatives(plan, frames, cfg, rng)?;
    contrastive_loss_with(z, ztilde, &plan.indices, &negatives, cfg.temperature)
}

/// Contrastive loss for explicit anchors and negatives.
pub fn contrastive_loss_with<'g>(
    z: Var<'g>,
    ztilde: Var<'g>,
    anchors: &[usize],
    negatives: &[Vec<usize>],
    temperature: f64,
) -> Result<Var<'g>> {
    let zs = z.shape();
    if zs != ztilde.shape() {
        return Err(Error::dim("contrastive_loss", &zs, &ztilde.shape()));
    }
    if anchors.is_empty() || anchors.len() != negatives.len() {
        return Err(Error::contract("one negative list per anchor required"));
    }
    let k = negatives[0].len();
    if negatives.iter().any(|n| n.len() != k) {
        return Err(Error::contract("ragged negative lists"));
    }
    let mut anchor_rows = Vec::with_capacity(anchors.len() * (k + 1));
    let mut cand_rows = Vec::with_capacity(anchors.len() * (k + 1));
    for (&t, negs) in anchors.iter().zip(negatives) {
        anchor_rows.extend(std::iter::repeat_n(t, k + 1));
        cand_rows.push(t);
        cand_rows.extend_from_slice(negs);
    }
    let a = ztilde.gather_rows(&anchor_rows)?;
    let c = z.gather_rows(&cand_rows)?;
    let logits = a
        .cosine_rows(c, COSINE_EPS)?
        .scale(1.0 / temperature)
        .reshape(&[anchors.len(), k + 1])?;
    logits.cross_entropy(&vec![0; anchors.len()])
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn cfg(k: usize, pool: NegativePool) -> ContrastiveConfig {
        ContrastiveConfig {
            temperature: 0.1,
            num_negatives: k,
            negative_pool: pool,
        }
    }

    #[test]
    fn exhausts_pool_without_replacement() {
        let plan = MaskPlan::from_starts(6, vec![2], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut negs = sample_negatives(&plan, 6, 2, &cfg(5, NegativePool::OtherFrames), &mut rng)
            .unwrap();
        negs.sort_unstable();
        assert_eq!(negs, vec![0, 1, 3, 4, 5]);
    }

    #[test]
    fn non_masked_pool_excludes_masked_frames() {
        let plan = MaskPlan::from_starts(8, vec![2], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let negs =
                sample_negatives(&plan, 8, 3, &cfg(7, NegativePool::NonMaskedFrames), &mut rng)
                    .unwrap();
            assert!(negs.iter().all(|n| !plan.contains(*n)));
            assert_eq!(negs.len(), 7);
        }
    }

    #[test]
    fn single_frame_has_no_negatives() {
        let plan = MaskPlan::from_starts(1, vec![0], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_negatives(&plan, 1, 0, &cfg(1, NegativePool::OtherFrames), &mut rng),
            Err(Error::NoNegatives)
        ));
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0, NegativePool::OtherFrames).validate().is_err());
        let mut c = cfg(1, NegativePool::OtherFrames);
        c.temperature = 0.0;
        assert!(c.validate().is_err());
        ContrastiveConfig::default().validate().unwrap();
    }
}
