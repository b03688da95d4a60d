//! Central finite-difference checks of every differentiable op and of both
//! end-to-end losses.
//!
//! The numeric side only ever calls forward passes, so it stays independent of
//! the backward rules it checks. The error of entry `i` is
//! `|analytic − numeric| / max(|analytic|, |numeric|, DENOM_FLOOR)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::losses::{contrastive_loss, ctc_loss, ContrastiveConfig, CtcTarget, NegativePool};
use crate::model::{AcousticModel, MaskPlan, ModelConfig, Stochastic};
use crate::params::ParamStore;
use crate::tensor::{ConvSpec, Graph, Tensor, Var};

pub const STEP: f64 = 1e-5;
pub const DENOM_FLOOR: f64 = 1e-4;
/// Tolerance for elementary ops.
pub const TOL_ELEMENTARY: f64 = 1e-5;
/// Tolerance for compositions through softmax / log paths.
pub const TOL_COMPOSITE: f64 = 1e-3;

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(DENOM_FLOOR)
}

/// Compares backward gradients of `f` with central differences over every
/// entry of every input.
pub fn check_inputs<F>(name: &str, inputs: &[Tensor], tolerance: f64, f: F) -> Result<CheckReport>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let g = Graph::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = f(&g, &vars)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |values: &[Tensor]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<Var<'_>> = values.iter().map(|t| g.constant(t.clone())).collect();
        Ok(f(&g, &vars)?.item())
    };

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut work = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.numel() {
            let orig = input.data()[i];
            work[k].data_mut()[i] = orig + STEP;
            let up = eval(&work)?;
            work[k].data_mut()[i] = orig - STEP;
            let down = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic[k].data()[i], numeric));
            checked += 1;
        }
    }
    Ok(CheckReport {
        name: name.to_string(),
        checked,
        max_rel_err: worst,
        tolerance,
        passed: worst < tolerance,
    })
}

/// Same as [`check_inputs`] but perturbs every scalar of a parameter store.
pub fn check_params<F>(name: &str, store: &ParamStore, tolerance: f64, f: F) -> Result<CheckReport>
where
    F: for<'g> Fn(&'g Graph, &ParamStore) -> Result<Var<'g>>,
{
    let g = Graph::new();
    let loss = f(&g, store)?;
    let analytic = g.backward(loss)?.into_param_grads(store);

    let mut work = store.clone();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for id in store.ids() {
        let a = analytic.get(id).cloned().unwrap_or_else(|| Tensor::zeros(store.get(id).shape()));
        for i in 0..store.get(id).numel() {
            let orig = store.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + STEP;
            let up = f(&Graph::new(), &work)?.item();
            work.get_mut(id).data_mut()[i] = orig - STEP;
            let down = f(&Graph::new(), &work)?.item();
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            worst = worst.max(rel_err(a.data()[i], numeric));
            checked += 1;
        }
    }
    Ok(CheckReport {
        name: name.to_string(),
        checked,
        max_rel_err: worst,
        tolerance,
        passed: worst < tolerance,
    })
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

/// `Σ y ⊙ w` for a fixed random weighting `w`, so every output entry gets a
/// distinct upstream gradient.
fn weighted_sum<'g>(y: Var<'g>, seed: u64) -> Result<Var<'g>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = y.graph().constant(randn(&y.shape(), &mut rng));
    Ok(y.mul(w)?.sum())
}

/// The four-frame model used by the end-to-end checks, with a fixed input.
pub fn tiny_setup(seed: u64) -> Result<(AcousticModel, Vec<f64>)> {
    let model = AcousticModel::new(ModelConfig::tiny(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let audio: Vec<f64> = (0..20).map(|_| rng.random_range(-1.5..1.5)).collect();
    Ok((model, audio))
}

/// Supervised loss of `model` (with `store` substituted for its parameters).
pub fn tiny_ctc_loss<'g>(
    model: &AcousticModel,
    g: &'g Graph,
    store: &ParamStore,
    audio: &[f64],
) -> Result<Var<'g>> {
    let view = model.with_params(store);
    let z = view.encode(g, audio)?;
    let mut r1 = ChaCha8Rng::seed_from_u64(1);
    let mut r2 = ChaCha8Rng::seed_from_u64(2);
    let mut st = Stochastic {
        train: false,
        layer_drop: &mut r1,
        dropout: &mut r2,
    };
    let zt = view.contextualize(g, z, &mut st)?;
    let lp = view.classify(g, zt)?;
    let target = CtcTarget::new("tiny", vec![1, 3], model.config().vocab_size, model.config().blank())?;
    ctc_loss(lp, &target, model.config().blank())
}

/// Unsupervised loss of `model` with a fixed mask plan and fixed negatives.
pub fn tiny_contrastive_loss<'g>(
    model: &AcousticModel,
    g: &'g Graph,
    store: &ParamStore,
    audio: &[f64],
) -> Result<Var<'g>> {
    let view = model.with_params(store);
    let z = view.encode(g, audio)?;
    let frames = z.shape()[0];
    let plan = MaskPlan::from_starts(frames, vec![1], 2);
    let zhat = view.apply_mask(g, z, &plan)?;
    let mut r1 = ChaCha8Rng::seed_from_u64(1);
    let mut r2 = ChaCha8Rng::seed_from_u64(2);
    let mut st = Stochastic {
        train: false,
        layer_drop: &mut r1,
        dropout: &mut r2,
    };
    let zt = view.contextualize(g, zhat, &mut st)?;
    let cfg = ContrastiveConfig {
        temperature: 0.5,
        num_negatives: 2,
        negative_pool: NegativePool::OtherFrames,
    };
    contrastive_loss(z, zt, &plan, &cfg, &mut ChaCha8Rng::seed_from_u64(3))
}

/// Names accepted by [`run_suite`].
pub const SUITES: &[&str] = &[
    "matmul",
    "add",
    "sub",
    "mul",
    "add_bias",
    "scale",
    "transpose",
    "reshape",
    "slice_cols",
    "concat",
    "gather_rows",
    "replace_rows",
    "conv1d",
    "conv1d_grouped",
    "softmax",
    "log_softmax",
    "layer_norm",
    "gelu",
    "dropout",
    "cosine_rows",
    "cross_entropy",
    "sum",
    "mean",
    "ctc",
    "contrastive",
    "classifier",
    "model_ctc",
    "model_contrastive",
];

/// Runs one named suite.
pub fn run_suite(name: &str) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(
        name.bytes().fold(17u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64)),
    );
    let e = TOL_ELEMENTARY;
    let c = TOL_COMPOSITE;
    match name {
        "matmul" => {
            let ins = [randn(&[3, 4], &mut rng), randn(&[4, 2], &mut rng)];
            check_inputs(name, &ins, e, |_, v| weighted_sum(v[0].matmul(v[1])?, 1))
        }
        "add" => {
            let ins = [randn(&[3, 4], &mut rng), randn(&[3, 4], &mut rng)];
            check_inputs(name, &ins, e, |_, v| weighted_sum(v[0].add(v[1])?, 1))
        }
        "sub" => {
            let ins = [randn(&[3, 4], &mut rng), randn(&[3, 4], &mut rng)];
            check_inputs(name, &ins, e, |_, v| weighted_sum(v[0].sub(v[1])?, 1))
        }
        "mul" => {
            let ins = [randn(&[3, 4], &mut rng), randn(&[3, 4], &mut rng)];
            check_inputs(name, &ins, e, |_, v| weighted_sum(v[0].mul(v[1])?, 1))
        }
        "add_bias" => {
            let ins = [randn(&[3, 4], &mut rng), randn(&[4], &mut rng)];
            check_inputs(name, &ins, e, |_, v| weighted_sum(v[0].add_bias(v[1])?, 1))
        }
        "scale" => {
            let ins = [randn(&[5], &mut rng)];
            check_inputs(name, &ins, e, |_, v| weighted_sum(v[0].scale(-2.5), 1))
        }
        "transpose" => {
            let ins = [randn(&[3, 5], &mut rng)];
            check_inputs(name, &ins, e, |_, v| weighted_sum(v[0].transpose()?, 1))
        }
        "reshape" => {
            let ins = [randn(&[3, 4], &mut rng)];
            check_inputs(name, &ins, e, |_, v| weighted_sum(v[0].reshape(&[2, 6])?, 1))
        }
        "slice_cols" => {
            let ins = [randn(&[3, 6], &mut rng)];
            check_inputs(name, &ins, e, |_, v| weighted_sum(v[0].slice_cols(2, 3)?, 1))
        }
        "concat" => {
            let ins = [
                randn(&[3, 2], &mut rng),
                randn(&[3, 4], &mut rng),
                randn(&[2, 6], &mut rng),
            ];
            check_inputs(name, &ins, e, |_, v| {
                let cols = Var::concat(&[v[0], v[1]], 1)?;
                weighted_sum(Var::concat(&[cols, v[2]], 0)?, 1)
            })
        }
        "gather_rows" => {
            let ins = [randn(&[4, 3], &mut rng)];
            check_inputs(name, &ins, e, |_, v| {
                weighted_sum(v[0].gather_rows(&[2, 0, 2, 3])?, 1)
            })
        }
        "replace_rows" => {
            let ins = [randn(&[5, 3], &mut rng), randn(&[3], &mut rng)];
            check_inputs(name, &ins, e, |_, v| {
                weighted_sum(v[0].replace_rows(v[1], &[1, 3, 4])?, 1)
            })
        }
        "conv1d" => {
            let ins = [
                randn(&[2, 11], &mut rng),
                randn(&[3, 2, 3], &mut rng),
                randn(&[3], &mut rng),
            ];
            check_inputs(name, &ins, e, |_, v| {
                weighted_sum(v[0].conv1d(v[1], Some(v[2]), ConvSpec::strided(2))?, 1)
            })
        }
        "conv1d_grouped" => {
            let ins = [randn(&[4, 9], &mut rng), randn(&[4, 2, 4], &mut rng)];
            check_inputs(name, &ins, e, |_, v| {
                let spec = ConvSpec {
                    stride: 1,
                    groups: 2,
                    padding: 2,
                };
                weighted_sum(v[0].conv1d(v[1], None, spec)?, 1)
            })
        }
        "softmax" => {
            let ins = [randn(&[3, 5], &mut rng)];
            check_inputs(name, &ins, e, |_, v| weighted_sum(v[0].softmax(1)?, 1))
        }
        "log_softmax" => {
            let ins = [randn(&[2, 3, 4], &mut rng)];
            check_inputs(name, &ins, e, |_, v| weighted_sum(v[0].log_softmax(1)?, 1))
        }
        "layer_norm" => {
            let ins = [
                randn(&[3, 5], &mut rng),
                randn(&[5], &mut rng),
                randn(&[5], &mut rng),
            ];
            check_inputs(name, &ins, e, |_, v| {
                weighted_sum(v[0].layer_norm(v[1], v[2], 1e-5)?, 1)
            })
        }
        "gelu" => {
            let ins = [randn(&[3, 4], &mut rng)];
            check_inputs(name, &ins, e, |_, v| weighted_sum(v[0].gelu(), 1))
        }
        "dropout" => {
            let ins = [randn(&[4, 4], &mut rng)];
            check_inputs(name, &ins, e, |_, v| {
                let mut r = ChaCha8Rng::seed_from_u64(9);
                weighted_sum(v[0].dropout(0.3, true, &mut r)?, 1)
            })
        }
        "cosine_rows" => {
            let ins = [randn(&[4, 3], &mut rng), randn(&[4, 3], &mut rng)];
            check_inputs(name, &ins, e, |_, v| weighted_sum(v[0].cosine_rows(v[1], 1e-8)?, 1))
        }
        "cross_entropy" => {
            let ins = [randn(&[3, 4], &mut rng)];
            check_inputs(name, &ins, e, |_, v| v[0].cross_entropy(&[0, 3, 1]))
        }
        "sum" => {
            let ins = [randn(&[2, 3], &mut rng)];
            check_inputs(name, &ins, e, |_, v| Ok(v[0].sum()))
        }
        "mean" => {
            let ins = [randn(&[2, 3], &mut rng)];
            check_inputs(name, &ins, e, |_, v| Ok(v[0].mean()))
        }
        "ctc" => {
            let ins = [randn(&[6, 4], &mut rng)];
            check_inputs(name, &ins, c, |_, v| v[0].log_softmax(1)?.ctc(&[0, 2, 2], 3))
        }
        "contrastive" => {
            let ins = [randn(&[6, 4], &mut rng), randn(&[6, 4], &mut rng)];
            check_inputs(name, &ins, c, |_, v| {
                let plan = MaskPlan::from_starts(6, vec![1, 4], 1);
                let cfg = ContrastiveConfig {
                    temperature: 0.5,
                    num_negatives: 3,
                    negative_pool: NegativePool::OtherFrames,
                };
                contrastive_loss(v[0], v[1], &plan, &cfg, &mut ChaCha8Rng::seed_from_u64(4))
            })
        }
        "classifier" => {
            let (model, audio) = tiny_setup(11)?;
            let (w, b) = model.classifier_ids();
            let zt = {
                let g = Graph::new();
                let z = model.encode(&g, &audio)?;
                let v = z.value().clone();
                v
            };
            let ins = [zt, model.params().get(w).clone(), model.params().get(b).clone()];
            check_inputs(name, &ins, c, |_, v| {
                let lp = v[0].matmul(v[1])?.add_bias(v[2])?.log_softmax(1)?;
                weighted_sum(lp, 1)
            })
        }
        "model_ctc" => {
            let (model, audio) = tiny_setup(5)?;
            check_params(name, model.params(), c, |g, store| {
                tiny_ctc_loss(&model, g, store, &audio)
            })
        }
        "model_contrastive" => {
            let (model, audio) = tiny_setup(6)?;
            check_params(name, model.params(), c, |g, store| {
                tiny_contrastive_loss(&model, g, store, &audio)
            })
        }
        other => Err(crate::Error::Config(format!(
            "unknown gradcheck suite {other}; known: {}",
            SUITES.join(", ")
        ))),
    }
}

/// Runs every suite whose name contains `selector` (all when `None`).
pub fn run_all(selector: Option<&str>) -> Result<Vec<CheckReport>> {
    SUITES
        .iter()
        .filter(|s| selector.is_none_or(|sel| s.contains(sel)))
        .map(|s| run_suite(s))
        .collect()
}
