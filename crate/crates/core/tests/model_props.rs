use joint_asr::gradcheck::{tiny_contrastive_loss, tiny_setup};
use joint_asr::losses::{
    collapse, contrastive_loss_with, ctc_forward, sample_negatives, ContrastiveConfig, NegativePool,
};
use joint_asr::model::{AcousticModel, ContextTrace, MaskPlan, ModelConfig, Stochastic};
use joint_asr::tensor::{Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn small() -> AcousticModel {
    let cfg = ModelConfig {
        conv_channels: 8,
        ctx_layers: 2,
        ctx_hidden: 8,
        ctx_ffn: 16,
        pos_conv_kernel: 4,
        pos_conv_groups: 2,
        ..ModelConfig::toy()
    };
    AcousticModel::new(cfg, 5).unwrap()
}

fn audio(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn eval_mode<'a>(r1: &'a mut ChaCha8Rng, r2: &'a mut ChaCha8Rng) -> Stochastic<'a> {
    Stochastic {
        train: false,
        layer_drop: r1,
        dropout: r2,
    }
}

fn loss_of(z: &Tensor, zt: &Tensor, anchors: &[usize], negatives: &[Vec<usize>], tau: f64) -> f64 {
    let g = Graph::new();
    contrastive_loss_with(g.constant(z.clone()), g.constant(zt.clone()), anchors, negatives, tau)
        .unwrap()
        .item()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn encoder_frame_count_matches_formula(len in 20usize..400) {
        let model = small();
        let g = Graph::new();
        let z = model.encode(&g, &audio(len, len as u64)).unwrap();
        prop_assert_eq!(z.shape()[0], model.config().num_frames(len).unwrap());
        prop_assert_eq!(z.shape()[1], model.config().ctx_hidden);
    }

    #[test]
    fn masking_replaces_exactly_the_planned_rows(len in 60usize..300, start_p in 0.0f64..0.5, span in 1usize..5, seed: u64) {
        let model = small();
        let g = Graph::new();
        let z = model.encode(&g, &audio(len, seed)).unwrap();
        let frames = z.shape()[0];
        let plan = MaskPlan::sample(frames, start_p, span, &mut ChaCha8Rng::seed_from_u64(seed));
        let zhat = model.apply_mask(&g, z, &plan).unwrap();
        let (zv, zh) = (z.value().clone(), zhat.value().clone());
        let emb = model.params().get(model.mask_embedding_id()).data().to_vec();
        for t in 0..frames {
            if plan.contains(t) {
                prop_assert_eq!(zh.row(t), &emb[..]);
            } else {
                prop_assert_eq!(zh.row(t), zv.row(t));
            }
        }
    }

    #[test]
    fn classifier_rows_are_log_distributions(len in 40usize..200, seed: u64) {
        let lp = small().infer(&audio(len, seed)).unwrap();
        for i in 0..lp.shape()[0] {
            prop_assert!(logsumexp(lp.row(i)).abs() < 1e-9);
        }
    }

    #[test]
    fn contrastive_loss_is_positive(f in 3usize..12, d in 1usize..6, k in 1usize..6, tau in 0.05f64..2.0, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Tensor::randn(&[f, d], 1.0, &mut rng);
        let zt = Tensor::randn(&[f, d], 1.0, &mut rng);
        let plan = MaskPlan::from_starts(f, vec![0, f / 2], 2);
        let cfg = ContrastiveConfig { temperature: tau, num_negatives: k, negative_pool: NegativePool::OtherFrames };
        let negs: Vec<Vec<usize>> = plan.indices.iter()
            .map(|&t| sample_negatives(&plan, f, t, &cfg, &mut rng).unwrap()).collect();
        prop_assert!(loss_of(&z, &zt, &plan.indices, &negs, tau) > 0.0);
    }

    #[test]
    fn contrastive_loss_ignores_row_scale(f in 3usize..10, d in 2usize..6, row in 0usize..10, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Tensor::randn(&[f, d], 1.0, &mut rng);
        let zt = Tensor::randn(&[f, d], 1.0, &mut rng);
        let anchors = vec![0, 1];
        let negs = vec![vec![2, f - 1], vec![0, 2]];
        let base = loss_of(&z, &zt, &anchors, &negs, 0.3);
        let r = row % f;
        let mut scaled = z.clone();
        for j in 0..d {
            scaled.data_mut()[r * d + j] *= 7.3;
        }
        prop_assert!((loss_of(&scaled, &zt, &anchors, &negs, 0.3) - base).abs() < 1e-9);
    }

    #[test]
    fn contrastive_loss_falls_as_the_positive_aligns(theta_a in 0.0f64..3.1, theta_b in 0.0f64..3.1) {
        // positive cosine cos(theta), negative cosine held at 0
        let make = |th: f64| {
            let z = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
            let zt = Tensor::from_rows(&[vec![th.cos(), 0.0, th.sin()], vec![0.0, 1.0, 0.0]]).unwrap();
            loss_of(&z, &zt, &[0], &[vec![1]], 0.5)
        };
        let (lo, hi) = if theta_a < theta_b { (theta_a, theta_b) } else { (theta_b, theta_a) };
        prop_assert!(make(lo) <= make(hi) + 1e-12);
    }

    #[test]
    fn ctc_is_invariant_to_relabeling(frames in 3usize..7, len in 1usize..3, seed: u64) {
        let v = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = Tensor::randn(&[frames, v], 1.0, &mut rng);
        let g = Graph::new();
        let lp = g.constant(raw).log_softmax(1).unwrap().value().clone();
        let tokens: Vec<usize> = (0..len).map(|_| rng.random_range(1..v)).collect();
        // permute the non-blank labels 1 -> 2 -> 3 -> 1, blank 0 fixed
        let perm = |x: usize| if x == 0 { 0 } else { x % 3 + 1 };
        let mut moved = Tensor::zeros(&[frames, v]);
        for t in 0..frames {
            for c in 0..v {
                moved.data_mut()[t * v + perm(c)] = lp.at2(t, c);
            }
        }
        let mapped: Vec<usize> = tokens.iter().map(|&c| perm(c)).collect();
        let a = ctc_forward(&lp, &tokens, 0).unwrap();
        let b = ctc_forward(&moved, &mapped, 0).unwrap();
        prop_assert!(a == b || (a - b).abs() < 1e-12, "{} vs {}", a, b);
    }

    #[test]
    fn collapse_inverts_blank_separated_paths(path in proptest::collection::vec(0usize..4, 0..20)) {
        let once = collapse(&path, 0);
        prop_assert!(!once.contains(&0));
        prop_assert!(once.len() <= path.len());
        let spelled: Vec<usize> = once.iter().flat_map(|&c| [c, c, 0]).collect();
        prop_assert_eq!(collapse(&spelled, 0), once);
    }
}

#[test]
fn example_loss_value() {
    // context vector equal to its target, two orthogonal negatives, tau 0.1
    let z = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
    let l = loss_of(&z, &z, &[0], &[vec![1, 2]], 0.1);
    let oracle = -(10.0f64.exp() / (10.0f64.exp() + 2.0)).ln();
    assert!((l - oracle).abs() < 1e-15);
    assert!((l - 9.079e-5).abs() < 1e-8, "{l}");
}

#[test]
fn anchor_never_drawn_and_negatives_uniform() {
    let frames = 20;
    let plan = MaskPlan::from_starts(frames, vec![7], 1);
    let cfg = ContrastiveConfig {
        temperature: 0.1,
        num_negatives: 1,
        negative_pool: NegativePool::OtherFrames,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let draws = 100_000;
    let mut hist = vec![0usize; frames];
    for _ in 0..draws {
        let n = sample_negatives(&plan, frames, 7, &cfg, &mut rng).unwrap();
        hist[n[0]] += 1;
    }
    assert_eq!(hist[7], 0);
    let p = 1.0 / (frames - 1) as f64;
    let mean = draws as f64 * p;
    let sd = (draws as f64 * p * (1.0 - p)).sqrt();
    for (f, &c) in hist.iter().enumerate().filter(|(f, _)| *f != 7) {
        assert!((c as f64 - mean).abs() < 4.0 * sd, "frame {f}: {c} vs {mean}");
    }

    // without replacement when the pool is large enough
    let cfg = ContrastiveConfig {
        num_negatives: 10,
        ..cfg
    };
    for _ in 0..10_000 {
        let mut n = sample_negatives(&plan, frames, 7, &cfg, &mut rng).unwrap();
        assert!(!n.contains(&7));
        n.sort_unstable();
        n.dedup();
        assert_eq!(n.len(), 10);
    }
}

#[test]
fn mask_embedding_receives_gradient() {
    let (model, audio) = tiny_setup(4).unwrap();
    let g = Graph::new();
    let loss = tiny_contrastive_loss(&model, &g, model.params(), &audio).unwrap();
    let grads = g.backward(loss).unwrap().into_param_grads(model.params());
    let ge = grads.get(model.mask_embedding_id()).unwrap();
    assert!(ge.max_abs() > 0.0);
}

#[test]
fn attention_rows_are_distributions() {
    let model = small();
    let g = Graph::new();
    let z = model.encode(&g, &audio(150, 1)).unwrap();
    let (mut r1, mut r2) = (ChaCha8Rng::seed_from_u64(1), ChaCha8Rng::seed_from_u64(2));
    let mut trace = ContextTrace::default();
    model
        .contextualize_traced(&g, z, &mut eval_mode(&mut r1, &mut r2), Some(&mut trace))
        .unwrap();
    assert_eq!(trace.executed, vec![true; model.config().ctx_layers]);
    assert_eq!(trace.attention.len(), model.config().ctx_layers);
    for layer in &trace.attention {
        assert_eq!(layer.len(), model.config().ctx_heads);
        for map in layer {
            for i in 0..map.shape()[0] {
                assert!((map.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn positional_convolution_breaks_permutation_equivariance() {
    // permuting the input frames does not simply permute the outputs
    let model = small();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let zhat = Tensor::randn(&[6, model.config().ctx_hidden], 1.0, &mut rng);
    let perm = [1usize, 0, 2, 3, 4, 5];
    let run = |x: Tensor| {
        let g = Graph::new();
        let (mut r1, mut r2) = (ChaCha8Rng::seed_from_u64(1), ChaCha8Rng::seed_from_u64(2));
        let out = model
            .contextualize(&g, g.constant(x), &mut eval_mode(&mut r1, &mut r2))
            .unwrap();
        let v = out.value().clone();
        v
    };
    let base = run(zhat.clone());
    let rows: Vec<Vec<f64>> = perm.iter().map(|&p| zhat.row(p).to_vec()).collect();
    let permuted = run(Tensor::from_rows(&rows).unwrap());
    let max_diff = perm
        .iter()
        .enumerate()
        .flat_map(|(i, &p)| permuted.row(i).iter().zip(base.row(p)).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    assert!(max_diff > 1e-6, "{max_diff}");
}

#[test]
fn eval_inference_is_deterministic() {
    let model = small();
    let x = audio(180, 8);
    assert_eq!(model.infer(&x).unwrap(), model.infer(&x).unwrap());
    let clone = AcousticModel::new(model.config().clone(), 5).unwrap();
    assert_eq!(clone.infer(&x).unwrap(), model.infer(&x).unwrap());
}
