use joint_asr::data::{generate_corpus, Corpus, SynthSpec};
use joint_asr::model::{AcousticModel, ModelConfig};
use joint_asr::optim::{AdamConfig, AdamState, LrSchedule};
use joint_asr::params::{ParamGrads, ParamGroup, ParamId, ParamStore};
use joint_asr::tensor::Tensor;
use joint_asr::train::{trace_matches, TrainData, Trainer, TrainerConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn store(shapes: &[usize], seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    for (i, &n) in shapes.iter().enumerate() {
        s.add(&format!("p{i}"), ParamGroup::Context, Tensor::randn(&[n], 1.0, &mut rng));
    }
    s
}

fn grads_for(s: &ParamStore, seed: u64) -> ParamGrads {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = ParamGrads::zeros_like(s);
    for id in s.ids() {
        g.set(id, Tensor::randn(s.get(id).shape(), 1.0, &mut rng));
    }
    g
}

fn small_model() -> ModelConfig {
    ModelConfig {
        conv_channels: 16,
        ctx_layers: 1,
        ctx_hidden: 16,
        ctx_ffn: 32,
        pos_conv_kernel: 4,
        pos_conv_groups: 2,
        dropout_p: 0.0,
        layer_drop_p: 0.0,
        ..ModelConfig::toy()
    }
}

fn corpus(n: usize, seed: u64) -> Corpus {
    generate_corpus(&SynthSpec {
        num_utts: n,
        words_per_utt: (1, 2),
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn sup_only(cfg: TrainerConfig, n: usize) -> Trainer {
    let data = TrainData::new(&corpus(n, 21), &Corpus::default(), &corpus(3, 22)).unwrap();
    Trainer::new(AcousticModel::new(small_model(), 0).unwrap(), cfg, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adam_ignores_registration_order(shapes in proptest::collection::vec(1usize..6, 1..5), steps in 1usize..6, seed: u64) {
        let init = store(&shapes, seed);
        let ids: Vec<ParamId> = init.ids().collect();
        let mut rev_ids = ids.clone();
        rev_ids.reverse();
        let (mut a, mut b) = (init.clone(), init.clone());
        let mut opt_a = AdamState::new(&a, ids, AdamConfig::default());
        let mut opt_b = AdamState::new(&b, rev_ids, AdamConfig::default());
        for k in 0..steps {
            let g = grads_for(&init, seed.wrapping_add(k as u64));
            opt_a.apply(&mut a, &g, 1e-2).unwrap();
            opt_b.apply(&mut b, &g, 1e-2).unwrap();
        }
        for id in init.ids() {
            prop_assert_eq!(a.get(id), b.get(id));
        }
    }

    #[test]
    fn first_adam_step_moves_by_lr(g in -10.0f64..10.0, p in -3.0f64..3.0, lr in 1e-4f64..1e-1) {
        prop_assume!(g.abs() > 1e-3);
        let mut s = ParamStore::new();
        let id = s.add("w", ParamGroup::Encoder, Tensor::vector(vec![p]));
        let cfg = AdamConfig { weight_decay: 0.0, ..AdamConfig::default() };
        let mut opt = AdamState::new(&s, vec![id], cfg.clone());
        let mut grads = ParamGrads::zeros_like(&s);
        grads.set(id, Tensor::vector(vec![g]));
        opt.apply(&mut s, &grads, lr).unwrap();
        // bias-corrected moments are g and g^2 after one step
        let expected = p - lr * g / (g.abs() + cfg.eps);
        prop_assert!((s.get(id).data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn schedules_stay_in_range_and_round_trip(peak in 1e-5f64..1e-2, warmup in 0u64..50, extra in 1u64..500, step in 0u64..1000) {
        for sched in [LrSchedule::unsupervised(peak, warmup, warmup + extra), LrSchedule::supervised(peak, warmup, warmup + extra)] {
            let lr = sched.lr_at(step);
            prop_assert!(lr >= 0.0 && lr <= peak * (1.0 + 1e-12));
            let back: LrSchedule = serde_json::from_str(&serde_json::to_string(&sched).unwrap()).unwrap();
            prop_assert_eq!(&back, &sched);
            prop_assert_eq!(back.lr_at(step).to_bits(), lr.to_bits());
        }
    }
}

#[test]
fn supervised_training_overfits_a_tiny_set() {
    let cfg = TrainerConfig {
        total_updates: 200,
        warmup_updates: 10,
        lr_sup: 1e-2,
        eval_every: 1_000,
        specaugment: false,
        sup_batch_seconds: 10.0,
        ..TrainerConfig::toy()
    };
    let mut t = sup_only(cfg, 10);
    let mut last = f64::INFINITY;
    while !t.is_done() {
        if let Some(l) = t.step().unwrap().loss {
            last = l;
        }
    }
    assert!(last < 0.1, "final loss {last}");
}

#[test]
fn no_unlabeled_data_gives_only_supervised_updates() {
    let cfg = TrainerConfig {
        total_updates: 12,
        eval_every: 1_000,
        update_ratio: 3,
        ..TrainerConfig::toy()
    };
    let out = sup_only(cfg, 6).run().unwrap();
    assert_eq!(out.state.trace, "S".repeat(12));
    assert!(trace_matches(&out.state.trace, 3, false));
    assert!(!trace_matches("SUS", 3, false));
}

#[test]
fn augmentation_stream_untouched_during_warmup() {
    let cfg = TrainerConfig {
        total_updates: 8,
        warmup_updates: 5,
        eval_every: 1_000,
        specaugment: true,
        ..TrainerConfig::toy()
    };
    let mut t = sup_only(cfg, 6);
    for _ in 0..5 {
        t.step().unwrap();
    }
    assert_eq!(t.state().rng.augmentation, 0);
    t.step().unwrap();
    assert_eq!(t.state().rng.augmentation, 1);
}
