use joint_asr::data::{generate_corpus, normalize_samples, plan_batches, Corpus, SynthSpec, Tokenizer, Utterance};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn text_strategy() -> impl Strategy<Value = String> {
    proptest::string::string_regex("[a-z' ]{0,40}").unwrap()
}

fn corpus_of(lengths: &[usize]) -> Corpus {
    let utts = lengths
        .iter()
        .enumerate()
        .map(|(i, &n)| Utterance {
            id: format!("u{i}"),
            samples: (0..n).map(|k| (k as f64 * 0.37).sin()).collect(),
            sample_rate: 1_000,
            transcript: Some("ab".into()),
        })
        .collect();
    Corpus::new(1_000, utts)
}

/// Magnitude of DFT bin `k` of `x`.
fn dft_mag(x: &[f64], k: usize) -> f64 {
    let n = x.len() as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for (i, v) in x.iter().enumerate() {
        let a = std::f64::consts::TAU * k as f64 * i as f64 / n;
        re += v * a.cos();
        im -= v * a.sin();
    }
    re.hypot(im)
}

proptest! {
    #[test]
    fn tokenizer_round_trips(text in text_strategy()) {
        let tok = Tokenizer::new();
        let ids = tok.encode(&text).unwrap();
        prop_assert!(ids.iter().all(|&i| i < tok.blank()));
        prop_assert_eq!(tok.decode(&ids).unwrap(), text);
    }

    #[test]
    fn batches_respect_budget_and_cover_once(lengths in proptest::collection::vec(1usize..500, 1..60), budget_ms in 500usize..2000, seed: u64) {
        let corpus = corpus_of(&lengths);
        let budget = budget_ms as f64 / 1000.0;
        let plan = plan_batches(&corpus, budget, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut seen = vec![0usize; lengths.len()];
        for (batch, dur) in plan.batches.iter().zip(&plan.durations) {
            prop_assert!(!batch.is_empty());
            let samples: usize = batch.iter().map(|&i| lengths[i]).sum();
            prop_assert!(samples <= budget_ms);
            prop_assert!((dur - samples as f64 / 1000.0).abs() < 1e-9);
            for &i in batch {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn normalization_is_idempotent(x in proptest::collection::vec(-100.0f64..100.0, 1..200)) {
        let once = normalize_samples(&x).unwrap();
        let twice = normalize_samples(&once).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        let n = once.len() as f64;
        let mean = once.iter().sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
    }

    #[test]
    fn clean_tokens_peak_on_their_bin(j in 0usize..9) {
        let spec = SynthSpec { noise_sigma: 0.0, ..SynthSpec::default() };
        let c = spec.inventory()[j];
        let x = spec.render(&c.to_string()).unwrap();
        prop_assert_eq!(x.len(), spec.token_samples);
        let mags: Vec<f64> = (0..=spec.token_samples / 2).map(|k| dft_mag(&x, k)).collect();
        let peak = (0..mags.len()).max_by(|&a, &b| mags[a].total_cmp(&mags[b])).unwrap();
        prop_assert_eq!(peak, j + 1);
        prop_assert!((spec.frequency(j) - (j + 1) as f64 * 1000.0 / 24.0).abs() < 1e-12);
    }
}

#[test]
fn constant_signal_normalizes_to_zero() {
    assert_eq!(normalize_samples(&[3.0; 10]).unwrap(), vec![0.0; 10]);
    assert!(normalize_samples(&[]).is_err());
}

#[test]
fn generation_is_deterministic_and_seed_sensitive() {
    let spec = SynthSpec {
        num_utts: 20,
        ..SynthSpec::default()
    };
    let a = generate_corpus(&spec).unwrap();
    assert_eq!(a, generate_corpus(&spec).unwrap());
    let b = generate_corpus(&SynthSpec { seed: 1, ..spec.clone() }).unwrap();
    assert_ne!(a, b);
    let tok = Tokenizer::new();
    for u in &a.utterances {
        let text = u.transcript.as_deref().unwrap();
        assert_eq!(u.samples.len(), text.len() * spec.token_samples);
        tok.encode(text).unwrap();
    }
}

#[test]
fn corpus_save_load_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        num_utts: 7,
        ..SynthSpec::default()
    };
    let corpus = generate_corpus(&spec).unwrap();
    corpus.save(dir.path()).unwrap();
    assert_eq!(Corpus::load(dir.path()).unwrap(), corpus);

    let unl = corpus.unlabeled();
    let dir2 = tempfile::tempdir().unwrap();
    unl.save(dir2.path()).unwrap();
    let back = Corpus::load(dir2.path()).unwrap();
    assert!(back.utterances.iter().all(|u| u.transcript.is_none()));
    assert_eq!(back, unl);
}

#[test]
fn oversized_utterance_is_rejected() {
    let corpus = corpus_of(&[100, 3000]);
    assert!(plan_batches(&corpus, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}
