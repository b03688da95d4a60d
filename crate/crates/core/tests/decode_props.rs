use joint_asr::data::{generate_corpus, SynthSpec};
use joint_asr::decode::{
    beam_decode, beam_search, edit_distance, error_rate, exhaustive_prefix_scores, greedy_decode, wer, BeamConfig,
    MergeMode, NgramLm, Smoothing,
};
use joint_asr::tensor::{Graph, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_logprobs(frames: usize, v: usize, scale: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Graph::new();
    let lp = g
        .constant(Tensor::randn(&[frames, v], scale, &mut rng))
        .log_softmax(1)
        .unwrap();
    let out = lp.value().clone();
    out
}

fn seq() -> impl Strategy<Value = Vec<u8>> {
    proptest::collection::vec(0u8..5, 0..15)
}

proptest! {
    #[test]
    fn edit_distance_is_a_metric(a in seq(), b in seq(), c in seq()) {
        prop_assert_eq!(edit_distance(&a, &a), 0);
        prop_assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
        prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
        prop_assert!(edit_distance(&a, &b) <= a.len().max(b.len()));
        prop_assert!(edit_distance(&a, &b) >= a.len().abs_diff(b.len()));
    }

    #[test]
    fn edit_distance_ignores_relabeling(a in seq(), b in seq()) {
        let f = |x: &Vec<u8>| x.iter().map(|v| (v * 7 + 3) % 11).collect::<Vec<u8>>();
        prop_assert_eq!(edit_distance(&a, &b), edit_distance(&f(&a), &f(&b)));
    }

    #[test]
    fn error_rate_of_identity_is_zero(a in proptest::collection::vec(0u8..5, 1..15)) {
        prop_assert_eq!(error_rate(&a, &a).unwrap().rate, 0.0);
    }

    #[test]
    fn single_max_beam_is_best_path(frames in 1usize..30, v in 2usize..8, scale in 0.1f64..5.0, seed: u64) {
        let lp = random_logprobs(frames, v, scale, seed);
        let blank = v - 1;
        let cfg = BeamConfig { beam_size: 1, merge: MergeMode::Max };
        prop_assert_eq!(beam_decode(&lp, blank, &cfg, None).unwrap(), greedy_decode(&lp, blank).unwrap());
    }

    #[test]
    fn full_beam_is_exact(frames in 1usize..5, v in 2usize..4, seed: u64) {
        let lp = random_logprobs(frames, v, 2.0, seed);
        let blank = 0;
        let exact = exhaustive_prefix_scores(&lp, blank).unwrap();
        let cfg = BeamConfig { beam_size: exact.len(), merge: MergeMode::LogSumExp };
        let beam = beam_search(&lp, blank, &cfg, None).unwrap();
        prop_assert_eq!(beam.len(), exact.len());
        for (h, (tokens, score)) in beam.iter().zip(&exact) {
            prop_assert!((h.score - score).abs() < 1e-9, "{:?} {} vs {:?} {}", h.tokens, h.score, tokens, score);
        }
    }

    #[test]
    fn beam_mass_is_a_sub_probability(frames in 1usize..25, v in 2usize..8, beam in 1usize..12, seed: u64) {
        let lp = random_logprobs(frames, v, 1.5, seed);
        let hyps = beam_search(&lp, 0, &BeamConfig::new(beam), None).unwrap();
        prop_assert!(hyps.len() <= beam);
        let mass: f64 = hyps.iter().map(|h| h.score.exp()).sum();
        prop_assert!(mass <= 1.0 + 1e-6, "{}", mass);
        let mut prefixes: Vec<_> = hyps.iter().map(|h| h.tokens.clone()).collect();
        prefixes.sort();
        prefixes.dedup();
        prop_assert_eq!(prefixes.len(), hyps.len());
    }

    #[test]
    fn lm_distribution_sums_to_one(h1 in 0usize..12, h2 in 0usize..12, kn: bool) {
        let corpus = generate_corpus(&SynthSpec { num_utts: 60, ..SynthSpec::default() }).unwrap();
        let smoothing = if kn { Smoothing::KneserNey { discount: 0.75 } } else { Smoothing::AddK { k: 0.1 } };
        let lm = NgramLm::train(&corpus.transcripts(), 3, smoothing).unwrap();
        let vocab: Vec<&str> = lm.vocabulary().collect();
        let history = [vocab[h1 % vocab.len()], vocab[h2 % vocab.len()]];
        let total: f64 = vocab.iter().map(|w| lm.log_prob(&history, w).exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-9, "{}", total);
    }
}

#[test]
fn wer_counts_symmetric_errors() {
    let a = "the cat sat on the mat";
    let b = "the cat sit on mat now";
    let ab = wer(a, b).unwrap();
    let ba = wer(b, a).unwrap();
    assert_eq!(ab.errors, ba.errors);
    assert_eq!(ab.errors, 3);
}

#[test]
fn lm_beats_uniform_on_held_out_text() {
    let spec = SynthSpec {
        num_utts: 400,
        ..SynthSpec::default()
    };
    let train = generate_corpus(&spec).unwrap();
    let held = generate_corpus(&SynthSpec { seed: 99, ..spec }).unwrap();
    for smoothing in [Smoothing::AddK { k: 0.1 }, Smoothing::KneserNey { discount: 0.75 }] {
        let lm = NgramLm::train(&train.transcripts(), 3, smoothing).unwrap();
        let ppl = lm.perplexity(&held.transcripts());
        assert!(ppl <= lm.vocab_size() as f64, "{smoothing:?}: {ppl}");
    }
}

#[test]
fn larger_beams_rarely_score_worse() {
    // Prefix beam search is not guaranteed monotone in the beam size; count
    // how often the best merged score drops when the beam grows.
    let mut drops = 0;
    let trials = 200;
    for seed in 0..trials {
        let lp = random_logprobs(12, 5, 2.0, seed);
        let best = |b| beam_search(&lp, 0, &BeamConfig::new(b), None).unwrap()[0].score;
        let (s4, s16) = (best(4), best(16));
        if s16 < s4 - 1e-12 {
            drops += 1;
        }
    }
    assert!(drops * 20 <= trials, "{drops} of {trials} got worse");
}
