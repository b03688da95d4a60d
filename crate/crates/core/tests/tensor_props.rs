use joint_asr::tensor::{ConvSpec, Graph, Tensor};
use joint_asr::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (n, k) = a.dims2().unwrap();
    let (_, m) = b.dims2().unwrap();
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            for l in 0..k {
                out[i * m + j] += a.at2(i, l) * b.at2(l, j);
            }
        }
    }
    out
}

/// Direct sum for a single-group convolution without padding.
fn naive_conv(x: &Tensor, w: &Tensor, stride: usize) -> Vec<f64> {
    let (c_in, t) = x.dims2().unwrap();
    let (c_out, k) = (w.shape()[0], w.shape()[2]);
    let t_out = (t - k) / stride + 1;
    let mut out = vec![0.0; c_out * t_out];
    for o in 0..c_out {
        for p in 0..t_out {
            for c in 0..c_in {
                for j in 0..k {
                    out[o * t_out + p] += w.data()[(o * c_in + c) * k + j] * x.at2(c, p * stride + j);
                }
            }
        }
    }
    out
}

proptest! {
    #[test]
    fn conv_output_length_formula(t in 1usize..400, k in 1usize..40, stride in 1usize..8) {
        prop_assume!(t >= k);
        prop_assert_eq!(ConvSpec::strided(stride).output_len(t, k).unwrap(), (t - k) / stride + 1);
    }

    #[test]
    fn conv1d_matches_direct_sum(t in 4usize..40, k in 1usize..5, stride in 1usize..4, c_in in 1usize..3, c_out in 1usize..3, seed: u64) {
        prop_assume!(t >= k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::randn(&[c_in, t], 1.0, &mut rng);
        let w = Tensor::randn(&[c_out, c_in, k], 1.0, &mut rng);
        let g = Graph::new();
        let y = g.constant(x.clone()).conv1d(g.constant(w.clone()), None, ConvSpec::strided(stride)).unwrap();
        let y = y.value().clone();
        prop_assert_eq!(y.shape(), &[c_out, (t - k) / stride + 1][..]);
        for (a, b) in y.data().iter().zip(naive_conv(&x, &w, stride)) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn matmul_matches_triple_loop(n in 1usize..9, k in 1usize..9, m in 1usize..9, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Tensor::randn(&[n, k], 1.0, &mut rng);
        let b = Tensor::randn(&[k, m], 1.0, &mut rng);
        let g = Graph::new();
        let c = g.constant(a.clone()).matmul(g.constant(b.clone())).unwrap();
        for (x, y) in c.value().data().iter().zip(naive_matmul(&a, &b)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(n in 1usize..6, m in 1usize..12, scale in 0.1f64..50.0, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::randn(&[n, m], scale, &mut rng);
        let g = Graph::new();
        let p = g.constant(x.clone()).softmax(1).unwrap().value().clone();
        let lp = g.constant(x).log_softmax(1).unwrap().value().clone();
        for i in 0..n {
            let s: f64 = p.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(p.row(i).iter().all(|v| *v >= 0.0));
            for (a, b) in p.row(i).iter().zip(lp.row(i)) {
                prop_assert!((a.ln() - b).abs() < 1e-9 || *a < 1e-300);
            }
        }
    }

    #[test]
    fn ops_are_deterministic(seed: u64) {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::randn(&[5, 7], 1.0, &mut rng);
            let g = Graph::new();
            let y = g.constant(x).dropout(0.3, true, &mut rng).unwrap().gelu().softmax(1).unwrap();
            let out = y.value().clone();
            out
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn all_equal_logits_give_uniform_softmax() {
    let g = Graph::new();
    let p = g.constant(Tensor::full(&[1, 4], 3.7)).softmax(1).unwrap();
    assert!(p.value().data().iter().all(|v| (v - 0.25).abs() < 1e-15));
}

#[test]
fn second_backward_without_reset_fails() {
    let g = Graph::new();
    let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
    let loss = x.mul(x).unwrap().sum();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.wrt(x).unwrap().data(), &[2.0, 4.0]);
    assert!(matches!(g.backward(loss), Err(Error::GraphConsumed)));
    g.reset();
    let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
    assert_eq!(g.backward(x.sum()).unwrap().wrt(x).unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn elementary_gradients() {
    // d/dp sum(p) = 1, d/dp sum(p^2)/2 = p
    let g = Graph::new();
    let p = g.leaf(Tensor::vector(vec![0.5, -1.5, 2.0]));
    assert_eq!(g.backward(p.sum()).unwrap().wrt(p).unwrap().data(), &[1.0; 3]);
    let g = Graph::new();
    let p = g.leaf(Tensor::vector(vec![0.5, -1.5, 2.0]));
    let loss = p.mul(p).unwrap().sum().scale(0.5);
    assert_eq!(g.backward(loss).unwrap().wrt(p).unwrap().data(), &[0.5, -1.5, 2.0]);
}
