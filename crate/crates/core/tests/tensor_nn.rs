mod support;

use proptest::prelude::*;
use r2se_core::policy::{pretrain_loss, sample_gradient, TrainingSample};
use r2se_core::tensor_nn::{kmeans, softmax, Matrix, NetworkWeights, Params};
use rand::Rng;
use support::*;

fn set_flat(net: &mut NetworkWeights, flat: &[f64]) {
    let mut i = 0;
    for s in net.slices_mut() {
        let n = s.len();
        s.copy_from_slice(&flat[i..i + n]);
        i += n;
    }
}

fn random_sample(rng: &mut impl Rng, input: usize, vocab: usize, perception: usize) -> TrainingSample {
    let raw: Vec<f64> = (0..vocab).map(|_| rng.random_range(0.0..1.0)).collect();
    let total: f64 = raw.iter().sum();
    TrainingSample {
        features: (0..input).map(|_| rng.random_range(-1.0..1.0)).collect(),
        target: raw.iter().map(|v| v / total).collect(),
        perception: (0..perception).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

#[test]
fn forward_matches_second_implementation() {
    for seed in 0..20 {
        let net = small_net(5, &[7, 6], 4, 3, seed);
        let mut r = rng(seed + 100);
        let x: Vec<f64> = (0..5).map(|_| r.random_range(-2.0..2.0)).collect();
        let out = net.forward(&x).unwrap();
        let (logits, perception) = ref_forward(&net, &x);
        for (a, b) in out.logits.iter().zip(&logits).chain(out.perception.iter().zip(&perception)) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn pretrain_gradient_matches_finite_differences() {
    for seed in 0..20 {
        let net = small_net(4, &[6, 5], 5, 3, seed);
        let mut r = rng(seed + 7);
        let sample = random_sample(&mut r, 4, 5, 3);
        let (_, grads) = sample_gradient(&net, &sample, 0.7, None).unwrap();
        let loss = |flat: &[f64]| {
            let mut w = net.clone();
            set_flat(&mut w, flat);
            let out = w.forward(&sample.features).unwrap();
            pretrain_loss(&out, &sample.target, &sample.perception, 0.7).unwrap().loss
        };
        let report = finite_diff_check(loss, &net.flatten(), &grads.flatten(), 1e-6);
        assert!(report.passes(1e-4), "seed {seed}: {report:?}");
    }
}

#[test]
fn finite_difference_checker_is_exact_on_linear_loss() {
    let c = [0.3, -1.2, 2.5];
    let f = |x: &[f64]| x.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
    let r = finite_diff_check(f, &[1.0, 2.0, 3.0], &c, 1e-5);
    assert!(r.max_rel_error < 1e-9, "{r:?}");
}

#[test]
fn shape_mismatch_names_layer() {
    let net = small_net(4, &[6], 3, 2, 0);
    let err = net.forward(&[1.0, 2.0]).unwrap_err().to_string();
    assert!(err.contains("hidden[0]"), "{err}");
}

#[test]
fn kmeans_is_deterministic_for_a_seed() {
    let mut r = rng(3);
    let pts: Vec<Vec<f64>> = (0..200).map(|_| vec![r.random_range(0.0..10.0), r.random_range(0.0..10.0)]).collect();
    let a = kmeans(&pts, 8, 11).unwrap();
    let b = kmeans(&pts, 8, 11).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(z in prop::collection::vec(-50.0f64..50.0, 1..20)) {
        let p = softmax(&z);
        let s: f64 = p.iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|v| *v >= 0.0));
        let q = ref_softmax(&z);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_shift_invariant(z in prop::collection::vec(-20.0f64..20.0, 1..10), c in -100.0f64..100.0) {
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        for (a, b) in softmax(&z).iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn matmul_matches_loops(rows in 1usize..5, inner in 1usize..5, cols in 1usize..5, seed in 0u64..1000) {
        let mut r = rng(seed);
        let a = Matrix::randn(rows, inner, 1.0, &mut r);
        let b = Matrix::randn(inner, cols, 1.0, &mut r);
        let c = a.matmul(&b).unwrap();
        for i in 0..rows {
            for j in 0..cols {
                let mut acc = 0.0;
                for k in 0..inner {
                    acc += a.get(i, k) * b.get(k, j);
                }
                prop_assert!((c.get(i, j) - acc).abs() < 1e-12);
            }
        }
    }
}
