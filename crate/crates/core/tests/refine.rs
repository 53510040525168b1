mod support;

use proptest::prelude::*;
use r2se_core::adapters::init_ensemble;
use r2se_core::refine::{
    combined_loss, grpo_loss, importance_weight, refine_specialists, weighted_grpo_loss, ProcessSignals, RefineClip,
    RefineConfig,
};
use rand::Rng;
use support::*;

fn distribution(r: &mut impl Rng, m: usize) -> Vec<f64> {
    let z: Vec<f64> = (0..m).map(|_| r.random_range(-2.0..2.0)).collect();
    ref_softmax(&z)
}

/// `Σ w (−R ln p + λ C p)` written directly.
fn ref_weighted(logits: &[f64], w: &[f64], rw: &[f64], c: &[f64], lambda: f64) -> f64 {
    let p = ref_softmax(logits);
    (0..p.len()).map(|m| w[m] * (-rw[m] * p[m].ln() + lambda * c[m] * p[m])).sum()
}

#[test]
fn weighted_loss_value_and_gradient() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let m = r.random_range(2..9);
        let z: Vec<f64> = (0..m).map(|_| r.random_range(-3.0..3.0)).collect();
        let w: Vec<f64> = (0..m).map(|_| r.random_range(0.1..3.0)).collect();
        let rw: Vec<f64> = (0..m).map(|_| r.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..m).map(|_| r.random_range(0.0..5.0)).collect();
        let out = weighted_grpo_loss(&z, &w, &rw, &c, 0.6);
        assert!((out.loss - ref_weighted(&z, &w, &rw, &c, 0.6)).abs() < 1e-10);
        let report = finite_diff_check(|x| ref_weighted(x, &w, &rw, &c, 0.6), &z, &out.d_logits, 1e-6);
        assert!(report.passes(1e-4), "seed {seed}: {report:?}");
    }
}

#[test]
fn combined_loss_gradient_with_frozen_weights() {
    for seed in 0..20 {
        let mut r = rng(seed + 50);
        let m = 6;
        let z: Vec<f64> = (0..m).map(|_| r.random_range(-2.0..2.0)).collect();
        let gen = distribution(&mut r, m);
        let target = distribution(&mut r, m);
        let signals = ProcessSignals {
            rewards: (0..m).map(|_| r.random_range(0.0..1.0)).collect(),
            costs: (0..m).map(|_| r.random_range(0.0..3.0)).collect(),
            scores: vec![],
        };
        let cfg = RefineConfig { lambda: 0.7, alpha_pretrain: 0.4, ..RefineConfig::default() };
        let out = combined_loss(&z, &gen, &target, &signals, &cfg).unwrap();
        let p = ref_softmax(&z);
        let w: Vec<f64> = p.iter().zip(&gen).map(|(a, b)| (a / b).clamp(cfg.is_clamp.0, cfg.is_clamp.1)).collect();
        // Importance weights are held at their current value.
        let f = |x: &[f64]| {
            let q = ref_softmax(x);
            let kl: f64 = target.iter().zip(&q).map(|(t, qi)| if *t > 0.0 { t * (t / qi).ln() } else { 0.0 }).sum();
            ref_weighted(x, &w, &signals.rewards, &signals.costs, 0.7) + 0.4 * kl
        };
        assert!((out.loss - f(&z)).abs() < 1e-10);
        let report = finite_diff_check(f, &z, &out.d_logits, 1e-6);
        assert!(report.passes(1e-4), "seed {seed}: {report:?}");
    }
}

#[test]
fn grpo_loss_rejects_mismatched_lengths() {
    let s = ProcessSignals { rewards: vec![0.0; 3], costs: vec![0.0; 3], scores: vec![] };
    let err = grpo_loss(&[0.0; 4], &[0.25; 4], &s, &RefineConfig::default());
    assert!(matches!(err, Err(r2se_core::Error::Shape { .. })));
}

#[test]
fn refinement_raises_expected_reward_and_is_deterministic() {
    let base = small_net(5, &[8], 6, 2, 4);
    let mut r = rng(8);
    let clips: Vec<RefineClip> = (0..6)
        .map(|i| {
            let embedding: Vec<f64> = (0..8).map(|_| r.random_range(0.0..1.0)).collect();
            let gen_probs = ref_softmax(&base.plan_head.apply(&embedding));
            RefineClip {
                id: format!("c{i}"),
                embedding,
                gen_probs,
                target: distribution(&mut r, 6),
                signals: ProcessSignals {
                    rewards: (0..6).map(|m| if m == 2 { 1.0 } else { 0.1 }).collect(),
                    costs: (0..6).map(|m| if m == 2 { 0.0 } else { 1.0 }).collect(),
                    scores: vec![],
                },
            }
        })
        .collect();
    let groups = vec![vec![0, 1, 2], vec![3, 4, 5]];
    let cfg = RefineConfig { alpha_pretrain: 0.0, epochs: 40, learning_rate: 0.5, ..RefineConfig::default() };
    let before = base.clone();
    let ens = init_ensemble(&base, 3, 2, 1).unwrap();
    let (a, logs) = refine_specialists(&base, ens.clone(), &clips, &groups, &cfg).unwrap();
    assert_eq!(base, before);
    assert!(logs.last().unwrap().mean_reward > logs[0].mean_reward);
    assert!(logs.last().unwrap().mean_cost < logs[0].mean_cost);
    let (b, _) = refine_specialists(&base, ens, &clips, &groups, &cfg).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #[test]
    fn importance_weight_is_clamped_ratio(s in 1e-6f64..1.0, g in 1e-6f64..1.0, lo in 0.01f64..1.0, hi in 1.0f64..100.0) {
        let w = importance_weight(s, g, (lo, hi)).unwrap();
        prop_assert!(w >= lo && w <= hi);
        if (lo..=hi).contains(&(s / g)) {
            prop_assert_eq!(w, s / g);
        }
    }
}
