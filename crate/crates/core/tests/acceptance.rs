//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

mod support;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use r2se_core::adapters::{ensemble_forward, init_ensemble};
use r2se_core::allocate::select_hard;
use r2se_core::expand::{fit_gpd, gate, gpd_quantile, GateDirection, GpdParams, ThresholdRule};
use r2se_core::harness::artifacts::{read_clips, sha256_hex, AdaptersBody, Artifact, GateBody};
use r2se_core::harness::commands::*;
use r2se_core::harness::{pipeline, RunConfig};
use r2se_core::metrics::{pac_bayes_bound, pdm_score, report_to_bytes, DifficultyScore, DifficultyWeights, PolicyUsed, SubScores};
use r2se_core::policy::{perception_loss, pretrain_loss, sample_gradient, Generalist, TrainingSample};
use r2se_core::refine::{grpo_loss, ProcessSignals, RefineConfig};
use r2se_core::tensor_nn::Params;
use rand::Rng;
use support::*;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn set_flat<P: Params>(p: &mut P, flat: &[f64]) {
    let mut i = 0;
    for s in p.slices_mut() {
        let n = s.len();
        s.copy_from_slice(&flat[i..i + n]);
        i += n;
    }
}

fn c1_pdms() -> Outcome {
    let v = pdm_score(&SubScores::new(1.0, 1.0, 1.0, 0.875, 0.999));
    check((v - 0.9478).abs() <= 5e-4, format!("pdms = {v:.5}"))
}

fn c2_gradients() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        // Pretraining loss through the full network.
        let net = small_net(4, &[6, 5], 5, 3, seed);
        let mut r = rng(seed + 1000);
        let raw: Vec<f64> = (0..5).map(|_| r.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let sample = TrainingSample {
            features: (0..4).map(|_| r.random_range(-1.0..1.0)).collect(),
            target: raw.iter().map(|v| v / total).collect(),
            perception: (0..3).map(|_| r.random_range(-1.0..1.0)).collect(),
        };
        let (_, grads) = sample_gradient(&net, &sample, 0.5, None).unwrap();
        let f = |flat: &[f64]| {
            let mut w = net.clone();
            set_flat(&mut w, flat);
            pretrain_loss(&w.forward(&sample.features).unwrap(), &sample.target, &sample.perception, 0.5)
                .unwrap()
                .loss
        };
        worst = worst.max(finite_diff_check(f, &net.flatten(), &grads.flatten(), 1e-6).max_rel_error);

        // Refinement loss at the logits, importance weights held fixed.
        let m = 6;
        let z: Vec<f64> = (0..m).map(|_| r.random_range(-2.0..2.0)).collect();
        let gz: Vec<f64> = (0..m).map(|_| r.random_range(-2.0..2.0)).collect();
        let gen = ref_softmax(&gz);
        let signals = ProcessSignals {
            rewards: (0..m).map(|_| r.random_range(0.0..1.0)).collect(),
            costs: (0..m).map(|_| r.random_range(0.0..3.0)).collect(),
            scores: vec![],
        };
        let cfg = RefineConfig::default();
        let out = grpo_loss(&z, &gen, &signals, &cfg).unwrap();
        let p = ref_softmax(&z);
        let w: Vec<f64> = p.iter().zip(&gen).map(|(a, b)| (a / b).clamp(cfg.is_clamp.0, cfg.is_clamp.1)).collect();
        let g = |x: &[f64]| {
            let q = ref_softmax(x);
            (0..m)
                .map(|j| w[j] * (-signals.rewards[j] * q[j].ln() + cfg.lambda * signals.costs[j] * q[j]))
                .sum::<f64>()
        };
        worst = worst.max(finite_diff_check(g, &z, &out.d_logits, 1e-6).max_rel_error);

        // Perception regression.
        let pred: Vec<f64> = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
        let truth: Vec<f64> = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
        let (_, d) = perception_loss(&pred, &truth);
        let h = |x: &[f64]| x.iter().zip(&truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 4.0;
        worst = worst.max(finite_diff_check(h, &pred, &d, 1e-6).max_rel_error);
    }
    check(worst < 1e-4, format!("max relative error {worst:.2e} over 3×20 instances"))
}

fn c3_lora_identity(run: &Path, generalist_hash_after_pretrain: &str) -> Outcome {
    let base = small_net(6, &[10, 8], 7, 2, 5);
    let ens = init_ensemble(&base, 4, 3, 2).unwrap();
    let mut r = rng(3);
    let mut max_diff: f64 = 0.0;
    for _ in 0..100 {
        let x: Vec<f64> = (0..6).map(|_| r.random_range(-3.0..3.0)).collect();
        let plain = ref_softmax(&base.forward(&x).unwrap().logits);
        let (mean, _) = ensemble_forward(&base, &ens, &x).unwrap();
        for (a, b) in mean.iter().zip(&plain) {
            max_diff = max_diff.max((a - b).abs());
        }
    }
    // The run directory has been through refinement, ablation and report.
    let after = sha256_hex(&fs::read(run.join(GENERALIST)).unwrap());
    check(
        max_diff == 0.0 && after == generalist_hash_after_pretrain,
        format!("max |Δp| = {max_diff:e}; generalist.json hash unchanged: {}", after == generalist_hash_after_pretrain),
    )
}

fn c4_gpd() -> Outcome {
    let rule = ThresholdRule::Fixed { u0: 0.0 };
    let p = fit_gpd(&gpd_samples(0.2, 1.0, 10_000, 11), rule).unwrap();
    let e = fit_gpd(&gpd_samples(0.0, 1.0, 10_000, 12), rule).unwrap();
    let rates: Vec<(&str, f64)> = [("uniform", Parent::Uniform), ("exponential", Parent::Exponential), ("pareto(2)", Parent::Pareto(2.0))]
        .into_iter()
        .map(|(n, parent)| (n, pass_rate(&tail_property_suite(parent, 10_000, 0.9, 0..50))))
        .collect();
    let ok = (0.15..=0.25).contains(&p.xi)
        && (0.95..=1.05).contains(&p.beta)
        && (-0.05..=0.05).contains(&e.xi)
        && rates.iter().all(|(_, r)| *r >= 0.9);
    check(
        ok,
        format!("ξ̂ = {:.4}, β̂ = {:.4}; exponential ξ̂ = {:.4}; KS pass rates {rates:?}", p.xi, p.beta, e.xi),
    )
}

fn c5_gate(run: &Path, cfg: &RunConfig) -> Outcome {
    let mut r = rng(55);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let p = GpdParams::new(r.random_range(-0.4..0.8), r.random_range(0.1..3.0), r.random_range(-1.0..1.0));
        let sigma = r.random_range(0.01..0.99);
        let u_star = gpd_quantile(&p, sigma).unwrap();
        let u = r.random_range(p.u0..u_star + 3.0 * p.beta);
        let expect = if u > u_star { PolicyUsed::Specialist } else { PolicyUsed::Generalist };
        if gate(u, &p, sigma, GateDirection::SpecialistAbove).chosen != expect && (u - u_star).abs() > 1e-9 {
            mismatches += 1;
        }
    }
    let g: Artifact<Generalist> = Artifact::load(&run.join(GENERALIST), "generalist").unwrap();
    let a: Artifact<AdaptersBody> = Artifact::load(&run.join(ADAPTERS), "adapters").unwrap();
    let gate_art: Artifact<GateBody> = Artifact::load(&run.join(GATE), "gate").unwrap();
    let test = pipeline::eval_set(cfg, &g.body, &read_clips(&run.join(TEST_CLIPS)).unwrap()).unwrap();
    let rows = test.gated(cfg, &g.body, &a.body.ensemble, &gate_art.body.params, 1.0).unwrap();
    let same = report_to_bytes(&rows).unwrap() == fs::read(run.join(EVAL_GENERALIST)).unwrap();
    check(
        mismatches == 0 && same,
        format!("{mismatches}/1000 gate mismatches; σ = 1 CSV identical to generalist: {same}"),
    )
}

fn c6_allocation() -> Outcome {
    let w = DifficultyWeights { per: 0.0, ent: 0.0 };
    let mut failures = 0;
    for seed in 0..1000 {
        let mut r = rng(seed + 9000);
        let n = r.random_range(1..300);
        let pairs: Vec<(String, f64)> =
            (0..n).map(|i| (format!("clip-{i:04}"), r.random_range(0..10) as f64 / 9.0)).collect();
        let eps_halves = r.random_range(1..200);
        let scores: Vec<DifficultyScore> =
            pairs.iter().map(|(id, fx)| DifficultyScore::new(id.clone(), 1.0 - fx, 0.0, 0.0, &w)).collect();
        let got: Vec<String> = select_hard(&scores, eps_halves as f64 / 2.0)
            .unwrap()
            .cases
            .iter()
            .map(|c| c.clip_id.clone())
            .collect();
        failures += usize::from(got != oracle_top(&pairs, eps_halves));
    }
    check(failures == 0, format!("{failures}/1000 score sets differ from the full-sort oracle"))
}

fn c7_direction(report: &Report) -> Outcome {
    let abl = report.ablation.as_ref().expect("ablation rows");
    let pdms: BTreeMap<&str, f64> = abl.iter().map(|r| (r.name.as_str(), r.pdms)).collect();
    let gain = report.hard_specialist.pdms - report.hard_generalist.pdms;
    let test_delta = report.gated.pdms - report.generalist.pdms;
    let full_fr = abl[0].fr;
    let a = gain >= 0.02;
    let b = test_delta >= -0.01;
    let c = report.test.fr <= full_fr;
    let d = pdms["il_cost_rl_expansion"] >= pdms["il_cost_rl"] && pdms["il_cost_rl"] >= pdms["il_only"];
    let flag = |x: bool| if x { "ok" } else { "FAIL" };
    check(
        a && b && c && d,
        format!(
            "(a) hard-set gain {gain:+.4} {}; (b) test Δ {test_delta:+.4} {}; (c) FR gated {:.4} vs full {full_fr:.4} {}; \
             (d) expansion {:.4} ≥ il_cost_rl {:.4} ≥ il_only {:.4} {}",
            flag(a),
            flag(b),
            report.test.fr,
            flag(c),
            pdms["il_cost_rl_expansion"],
            pdms["il_cost_rl"],
            pdms["il_only"],
            flag(d)
        ),
    )
}

fn c8_pac_bayes() -> Outcome {
    let v = pac_bayes_bound(&[0.1], 0.0, 200, 0.05).unwrap();
    let mut monotone = true;
    for kl in [0.0, 0.5, 1.0, 5.0, 20.0] {
        let mut prev = f64::INFINITY;
        for n in [100u64, 1_000, 10_000, 100_000, 1_000_000] {
            let b = pac_bayes_bound(&[0.0], kl, n, 0.05).unwrap();
            monotone &= b < prev && pac_bayes_bound(&[0.0], kl + 1.0, n, 0.05).unwrap() > b;
            prev = b;
        }
    }
    check((v - 0.22588).abs() <= 1e-4 && monotone, format!("bound = {v:.5}; monotone on grid: {monotone}"))
}

fn c9_determinism(a: &Path, b: &Path) -> Outcome {
    let mut names: Vec<String> = fs::read_dir(a)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let differ: Vec<&String> = names
        .iter()
        .filter(|n| fs::read(a.join(n)).ok() != fs::read(b.join(n)).ok())
        .collect();
    let count_b = fs::read_dir(b).unwrap().count();
    check(
        differ.is_empty() && count_b == names.len(),
        format!("{} files compared; differing: {differ:?}", names.len()),
    )
}

fn run_stepwise(cfg: &RunConfig, dir: &Path) -> (Report, String) {
    cmd_gen_data(cfg, dir).unwrap();
    cmd_pretrain(cfg, dir).unwrap();
    let hash = sha256_hex(&fs::read(dir.join(GENERALIST)).unwrap());
    cmd_allocate(cfg, dir).unwrap();
    cmd_refine(cfg, dir).unwrap();
    cmd_fit_gate(cfg, dir).unwrap();
    cmd_eval(cfg, dir).unwrap();
    cmd_ablate(cfg, dir).unwrap();
    (cmd_report(cfg, dir).unwrap(), hash)
}

fn main() {
    let started = Instant::now();
    let cfg = RunConfig::desk();
    let (dir_a, dir_b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (report, hash) = run_stepwise(&cfg, dir_a.path());
    run_all(&cfg, dir_b.path()).unwrap();

    let results: Vec<(&str, Outcome)> = vec![
        ("1 PDMS arithmetic", c1_pdms()),
        ("2 gradient suite", c2_gradients()),
        ("3 LoRA identity", c3_lora_identity(dir_a.path(), &hash)),
        ("4 GPD recovery", c4_gpd()),
        ("5 gate correctness", c5_gate(dir_a.path(), &cfg)),
        ("6 allocation oracle", c6_allocation()),
        ("7 refinement direction", c7_direction(&report)),
        ("8 PAC-Bayes diagnostic", c8_pac_bayes()),
        ("9 determinism", c9_determinism(dir_a.path(), dir_b.path())),
    ];
    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(d) => println!("PASS criterion {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {name}: {d}");
            }
        }
    }
    println!("{} of {} criteria passed in {:.0?}", results.len() - failed, results.len(), started.elapsed());
    if failed > 0 {
        std::process::exit(1);
    }
}
