//! Independent reference implementations used as test oracles. Nothing here
//! calls into the arithmetic it is checking beyond primitive operations.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use r2se_core::tensor_nn::{Dense, NetworkWeights};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Worst analytic-versus-numeric disagreement over all coordinates.
#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
}

impl FdReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares `analytic` with central differences of `f` at `params`. The
/// relative error uses `max(|a|, |n|, floor)` as denominator so coordinates
/// with vanishing gradient are compared absolutely against `floor`.
pub fn finite_diff_check(f: impl Fn(&[f64]) -> f64, params: &[f64], analytic: &[f64], step: f64) -> FdReport {
    assert_eq!(params.len(), analytic.len());
    const FLOOR: f64 = 1e-3;
    let mut x = params.to_vec();
    let mut worst = FdReport {
        max_rel_error: 0.0,
        worst_index: 0,
    };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let up = f(&x);
        x[i] = orig - step;
        let down = f(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let err = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(FLOOR);
        if err > worst.max_rel_error || !err.is_finite() {
            worst = FdReport {
                max_rel_error: if err.is_finite() { err } else { f64::INFINITY },
                worst_index: i,
            };
        }
    }
    worst
}

/// Softmax written from scratch for oracles.
pub fn ref_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn ref_dense(d: &Dense, x: &[f64]) -> Vec<f64> {
    let (rows, cols) = d.weight.shape();
    let w = d.weight.data();
    (0..rows)
        .map(|r| {
            let mut acc = d.bias[r];
            for c in 0..cols {
                acc += w[r * cols + c] * x[c];
            }
            acc
        })
        .collect()
}

/// Second forward implementation: nested loops over row-major weights.
pub fn ref_forward(net: &NetworkWeights, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut h = x.to_vec();
    for layer in &net.hidden {
        h = ref_dense(layer, &h).into_iter().map(|v| if v > 0.0 { v } else { 0.0 }).collect();
    }
    (ref_dense(&net.plan_head, &h), ref_dense(&net.perception_head, &h))
}

/// Rectangle as center, heading and full extents.
#[derive(Debug, Clone, Copy)]
pub struct Rect {
    pub cx: f64,
    pub cy: f64,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.heading.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let along = dx * c + dy * s;
        let across = -dx * s + dy * c;
        along.abs() <= 0.5 * self.length && across.abs() <= 0.5 * self.width
    }

    pub fn random(rng: &mut impl Rng) -> Self {
        Rect {
            cx: rng.random_range(-4.0..4.0),
            cy: rng.random_range(-4.0..4.0),
            heading: rng.random_range(-3.2..3.2),
            length: rng.random_range(0.5..5.0),
            width: rng.random_range(0.5..2.5),
        }
    }

    /// Points on the boundary, `n` per side.
    pub fn boundary(&self, n: usize) -> Vec<[f64; 2]> {
        let (s, c) = self.heading.sin_cos();
        let (l, w) = (0.5 * self.length, 0.5 * self.width);
        let local = [[l, w], [-l, w], [-l, -w], [l, -w]];
        let mut out = Vec::with_capacity(4 * n);
        for k in 0..4 {
            let (a, b) = (local[k], local[(k + 1) % 4]);
            for i in 0..n {
                let t = i as f64 / n as f64;
                let (px, py) = (a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]));
                out.push([self.cx + px * c - py * s, self.cy + px * s + py * c]);
            }
        }
        out
    }
}

/// Grid rasterization: true if some grid point of spacing `h` lies in both.
pub fn raster_overlap(a: &Rect, b: &Rect, h: f64) -> bool {
    let r = 0.5 * (a.length.hypot(a.width));
    let (x0, x1) = (a.cx - r, a.cx + r);
    let (y0, y1) = (a.cy - r, a.cy + r);
    let nx = ((x1 - x0) / h).ceil() as usize;
    let ny = ((y1 - y0) / h).ceil() as usize;
    for i in 0..=nx {
        for j in 0..=ny {
            let (x, y) = (x0 + i as f64 * h, y0 + j as f64 * h);
            if a.contains(x, y) && b.contains(x, y) {
                return true;
            }
        }
    }
    false
}

/// Minimum distance between sampled boundary points; an upper bound on the
/// true distance that converges as `n` grows.
pub fn sampled_distance(a: &Rect, b: &Rect, n: usize) -> f64 {
    let pa = a.boundary(n);
    let pb = b.boundary(n);
    let mut best = f64::INFINITY;
    for p in &pa {
        for q in &pb {
            best = best.min((p[0] - q[0]).hypot(p[1] - q[1]));
        }
    }
    best
}

/// Oracle for percentile selection: a case is selected iff fewer than `k`
/// cases rank before it, where ranking is by descending score, then
/// ascending id, and `k = ceil(eps_halves · n / 200)` for `ε = eps_halves / 2`.
pub fn oracle_top(scores: &[(String, f64)], eps_halves: usize) -> Vec<String> {
    let n = scores.len();
    let k = (eps_halves * n).div_ceil(200);
    let mut chosen: Vec<(f64, String)> = Vec::new();
    for (id, s) in scores {
        let before = scores
            .iter()
            .filter(|(id2, s2)| s2 > s || (s2 == s && id2 < id))
            .count();
        if before < k {
            chosen.push((*s, id.clone()));
        }
    }
    chosen.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
    chosen.into_iter().map(|(_, id)| id).collect()
}

/// Parent distributions of the tail property suite.
#[derive(Debug, Clone, Copy)]
pub enum Parent {
    Uniform,
    Exponential,
    /// Pareto with tail index `a` and unit scale.
    Pareto(f64),
}

impl Parent {
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.random::<f64>();
        match *self {
            Parent::Uniform => u,
            Parent::Exponential => -(1.0 - u).ln(),
            Parent::Pareto(a) => (1.0 - u).powf(-1.0 / a),
        }
    }
}

/// Kolmogorov–Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// Asymptotic 5% critical value of the one-sample KS test.
pub fn ks_critical(n: usize) -> f64 {
    1.36 / (n as f64).sqrt()
}

/// Outcome of one tail-suite trial.
#[derive(Debug, Clone, Copy)]
pub struct TailTrial {
    pub xi: f64,
    pub beta: f64,
    pub ks: f64,
    pub passed: bool,
}

/// For each seed: draw `n` parent samples, keep those above the empirical
/// `quantile`, fit a GPD to the exceedances and KS-test the fit.
pub fn tail_property_suite(parent: Parent, n: usize, quantile: f64, seeds: std::ops::Range<u64>) -> Vec<TailTrial> {
    use r2se_core::expand::{fit_gpd, gpd_cdf, ThresholdRule};
    seeds
        .map(|seed| {
            let mut r = rng(seed);
            let mut xs: Vec<f64> = (0..n).map(|_| parent.sample(&mut r)).collect();
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let u0 = xs[(quantile * n as f64) as usize];
            let tail: Vec<f64> = xs.iter().copied().filter(|&x| x > u0).collect();
            let p = fit_gpd(&tail, ThresholdRule::Fixed { u0 }).expect("fit");
            let ks = ks_statistic(&tail, |x| gpd_cdf(&p, x));
            TailTrial {
                xi: p.xi,
                beta: p.beta,
                ks,
                passed: ks < ks_critical(tail.len()),
            }
        })
        .collect()
}

pub fn pass_rate(trials: &[TailTrial]) -> f64 {
    trials.iter().filter(|t| t.passed).count() as f64 / trials.len() as f64
}

/// `n` inverse-CDF draws from GPD(ξ, β) above 0.
pub fn gpd_samples(xi: f64, beta: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let u: f64 = r.random::<f64>();
            if xi.abs() < 1e-12 {
                -beta * (1.0 - u).ln()
            } else {
                beta * ((1.0 - u).powf(-xi) - 1.0) / xi
            }
        })
        .collect()
}

/// PDMS composition written out directly.
pub fn ref_pdms(nc: f64, dac: f64, ttc: f64, ep: f64, comfort: f64) -> f64 {
    nc * dac * (5.0 * ttc + 2.0 * comfort + 5.0 * ep) / 12.0
}

/// Random small network with the given widths and a seed.
pub fn small_net(input: usize, hidden: &[usize], vocab: usize, perception: usize, seed: u64) -> NetworkWeights {
    use r2se_core::tensor_nn::NetworkShape;
    let mut w = NetworkWeights::init(
        &NetworkShape {
            input,
            hidden: hidden.to_vec(),
            vocab,
            perception,
        },
        seed,
    );
    // Non-zero biases so the bias gradients are exercised away from zero.
    let mut r = rng(seed ^ 0xb1a5);
    for d in w.hidden.iter_mut().chain([&mut w.plan_head, &mut w.perception_head]) {
        for b in d.bias.iter_mut() {
            *b = r.random_range(-0.3..0.3);
        }
    }
    w
}

/// Dense-substep collision check of an ego path against logged agents.
pub fn dense_collision(clip: &r2se_core::world::Clip, ego: &[r2se_core::world::Pose], substeps: usize) -> Option<usize> {
    let now = clip.history_len;
    let lerp = |a: &r2se_core::world::Pose, b: &r2se_core::world::Pose, t: f64| {
        let mut d = b.psi - a.psi;
        while d > std::f64::consts::PI {
            d -= 2.0 * std::f64::consts::PI;
        }
        while d < -std::f64::consts::PI {
            d += 2.0 * std::f64::consts::PI;
        }
        (a.x + t * (b.x - a.x), a.y + t * (b.y - a.y), a.psi + t * d)
    };
    for t in 1..ego.len() {
        for k in 1..=substeps {
            let a = k as f64 / substeps as f64;
            let (x, y, psi) = lerp(&ego[t - 1], &ego[t], a);
            let er = Rect {
                cx: x,
                cy: y,
                heading: psi,
                length: clip.ego_length,
                width: clip.ego_width,
            };
            for ag in &clip.agents {
                let (ax, ay, apsi) = lerp(&ag.states[now + t - 1].pose, &ag.states[now + t].pose, a);
                let ar = Rect {
                    cx: ax,
                    cy: ay,
                    heading: apsi,
                    length: ag.length,
                    width: ag.width,
                };
                if sat_overlap(&er, &ar) {
                    return Some(t);
                }
            }
        }
    }
    None
}

/// Separating-axis overlap from corner projections.
pub fn sat_overlap(a: &Rect, b: &Rect) -> bool {
    let corners = |r: &Rect| r.boundary(1);
    let (ca, cb) = (corners(a), corners(b));
    let axes = |r: &Rect| {
        let (s, c) = r.heading.sin_cos();
        [[c, s], [-s, c]]
    };
    for ax in axes(a).into_iter().chain(axes(b)) {
        let proj = |pts: &[[f64; 2]]| {
            pts.iter()
                .map(|p| p[0] * ax[0] + p[1] * ax[1])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        let (a0, a1) = proj(&ca);
        let (b0, b1) = proj(&cb);
        if a1 < b0 || b1 < a0 {
            return false;
        }
    }
    true
}
