use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this `|ξ|` the exponential limit is used.
pub const XI_EPS: f64 = 1e-8;
/// Fits need at least this many exceedances.
pub const MIN_FIT_SAMPLES: usize = 30;
/// Shape values at or below this are outside the likelihood's regular range.
const XI_MIN: f64 = -1.0;
const INFEASIBLE: f64 = 1e300;

/// Generalized Pareto tail above `u0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdParams {
    pub xi: f64,
    pub beta: f64,
    pub u0: f64,
    pub n_fit: usize,
    /// Negative log-likelihood at the fitted parameters.
    pub nll: f64,
}

impl GpdParams {
    pub fn new(xi: f64, beta: f64, u0: f64) -> Self {
        GpdParams {
            xi,
            beta,
            u0,
            n_fit: 0,
            nll: f64::NAN,
        }
    }

    /// Upper end of the support (`∞` unless `ξ < 0`).
    pub fn upper_endpoint(&self) -> f64 {
        if self.xi < -XI_EPS {
            self.u0 - self.beta / self.xi
        } else {
            f64::INFINITY
        }
    }
}

/// Density at `t`.
pub fn gpd_pdf(p: &GpdParams, t: f64) -> Result<f64> {
    if !(p.beta > 0.0) {
        return Err(Error::Domain(format!("scale {} must be positive", p.beta)));
    }
    let y = t - p.u0;
    if !(y >= 0.0) {
        return Err(Error::Domain(format!("{t} lies below the threshold {}", p.u0)));
    }
    if p.xi.abs() < XI_EPS {
        return Ok((-y / p.beta).exp() / p.beta);
    }
    let z = 1.0 + p.xi * y / p.beta;
    if z <= 0.0 {
        return Err(Error::Domain(format!("{t} lies beyond the support end {}", p.upper_endpoint())));
    }
    Ok(z.powf(-1.0 / p.xi - 1.0) / p.beta)
}

/// Distribution function; 0 below `u0`, 1 beyond a finite upper endpoint.
pub fn gpd_cdf(p: &GpdParams, u: f64) -> f64 {
    let y = u - p.u0;
    if y <= 0.0 {
        return 0.0;
    }
    if p.xi.abs() < XI_EPS {
        return -(-y / p.beta).exp_m1();
    }
    let a = p.xi * y / p.beta;
    if a <= -1.0 {
        return 1.0;
    }
    // 1 − (1 + a)^(−1/ξ), written with expm1/ln_1p to stay accurate in the far tail.
    -(-a.ln_1p() / p.xi).exp_m1()
}

/// Inverse distribution function for `q ∈ [0, 1)`.
pub fn gpd_quantile(p: &GpdParams, q: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::Domain(format!("quantile level {q} outside [0, 1)")));
    }
    let l = -(-q).ln_1p();
    if p.xi.abs() < XI_EPS {
        return Ok(p.u0 + p.beta * l);
    }
    Ok(p.u0 + p.beta * (p.xi * l).exp_m1() / p.xi)
}

/// Negative log-likelihood of exceedances `y = u − u0 ≥ 0`. Returns `None`
/// outside the parameter space or the support.
pub fn gpd_nll(xi: f64, beta: f64, exceedances: &[f64]) -> Option<f64> {
    if !(beta > 0.0 && beta.is_finite() && xi > XI_MIN && xi.is_finite()) {
        return None;
    }
    let n = exceedances.len() as f64;
    if xi.abs() < XI_EPS {
        return Some(n * beta.ln() + exceedances.iter().sum::<f64>() / beta);
    }
    let mut acc = 0.0;
    for &y in exceedances {
        let a = xi * y / beta;
        if a <= -1.0 {
            return None;
        }
        acc += a.ln_1p();
    }
    Some(n * beta.ln() + (1.0 + 1.0 / xi) * acc)
}

/// How the threshold `u0` is chosen from the fit samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum ThresholdRule {
    /// Sample minimum minus `margin`, so every sample is an exceedance.
    SampleMin { margin: f64 },
    /// A fixed threshold; samples at or below it are discarded.
    Fixed { u0: f64 },
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule::SampleMin { margin: 1e-9 }
    }
}

/// Probability-weighted-moment estimates `(ξ, β)` of exceedances.
pub fn pwm_estimate(exceedances: &[f64]) -> (f64, f64) {
    let mut y = exceedances.to_vec();
    y.sort_by(f64::total_cmp);
    let n = y.len() as f64;
    let a0 = y.iter().sum::<f64>() / n;
    let a1 = y
        .iter()
        .enumerate()
        .map(|(i, v)| (1.0 - (i as f64 + 0.65) / n) * v)
        .sum::<f64>()
        / n;
    let denom = a0 - 2.0 * a1;
    if denom.abs() < 1e-300 {
        return (0.0, a0);
    }
    let k = a0 / denom - 2.0;
    let beta = 2.0 * a0 * a1 / denom;
    (-k, beta)
}

struct Likelihood<'a> {
    exceedances: &'a [f64],
}

impl CostFunction for Likelihood<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(gpd_nll(p[0], p[1].exp(), self.exceedances).unwrap_or(INFEASIBLE))
    }
}

fn nelder_mead(exceedances: &[f64], start: [f64; 2], step: f64) -> Result<(Vec<f64>, f64)> {
    let simplex = vec![
        start.to_vec(),
        vec![start[0] + step, start[1]],
        vec![start[0], start[1] + step],
    ];
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-14)
        .map_err(|e| Error::Fit(e.to_string()))?;
    let res = Executor::new(Likelihood { exceedances }, solver)
        .configure(|s| s.max_iters(4000))
        .run()
        .map_err(|e| Error::Fit(e.to_string()))?;
    let state = res.state();
    let best = state
        .get_best_param()
        .cloned()
        .ok_or_else(|| Error::Fit("search returned no parameters".into()))?;
    Ok((best, state.get_best_cost()))
}

/// Maximum-likelihood GPD fit. Starts from probability-weighted moments and
/// refines `(ξ, ln β)` by Nelder–Mead with restarts.
pub fn fit_gpd(samples: &[f64], rule: ThresholdRule) -> Result<GpdParams> {
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite sample".into()));
    }
    let u0 = match rule {
        ThresholdRule::SampleMin { margin } => {
            if !(margin > 0.0) {
                return Err(Error::Config("threshold margin must be positive".into()));
            }
            samples.iter().copied().fold(f64::INFINITY, f64::min) - margin
        }
        ThresholdRule::Fixed { u0 } => u0,
    };
    let exceedances: Vec<f64> = samples.iter().filter(|&&v| v > u0).map(|v| v - u0).collect();
    if exceedances.len() < MIN_FIT_SAMPLES {
        return Err(Error::Fit(format!(
            "{} exceedances above {u0}; at least {MIN_FIT_SAMPLES} are needed",
            exceedances.len()
        )));
    }
    let (lo, hi) = exceedances
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi - lo <= 1e-12 * hi.abs().max(1e-300) {
        return Err(Error::Fit("all samples are equal".into()));
    }
    let (xi0, beta0) = pwm_estimate(&exceedances);
    let mut start = [xi0.clamp(-0.5, 1.5), beta0.max(1e-12 * hi).ln()];
    if gpd_nll(start[0], start[1].exp(), &exceedances).is_none() {
        // The moment estimate can land outside the support for short bounded tails.
        let mean = exceedances.iter().sum::<f64>() / exceedances.len() as f64;
        start = [0.0, mean.ln()];
    }
    let (mut best, mut cost) = nelder_mead(&exceedances, start, 0.1)?;
    for step in [0.05, 0.01, 0.002] {
        let (p, c) = nelder_mead(&exceedances, [best[0], best[1]], step)?;
        if c <= cost {
            best = p;
            cost = c;
        }
    }
    if cost >= INFEASIBLE {
        return Err(Error::Fit("likelihood search found no feasible point".into()));
    }
    Ok(GpdParams {
        xi: best[0],
        beta: best[1].exp(),
        u0,
        n_fit: exceedances.len(),
        nll: cost,
    })
}
