//! Tail model of hard-case ensemble uncertainty and the test-time gate
//! between generalist and specialists.

mod gpd;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapters::{ensemble_from_probs, member_probs, AdapterEnsemble};
use crate::error::{Error, Result};
use crate::metrics::{
    entropy_feedback, perception_feedback, DifficultyScore, DifficultyWeights, PolicyUsed, ReportRow,
};
use crate::policy::{perception_loss, Generalist, PreparedClip};
use crate::refine::ProcessSignals;
use crate::tensor_nn::{argmax, softmax};

pub use gpd::{
    fit_gpd, gpd_cdf, gpd_nll, gpd_pdf, gpd_quantile, pwm_estimate, GpdParams, ThresholdRule, MIN_FIT_SAMPLES, XI_EPS,
};

/// A fitted distribution of uncertainty used to place a test case in the tail.
pub trait TailModel {
    fn cdf(&self, u: f64) -> f64;
}

impl TailModel for GpdParams {
    fn cdf(&self, u: f64) -> f64 {
        gpd_cdf(self, u)
    }
}

/// Log-normal alternative tail model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalTail {
    pub mu: f64,
    pub sigma: f64,
}

impl LogNormalTail {
    /// Moment fit on the logs of the positive samples.
    pub fn fit(samples: &[f64]) -> Result<Self> {
        let logs: Vec<f64> = samples.iter().filter(|&&v| v > 0.0).map(|v| v.ln()).collect();
        if logs.len() < 2 {
            return Err(Error::Fit("log-normal fit needs two positive samples".into()));
        }
        let n = logs.len() as f64;
        let mu = logs.iter().sum::<f64>() / n;
        let var = logs.iter().map(|l| (l - mu).powi(2)).sum::<f64>() / (n - 1.0);
        if !(var > 0.0) {
            return Err(Error::Fit("log-normal fit on constant samples".into()));
        }
        Ok(LogNormalTail { mu, sigma: var.sqrt() })
    }
}

impl TailModel for LogNormalTail {
    fn cdf(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        use statrs::distribution::{ContinuousCDF, Normal};
        Normal::new(self.mu, self.sigma).map_or(0.0, |n| n.cdf(u.ln()))
    }
}

/// Empirical distribution of the fit samples (percentile rule).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalTail {
    sorted: Vec<f64>,
}

impl EmpiricalTail {
    pub fn new(samples: &[f64]) -> Self {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        EmpiricalTail { sorted }
    }
}

impl TailModel for EmpiricalTail {
    fn cdf(&self, u: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= u) as f64 / self.sorted.len().max(1) as f64
    }
}

/// Which side of the confidence level routes to the specialists.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateDirection {
    /// Specialist iff `P(u) > σ`.
    #[default]
    SpecialistAbove,
    /// Specialist iff `P(u) ≤ σ`.
    SpecialistBelow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub uncertainty: f64,
    pub cdf: f64,
    pub chosen: PolicyUsed,
    pub sigma: f64,
}

pub fn gate(u: f64, tail: &dyn TailModel, sigma: f64, direction: GateDirection) -> GateDecision {
    let cdf = tail.cdf(u);
    let above = cdf > sigma;
    let specialist = match direction {
        GateDirection::SpecialistAbove => above,
        GateDirection::SpecialistBelow => !above,
    };
    GateDecision {
        uncertainty: u,
        cdf,
        chosen: if specialist { PolicyUsed::Specialist } else { PolicyUsed::Generalist },
        sigma,
    }
}

/// Ensemble uncertainty of one clip's features.
pub fn clip_uncertainty(generalist: &Generalist, ensemble: &AdapterEnsemble, features: &[f64]) -> Result<f64> {
    let cache = generalist.network.trunk(features, None)?;
    let probs = member_probs(&generalist.network, ensemble, cache.embedding());
    Ok(ensemble_from_probs(&probs).1)
}

/// Output of the gated policy on one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatedOutput {
    pub probs: Vec<f64>,
    pub generalist_probs: Vec<f64>,
    pub perception: Vec<f64>,
    pub decision: GateDecision,
}

/// Generalist probabilities or ensemble mean, as the gate decides.
pub fn test_time_policy(
    generalist: &Generalist,
    ensemble: &AdapterEnsemble,
    tail: &dyn TailModel,
    sigma: f64,
    direction: GateDirection,
    features: &[f64],
) -> Result<GatedOutput> {
    ensemble.validate(&generalist.network)?;
    let base = &generalist.network;
    let cache = base.trunk(features, None)?;
    let emb = cache.embedding();
    let generalist_probs = softmax(&base.plan_head.apply(emb));
    let (mean, u) = ensemble_from_probs(&member_probs(base, ensemble, emb));
    let decision = gate(u, tail, sigma, direction);
    let probs = match decision.chosen {
        PolicyUsed::Generalist => generalist_probs.clone(),
        PolicyUsed::Specialist => mean,
    };
    Ok(GatedOutput {
        probs,
        generalist_probs,
        perception: base.perception_head.apply(emb),
        decision,
    })
}

/// Means over an evaluation report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub clips: usize,
    pub nc: f64,
    pub dac: f64,
    pub ttc: f64,
    pub comfort: f64,
    pub ep: f64,
    pub pdms: f64,
    /// Fraction of clips routed to the specialists.
    pub expand_rate: f64,
}

pub fn summarize(rows: &[ReportRow]) -> EvalSummary {
    let n = rows.len().max(1) as f64;
    let mean = |f: fn(&ReportRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    EvalSummary {
        clips: rows.len(),
        nc: mean(|r| r.nc),
        dac: mean(|r| r.dac),
        ttc: mean(|r| r.ttc),
        comfort: mean(|r| r.comfort),
        ep: mean(|r| r.ep),
        pdms: mean(|r| r.pdms),
        expand_rate: rows.iter().filter(|r| r.policy_used == PolicyUsed::Specialist).count() as f64 / n,
    }
}

/// PDMS per clip id.
pub fn pdms_by_clip(rows: &[ReportRow]) -> BTreeMap<String, f64> {
    rows.iter().map(|r| (r.clip_id.clone(), r.pdms)).collect()
}

/// Builds report rows from each clip's chosen probabilities. `signals[i]`
/// holds the simulated candidate scores of `clips[i]`.
pub fn report_rows(
    clips: &[PreparedClip],
    signals: &[ProcessSignals],
    outputs: &[(Vec<f64>, Vec<f64>, PolicyUsed)],
    weights: &DifficultyWeights,
) -> Result<Vec<ReportRow>> {
    if clips.len() != signals.len() || clips.len() != outputs.len() {
        return Err(Error::Input("clips, signals and outputs differ in length".into()));
    }
    let losses: Vec<f64> = clips
        .iter()
        .zip(outputs)
        .map(|(c, (_, perception, _))| perception_loss(perception, &c.features.perception_target).0)
        .collect();
    let max_loss = losses.iter().copied().fold(0.0, f64::max);
    clips
        .iter()
        .zip(signals)
        .zip(outputs)
        .zip(&losses)
        .map(|(((c, s), (probs, _, used)), &loss)| {
            let chosen = argmax(probs);
            let sc = s
                .scores
                .get(chosen)
                .ok_or_else(|| Error::Input(format!("clip {}: no signal for candidate {chosen}", c.clip.id)))?;
            let f_ent = entropy_feedback(probs)?;
            let f_per = if max_loss > 0.0 { perception_feedback(loss, max_loss)? } else { 0.0 };
            let d = DifficultyScore::new(c.clip.id.clone(), sc.pdms, f_per, f_ent, weights);
            Ok(ReportRow {
                clip_id: d.clip_id,
                nc: sc.nc,
                dac: sc.dac,
                ttc: sc.ttc,
                comfort: sc.comfort,
                ep: sc.ep,
                pdms: sc.pdms,
                f_ent,
                f_per,
                f_x: d.f_x,
                policy_used: *used,
            })
        })
        .collect()
}

/// Runs the gated policy over `clips` and scores the chosen argmax plans.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_gated(
    clips: &[PreparedClip],
    signals: &[ProcessSignals],
    generalist: &Generalist,
    ensemble: &AdapterEnsemble,
    tail: &(dyn TailModel + Sync),
    sigma: f64,
    direction: GateDirection,
    weights: &DifficultyWeights,
) -> Result<Vec<ReportRow>> {
    let outputs = clips
        .par_iter()
        .map(|c| {
            let g = test_time_policy(generalist, ensemble, tail, sigma, direction, &c.features.normalized)?;
            Ok((g.probs, g.perception, g.decision.chosen))
        })
        .collect::<Result<Vec<_>>>()?;
    report_rows(clips, signals, &outputs, weights)
}

/// Evaluates the generalist alone.
pub fn evaluate_generalist(
    clips: &[PreparedClip],
    signals: &[ProcessSignals],
    generalist: &Generalist,
    weights: &DifficultyWeights,
) -> Result<Vec<ReportRow>> {
    let outputs = clips
        .par_iter()
        .map(|c| {
            let out = generalist.forward(&c.features.normalized)?;
            Ok((out.probs(), out.perception, PolicyUsed::Generalist))
        })
        .collect::<Result<Vec<_>>>()?;
    report_rows(clips, signals, &outputs, weights)
}
