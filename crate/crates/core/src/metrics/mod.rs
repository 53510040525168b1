//! Closed-loop sub-metrics, PDMS, difficulty scoring, forgetting statistics
//! and the PAC-Bayes diagnostic.

mod reference;
mod report;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{obb_overlap, Clip, Pose, SimLog};

pub use reference::{idm_accel, idm_rollout, privileged_reference, IdmParams};
pub use report::{read_report, report_to_bytes, write_report, PolicyUsed, ReportRow};

/// Below this projected time-to-collision (s) the TTC sub-score fails.
pub const TTC_THRESHOLD: f64 = 1.0;
/// Step of the constant-velocity TTC projection, s.
pub const TTC_STEP: f64 = 0.05;
/// m/s²
pub const MAX_LON_ACCEL: f64 = 4.0;
/// m/s³
pub const MAX_JERK: f64 = 8.0;
/// rad/s
pub const MAX_YAW_RATE: f64 = 0.95;
/// Guard on the EP denominator, m.
pub const EP_EPSILON: f64 = 0.1;

const W_TTC: f64 = 5.0;
const W_EP: f64 = 5.0;
const W_COMFORT: f64 = 2.0;

/// Per-clip closed-loop sub-metrics and their composition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubScores {
    pub nc: f64,
    pub dac: f64,
    pub ttc: f64,
    pub comfort: f64,
    pub ep: f64,
    pub pdms: f64,
}

impl SubScores {
    /// Builds scores from the five sub-metrics, filling in PDMS.
    pub fn new(nc: f64, dac: f64, ttc: f64, ep: f64, comfort: f64) -> Self {
        let mut s = SubScores {
            nc,
            dac,
            ttc,
            comfort,
            ep,
            pdms: 0.0,
        };
        s.pdms = pdm_score(&s);
        s
    }

    /// Violation magnitudes `1 − sub-score` summed over NC, DAC, TTC, EP and comfort.
    pub fn violation(&self) -> f64 {
        (1.0 - self.nc) + (1.0 - self.dac) + (1.0 - self.ttc) + (1.0 - self.ep) + (1.0 - self.comfort)
    }
}

/// `nc · dac · (5 ttc + 5 ep + 2 comfort) / 12`.
pub fn pdm_score(s: &SubScores) -> f64 {
    s.nc * s.dac * (W_TTC * s.ttc + W_EP * s.ep + W_COMFORT * s.comfort) / (W_TTC + W_EP + W_COMFORT)
}

/// Planning feedback; the same composition as PDMS.
pub fn plan_feedback(s: &SubScores) -> f64 {
    pdm_score(s)
}

fn ttc_ok(log: &SimLog, clip: &Clip) -> bool {
    let now = clip.history_len;
    let steps = (TTC_THRESHOLD / TTC_STEP).round() as usize;
    for t in 1..log.ego_poses.len() {
        let ego = &log.ego_poses[t];
        let v = log.speed[t];
        for (agent, pose) in clip.agents.iter().zip(&log.agent_poses[t]) {
            let state = &agent.states[now + t];
            for k in 1..steps {
                let tau = k as f64 * TTC_STEP;
                let e = Pose::new(
                    ego.x + v * ego.psi.cos() * tau,
                    ego.y + v * ego.psi.sin() * tau,
                    ego.psi,
                );
                let a = Pose::new(pose.x + state.vx * tau, pose.y + state.vy * tau, pose.psi);
                if obb_overlap(&clip.ego_footprint(&e), &agent.footprint(&a)) {
                    return false;
                }
            }
        }
    }
    true
}

fn comfortable(log: &SimLog) -> bool {
    (1..log.speed.len()).all(|t| {
        log.accel[t].abs() <= MAX_LON_ACCEL
            && log.jerk[t].abs() <= MAX_JERK
            && log.yaw_rate[t].abs() <= MAX_YAW_RATE
    })
}

/// Scores a simulated rollout. `reference_progress` is the privileged
/// planner's progress on the same clip.
pub fn sub_scores(log: &SimLog, clip: &Clip, reference_progress: f64) -> SubScores {
    let nc = if log.collided() { 0.0 } else { 1.0 };
    let dac = if log.off_drivable() { 0.0 } else { 1.0 };
    let ttc = if ttc_ok(log, clip) { 1.0 } else { 0.0 };
    let comfort = if comfortable(log) { 1.0 } else { 0.0 };
    let ep = (log.final_progress() / reference_progress.max(EP_EPSILON)).clamp(0.0, 1.0);
    SubScores::new(nc, dac, ttc, ep, comfort)
}

/// Shannon entropy in nats, `0 · ln 0 := 0`.
pub fn entropy_feedback(probs: &[f64]) -> Result<f64> {
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Input("probabilities must be finite and non-negative".into()));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Input(format!("probabilities sum to {total}, not 1")));
    }
    Ok(probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum::<f64>()
        .max(0.0))
}

/// Perception loss normalized by the dataset maximum, clamped to `[0, 1]`.
pub fn perception_feedback(loss: f64, max_loss: f64) -> Result<f64> {
    if !(max_loss > 0.0) {
        return Err(Error::Config(format!("maximum perception loss must be positive, got {max_loss}")));
    }
    Ok((loss / max_loss).clamp(0.0, 1.0))
}

/// Weights of the perception and entropy terms of the difficulty score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyWeights {
    pub per: f64,
    pub ent: f64,
}

impl Default for DifficultyWeights {
    fn default() -> Self {
        DifficultyWeights { per: 0.1, ent: 0.01 }
    }
}

/// `(1 − f_plan) + β_per f_per + β_ent f_ent`.
pub fn case_difficulty(f_plan: f64, f_per: f64, f_ent: f64, w: &DifficultyWeights) -> f64 {
    (1.0 - f_plan) + w.per * f_per + w.ent * f_ent
}

/// Difficulty of one clip under a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyScore {
    pub clip_id: String,
    pub f_plan: f64,
    pub f_per: f64,
    pub f_ent: f64,
    pub f_x: f64,
}

impl DifficultyScore {
    pub fn new(clip_id: impl Into<String>, f_plan: f64, f_per: f64, f_ent: f64, w: &DifficultyWeights) -> Self {
        DifficultyScore {
            clip_id: clip_id.into(),
            f_plan,
            f_per,
            f_ent,
            f_x: case_difficulty(f_plan, f_per, f_ent, w),
        }
    }
}

/// Score changes between two evaluations of the same clips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForgetStats {
    /// Fraction of all clips whose PDMS dropped.
    pub fr: f64,
    /// Fraction of hard clips whose PDMS dropped by at least δ_h.
    pub hfr: f64,
    /// Fraction of hard clips whose PDMS rose by at least δ_h.
    pub hir: f64,
    /// Fraction of hard clips still scoring below the hard cut.
    pub remaining_hard: f64,
}

/// Compares `cur` against `prev`. A hard clip "remains hard" when its current
/// PDMS is below `hard_pdms_cut`. Hard-set fractions are 0 for an empty hard set.
pub fn forget_stats(
    prev: &BTreeMap<String, f64>,
    cur: &BTreeMap<String, f64>,
    hard_ids: &BTreeSet<String>,
    delta_h: f64,
    hard_pdms_cut: f64,
) -> Result<ForgetStats> {
    if !(delta_h > 0.0) {
        return Err(Error::Input(format!("δ_h must be positive, got {delta_h}")));
    }
    if prev.len() != cur.len() || prev.keys().zip(cur.keys()).any(|(a, b)| a != b) {
        return Err(Error::Input("previous and current reports cover different clips".into()));
    }
    if let Some(id) = hard_ids.iter().find(|id| !cur.contains_key(*id)) {
        return Err(Error::Input(format!("hard clip {id} missing from reports")));
    }
    let n = prev.len().max(1) as f64;
    let fr = prev.iter().filter(|(k, p)| cur[*k] < **p).count() as f64 / n;
    let nh = hard_ids.len();
    let frac = |pred: &dyn Fn(f64, f64) -> bool| {
        if nh == 0 {
            0.0
        } else {
            hard_ids.iter().filter(|id| pred(prev[*id], cur[*id])).count() as f64 / nh as f64
        }
    };
    Ok(ForgetStats {
        fr,
        hfr: frac(&|p, c| c <= p - delta_h),
        hir: frac(&|p, c| c >= p + delta_h),
        remaining_hard: frac(&|_, c| c < hard_pdms_cut),
    })
}

/// `mean(risks) + sqrt((kl + ln(2√n/δ)) / (2n))`.
pub fn pac_bayes_bound(risks: &[f64], kl: f64, n: u64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Input(format!("δ must lie in (0, 1), got {delta}")));
    }
    if risks.is_empty() || risks.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::Input("empirical risks must be non-empty and within [0, 1]".into()));
    }
    if n == 0 || !(kl >= 0.0) {
        return Err(Error::Input("need n ≥ 1 and KL ≥ 0".into()));
    }
    let n = n as f64;
    let mean = risks.iter().sum::<f64>() / risks.len() as f64;
    Ok(mean + ((kl + (2.0 * n.sqrt() / delta).ln()) / (2.0 * n)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pdms_examples() {
        let s = SubScores::new(1.0, 1.0, 1.0, 0.875, 0.999);
        assert!((s.pdms - 0.9478).abs() < 5e-4);
        assert_eq!(SubScores::new(0.0, 1.0, 1.0, 1.0, 1.0).pdms, 0.0);
        let s = SubScores::new(1.0, 1.0, 0.5, 0.5, 1.0);
        assert!((s.pdms - 7.0 / 12.0).abs() < 1e-12);
        assert_eq!(plan_feedback(&s), pdm_score(&s));
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy_feedback(&[1.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((entropy_feedback(&[0.25; 4]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!((entropy_feedback(&[0.5, 0.5, 0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(matches!(entropy_feedback(&[0.5, 0.6]), Err(Error::Input(_))));
    }

    #[test]
    fn perception_examples() {
        assert_eq!(perception_feedback(0.0, 1.0).unwrap(), 0.0);
        assert_eq!(perception_feedback(0.6, 0.6).unwrap(), 1.0);
        assert!((perception_feedback(0.3, 0.6).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(perception_feedback(0.3, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn difficulty_examples() {
        let w = DifficultyWeights::default();
        assert_eq!(case_difficulty(1.0, 0.0, 0.0, &w), 0.0);
        let f = case_difficulty(0.0, 1.0, 2f64.ln(), &w);
        assert!((f - 1.106931).abs() < 1e-6);
        assert!((case_difficulty(0.948, 0.0, 0.0, &w) - 0.052).abs() < 1e-12);
    }

    #[test]
    fn forget_examples() {
        let map = |v: &[(&str, f64)]| v.iter().map(|(k, x)| (k.to_string(), *x)).collect::<BTreeMap<_, _>>();
        let prev = map(&[("a", 1.0), ("b", 1.0), ("c", 1.0)]);
        let cur = map(&[("a", 1.0), ("b", 0.5), ("c", 1.0)]);
        let none = BTreeSet::new();
        let same = forget_stats(&prev, &prev, &none, 0.1, 0.5).unwrap();
        assert_eq!((same.fr, same.hfr), (0.0, 0.0));
        let hard: BTreeSet<String> = ["b".to_string()].into();
        let s = forget_stats(&prev, &cur, &hard, 0.1, 0.5).unwrap();
        assert!((s.fr - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!((s.hfr, s.hir), (1.0, 0.0));
        let other = map(&[("a", 1.0), ("z", 1.0), ("c", 1.0)]);
        assert!(matches!(forget_stats(&prev, &other, &none, 0.1, 0.5), Err(Error::Input(_))));
    }

    #[test]
    fn pac_bayes_examples() {
        let b = pac_bayes_bound(&[0.1], 0.0, 200, 0.05).unwrap();
        assert!((b - 0.22588).abs() < 1e-4);
        assert!(pac_bayes_bound(&[0.1], 1.0, 200, 0.05).unwrap() > b);
        assert!(matches!(pac_bayes_bound(&[0.1], 0.0, 200, 1.0), Err(Error::Input(_))));
    }
}
