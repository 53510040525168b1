//! Cost-penalized group policy optimization of the specialists over the RL
//! set, with dense per-candidate supervision from log-replay simulation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapters::{ensemble_step, AdapterEnsemble, AdapterMember};
use crate::error::{Error, Result};
use crate::metrics::{plan_feedback, sub_scores, SubScores};
use crate::policy::{kl_divergence, PreparedClip, Vocabulary};
use crate::tensor_nn::{log_softmax, softmax, Dense, NetworkWeights, Params};
use crate::world::{simulate, Clip};

/// Reward, cost and sub-scores of every vocabulary candidate on one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSignals {
    pub rewards: Vec<f64>,
    pub costs: Vec<f64>,
    pub scores: Vec<SubScores>,
}

impl ProcessSignals {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Scores one world-frame candidate on `clip`.
pub fn score_candidate(clip: &Clip, vocab: &Vocabulary, m: usize, reference_progress: f64) -> Result<SubScores> {
    let log = simulate(clip, &vocab.candidate(clip, m))?;
    Ok(sub_scores(&log, clip, reference_progress))
}

/// Simulates all `M` candidates. Signals are terminal-only, so the reward is
/// `γ⁰ F_plan = F_plan` and the cost is the summed sub-score violation.
pub fn process_signals(clip: &Clip, vocab: &Vocabulary, reference_progress: f64) -> Result<ProcessSignals> {
    let scores = (0..vocab.len())
        .map(|m| score_candidate(clip, vocab, m, reference_progress))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProcessSignals {
        rewards: scores.iter().map(plan_feedback).collect(),
        costs: scores.iter().map(SubScores::violation).collect(),
        scores,
    })
}

/// Signals for many clips, in parallel.
pub fn process_signals_all(clips: &[PreparedClip], vocab: &Vocabulary) -> Result<Vec<ProcessSignals>> {
    clips
        .par_iter()
        .map(|c| process_signals(&c.clip, vocab, c.reference_progress))
        .collect()
}

/// `clamp(p_spec / p_gen, lo, hi)`.
pub fn importance_weight(spec_prob: f64, gen_prob: f64, clamp: (f64, f64)) -> Result<f64> {
    if !(gen_prob > 0.0) {
        return Err(Error::Numeric(format!("generalist probability {gen_prob} must be positive")));
    }
    Ok((spec_prob / gen_prob).clamp(clamp.0, clamp.1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineMode {
    /// Train the adapter ensemble; base weights frozen.
    Adapters,
    /// Train the planning head of a copy of the base directly, no adapters.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    /// Cost weight λ.
    pub lambda: f64,
    /// Weight of the distillation anchor to the expert target.
    pub alpha_pretrain: f64,
    /// Cost budget δ, used for reporting only.
    pub cost_budget: f64,
    pub is_clamp: (f64, f64),
    /// Discount γ of the general multi-step form; terminal-only signals make it inert.
    pub gamma: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Subtract the mean reward over candidates before weighting.
    pub group_baseline: bool,
    /// Multiplier on rewards; 0 keeps only the cost term.
    pub reward_scale: f64,
    pub mode: RefineMode,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            lambda: 1.0,
            alpha_pretrain: 1.0,
            cost_budget: 0.5,
            is_clamp: (1e-3, 1e3),
            gamma: 0.99,
            epochs: 8,
            learning_rate: 1e-4,
            group_baseline: false,
            reward_scale: 1.0,
            mode: RefineMode::Adapters,
            seed: 0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.is_clamp;
        if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0 && hi.is_finite()) {
            return Err(Error::Config(format!("refine.is_clamp ({lo}, {hi}) needs 0 < lo ≤ 1 ≤ hi")));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("alpha_pretrain", self.alpha_pretrain),
            ("learning_rate", self.learning_rate),
            ("reward_scale", self.reward_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("refine.{name} must be non-negative, got {v}")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config("refine.gamma must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Loss value and its gradient at the planning logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitLoss {
    pub loss: f64,
    pub d_logits: Vec<f64>,
}

/// `Σ_m w_m (−R_m ln p_m + λ C_m p_m)` with `p = softmax(logits)` and fixed weights `w`.
pub fn weighted_grpo_loss(logits: &[f64], weights: &[f64], rewards: &[f64], costs: &[f64], lambda: f64) -> LogitLoss {
    let p = softmax(logits);
    let log_p = log_softmax(logits);
    let mut loss = 0.0;
    // u_m = p_m ∂L/∂p_m, so ∂L/∂z_j = u_j − p_j Σ u.
    let mut u = vec![0.0; p.len()];
    for m in 0..p.len() {
        let (w, r, c) = (weights[m], rewards[m], costs[m]);
        if r != 0.0 {
            loss -= w * r * log_p[m];
        }
        loss += w * lambda * c * p[m];
        u[m] = w * (-r + lambda * c * p[m]);
    }
    let total: f64 = u.iter().sum();
    let d_logits = u.iter().zip(&p).map(|(ui, pi)| ui - pi * total).collect();
    LogitLoss { loss, d_logits }
}

/// Rewards after optional baseline subtraction and scaling.
fn effective_rewards(signals: &ProcessSignals, config: &RefineConfig) -> Vec<f64> {
    let mean = signals.rewards.iter().sum::<f64>() / signals.len().max(1) as f64;
    signals
        .rewards
        .iter()
        .map(|r| config.reward_scale * if config.group_baseline { r - mean } else { *r })
        .collect()
}

/// Importance-weighted refinement loss of one specialist output. The weights
/// are computed from the current probabilities and then held constant.
pub fn grpo_loss(
    spec_logits: &[f64],
    gen_probs: &[f64],
    signals: &ProcessSignals,
    config: &RefineConfig,
) -> Result<LogitLoss> {
    let m = spec_logits.len();
    if gen_probs.len() != m || signals.len() != m {
        return Err(Error::shape(
            "grpo_loss",
            format!("logits {m}, generalist {}, signals {}", gen_probs.len(), signals.len()),
        ));
    }
    let p = softmax(spec_logits);
    let weights = p
        .iter()
        .zip(gen_probs)
        .map(|(&s, &g)| importance_weight(s, g, config.is_clamp))
        .collect::<Result<Vec<_>>>()?;
    let rewards = effective_rewards(signals, config);
    Ok(weighted_grpo_loss(spec_logits, &weights, &rewards, &signals.costs, config.lambda))
}

/// Refinement loss plus `α_pretrain · KL(target ‖ p)`.
pub fn combined_loss(
    spec_logits: &[f64],
    gen_probs: &[f64],
    target: &[f64],
    signals: &ProcessSignals,
    config: &RefineConfig,
) -> Result<LogitLoss> {
    let mut out = grpo_loss(spec_logits, gen_probs, signals, config)?;
    if config.alpha_pretrain > 0.0 {
        let q = softmax(spec_logits);
        out.loss += config.alpha_pretrain * kl_divergence(target, &log_softmax(spec_logits));
        for ((d, qi), ti) in out.d_logits.iter_mut().zip(&q).zip(target) {
            *d += config.alpha_pretrain * (qi - ti);
        }
    }
    Ok(out)
}

/// Everything refinement needs about one clip, computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineClip {
    pub id: String,
    /// Frozen trunk output.
    pub embedding: Vec<f64>,
    pub gen_probs: Vec<f64>,
    pub target: Vec<f64>,
    pub signals: ProcessSignals,
}

impl RefineClip {
    pub fn new(base: &NetworkWeights, clip: &PreparedClip, signals: ProcessSignals) -> Result<Self> {
        let cache = base.trunk(&clip.features.normalized, None)?;
        let embedding = cache.embedding().to_vec();
        let gen_probs = softmax(&base.plan_head.apply(&embedding));
        Ok(RefineClip {
            id: clip.clip.id.clone(),
            embedding,
            gen_probs,
            target: clip.target.clone(),
            signals,
        })
    }
}

/// Per-epoch refinement record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Expected reward under each member's policy, averaged over members and clips.
    pub mean_reward: f64,
    pub mean_cost: f64,
    /// `mean_cost − δ`; non-positive when the budget is met.
    pub budget_delta: f64,
    pub member_loss: Vec<f64>,
}

fn check_finite(loss: f64, member: usize, clip: &str) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Training(format!("member {member}, clip {clip}: loss {loss}")))
    }
}

struct GroupPass<G> {
    grad: G,
    loss: f64,
    reward: f64,
    cost: f64,
}

/// Loss, gradient and expected reward/cost of one parameter set over a group,
/// averaged over the group's clips.
fn group_pass<G: Params>(
    group: &[usize],
    clips: &[RefineClip],
    config: &RefineConfig,
    member: usize,
    zero: G,
    logits: impl Fn(&RefineClip) -> Vec<f64>,
    grad: impl Fn(&RefineClip, &[f64]) -> G,
) -> Result<GroupPass<G>> {
    let n = group.len() as f64;
    let mut acc = zero;
    let (mut loss, mut reward, mut cost) = (0.0, 0.0, 0.0);
    for &i in group {
        let c = &clips[i];
        let z = logits(c);
        let l = combined_loss(&z, &c.gen_probs, &c.target, &c.signals, config)?;
        check_finite(l.loss, member, &c.id)?;
        let p = softmax(&z);
        reward += p.iter().zip(&c.signals.rewards).map(|(a, b)| a * b).sum::<f64>() / n;
        cost += p.iter().zip(&c.signals.costs).map(|(a, b)| a * b).sum::<f64>() / n;
        loss += l.loss / n;
        crate::tensor_nn::accumulate(&mut acc, &grad(c, &l.d_logits), 1.0 / n)?;
    }
    Ok(GroupPass {
        grad: acc,
        loss,
        reward,
        cost,
    })
}

fn epoch_order(config: &RefineConfig, epoch: usize, groups: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..groups).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64));
    order.shuffle(&mut rng);
    order
}

fn validate_groups(groups: &[Vec<usize>], clips: &[RefineClip]) -> Result<()> {
    for g in groups {
        if g.is_empty() || g.iter().any(|&i| i >= clips.len()) {
            return Err(Error::Input("refinement group is empty or references a missing clip".into()));
        }
    }
    Ok(())
}

/// Trains every member independently on each group in turn. Each group is a
/// list of indices into `clips` (a hard clip and its anchors).
pub fn refine_specialists(
    base: &NetworkWeights,
    ensemble: AdapterEnsemble,
    clips: &[RefineClip],
    groups: &[Vec<usize>],
    config: &RefineConfig,
) -> Result<(AdapterEnsemble, Vec<EpochLog>)> {
    config.validate()?;
    ensemble.validate(base)?;
    validate_groups(groups, clips)?;
    let mut ensemble = ensemble;
    let k = ensemble.len();
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut member_loss = vec![0.0; k];
        let (mut reward, mut cost) = (0.0, 0.0);
        for g in epoch_order(config, epoch, groups.len()) {
            let group = &groups[g];
            let passes = ensemble
                .members
                .par_iter()
                .enumerate()
                .map(|(mi, member)| {
                    group_pass(
                        group,
                        clips,
                        config,
                        mi,
                        member.zeros_like(),
                        |c| member.logits(base, &c.embedding),
                        |c, d| member.gradient(&c.embedding, d),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let grads: Vec<AdapterMember> = passes
                .iter()
                .enumerate()
                .map(|(mi, p)| {
                    member_loss[mi] += p.loss / groups.len() as f64;
                    reward += p.reward / (k * groups.len()) as f64;
                    cost += p.cost / (k * groups.len()) as f64;
                    p.grad.clone()
                })
                .collect();
            ensemble_step(&mut ensemble, &grads, config.learning_rate)?;
        }
        logs.push(EpochLog {
            epoch,
            mean_reward: reward,
            mean_cost: cost,
            budget_delta: cost - config.cost_budget,
            member_loss,
        });
    }
    Ok((ensemble, logs))
}

/// Planning-head wrapper so the head alone can be stepped as a parameter set.
struct Head(Dense);

impl Params for Head {
    fn slices(&self) -> Vec<&[f64]> {
        vec![self.0.weight.data(), &self.0.bias]
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let Dense { weight, bias } = &mut self.0;
        vec![weight.data_mut(), bias.as_mut_slice()]
    }
}

/// Same objective applied directly to the base planning head, without adapters.
pub fn refine_full(
    base: &NetworkWeights,
    clips: &[RefineClip],
    groups: &[Vec<usize>],
    config: &RefineConfig,
) -> Result<(NetworkWeights, Vec<EpochLog>)> {
    config.validate()?;
    validate_groups(groups, clips)?;
    let mut head = Head(base.plan_head.clone());
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (mut loss, mut reward, mut cost) = (0.0, 0.0, 0.0);
        for g in epoch_order(config, epoch, groups.len()) {
            let current = &head.0;
            let pass = group_pass(
                &groups[g],
                clips,
                config,
                0,
                Head(Dense::zeros(current.in_dim(), current.out_dim())),
                |c| current.apply(&c.embedding),
                |c, d| {
                    let mut h = Dense::zeros(current.in_dim(), current.out_dim());
                    h.weight.add_outer(d, &c.embedding, 1.0);
                    h.bias.copy_from_slice(d);
                    Head(h)
                },
            )?;
            loss += pass.loss / groups.len() as f64;
            reward += pass.reward / groups.len() as f64;
            cost += pass.cost / groups.len() as f64;
            crate::tensor_nn::sgd_step(&mut head, &pass.grad, config.learning_rate)?;
        }
        logs.push(EpochLog {
            epoch,
            mean_reward: reward,
            mean_cost: cost,
            budget_delta: cost - config.cost_budget,
            member_loss: vec![loss],
        });
    }
    let mut out = base.clone();
    out.plan_head = head.0;
    Ok((out, logs))
}
