//! Hard-case discovery: difficulty scoring, percentile selection and RL-set
//! construction.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{entropy_feedback, perception_feedback, DifficultyScore, DifficultyWeights};
use crate::policy::{clip_seed, perception_loss, Generalist, PreparedClip};
use crate::refine::score_candidate;
use crate::tensor_nn::argmax;

/// Selected hard clips and the cut that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardSet {
    /// Sorted by descending difficulty, ties by ascending id.
    pub cases: Vec<DifficultyScore>,
    /// Smallest `f_x` among the selected cases.
    pub threshold: f64,
    /// Percentage of the dataset selected.
    pub epsilon: f64,
}

impl HardSet {
    pub fn ids(&self) -> BTreeSet<String> {
        self.cases.iter().map(|c| c.clip_id.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }
}

/// Difficulty of every clip under the generalist's argmax plan. Perception
/// losses are normalized by the dataset maximum, found in a first pass.
pub fn score_dataset(
    generalist: &Generalist,
    clips: &[PreparedClip],
    weights: &DifficultyWeights,
) -> Result<Vec<DifficultyScore>> {
    if clips.is_empty() {
        return Err(Error::Input("cannot score an empty dataset".into()));
    }
    let raw = clips
        .par_iter()
        .map(|c| {
            let out = generalist.forward(&c.features.normalized)?;
            let probs = out.probs();
            let chosen = argmax(&probs);
            let f_plan = score_candidate(&c.clip, &generalist.vocabulary, chosen, c.reference_progress)?.pdms;
            let f_ent = entropy_feedback(&probs)?;
            let (per_loss, _) = perception_loss(&out.perception, &c.features.perception_target);
            Ok((f_plan, f_ent, per_loss))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_loss = raw.iter().map(|r| r.2).fold(0.0, f64::max);
    raw.iter()
        .zip(clips)
        .map(|(&(f_plan, f_ent, loss), c)| {
            let f_per = if max_loss > 0.0 { perception_feedback(loss, max_loss)? } else { 0.0 };
            Ok(DifficultyScore::new(c.clip.id.clone(), f_plan, f_per, f_ent, weights))
        })
        .collect()
}

/// Number of cases in the top `epsilon` percent of `n`.
pub fn hard_count(n: usize, epsilon: f64) -> usize {
    ((epsilon * n as f64 / 100.0) - 1e-9).ceil().max(0.0) as usize
}

/// Top `epsilon` percent by descending `f_x`; ties at the cut go to the
/// lexicographically smaller clip id.
pub fn select_hard(scores: &[DifficultyScore], epsilon: f64) -> Result<HardSet> {
    if !(epsilon > 0.0 && epsilon < 100.0) {
        return Err(Error::Config(format!("ε must lie in (0, 100), got {epsilon}")));
    }
    let mut sorted: Vec<&DifficultyScore> = scores.iter().collect();
    sorted.sort_by(|a, b| b.f_x.total_cmp(&a.f_x).then_with(|| a.clip_id.cmp(&b.clip_id)));
    let n = hard_count(scores.len(), epsilon);
    let cases: Vec<DifficultyScore> = sorted.into_iter().take(n).cloned().collect();
    let threshold = cases.last().map_or(f64::INFINITY, |c| c.f_x);
    Ok(HardSet {
        cases,
        threshold,
        epsilon,
    })
}

/// One hard clip and the training clips sampled alongside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlGroup {
    pub hard_id: String,
    /// Uniform draws without replacement from the training set, excluding the hard clip.
    pub anchors: Vec<String>,
}

impl RlGroup {
    /// Hard clip first, then anchors.
    pub fn clip_ids(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.hard_id.as_str()).chain(self.anchors.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlSet {
    pub groups: Vec<RlGroup>,
    pub anchors_per_case: usize,
}

/// Pairs each hard clip with `l` training clips drawn uniformly without
/// replacement. Each group draws from its own stream seeded by `seed` and
/// the hard clip id.
pub fn build_rl_set(hard: &HardSet, train_ids: &[String], l: usize, seed: u64) -> Result<RlSet> {
    if l >= train_ids.len() {
        return Err(Error::Config(format!(
            "cannot sample {l} anchors from a training set of {}",
            train_ids.len()
        )));
    }
    let groups = hard
        .cases
        .iter()
        .map(|case| {
            let pool: Vec<&String> = train_ids.iter().filter(|id| **id != case.clip_id).collect();
            if l > pool.len() {
                return Err(Error::Config(format!("not enough clips to sample {l} anchors")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(clip_seed(seed, &case.clip_id));
            let anchors = sample(&mut rng, pool.len(), l).into_iter().map(|i| pool[i].clone()).collect();
            Ok(RlGroup {
                hard_id: case.clip_id.clone(),
                anchors,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RlSet {
        groups,
        anchors_per_case: l,
    })
}
