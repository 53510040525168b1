use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_nn::{kmeans, softmax};
use crate::world::{Clip, Pose, Trajectory};

/// Candidate trajectories in the ego frame at the planning instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub entries: Vec<Trajectory>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry `m` placed at the clip's current ego pose, in world frame.
    pub fn candidate(&self, clip: &Clip, m: usize) -> Trajectory {
        self.entries[m].to_world(&clip.ego_now().pose)
    }
}

/// Expert future re-expressed in the ego frame at frame 0.
pub fn expert_in_ego_frame(clip: &Clip) -> Trajectory {
    clip.expert_future.to_local(&clip.ego_now().pose)
}

/// Clusters the expert futures of `clips` (positions only) into `m` entries.
/// Entry headings are the circular mean of member headings.
pub fn build_vocabulary(clips: &[Clip], m: usize, seed: u64) -> Result<Vocabulary> {
    if m == 0 {
        return Err(Error::Config("vocabulary size must be positive".into()));
    }
    let experts: Vec<Trajectory> = clips.iter().map(expert_in_ego_frame).collect();
    let points: Vec<Vec<f64>> = experts
        .iter()
        .map(|t| t.poses.iter().flat_map(|p| [p.x, p.y]).collect())
        .collect();
    let clustering = kmeans(&points, m, seed)?;
    let horizon = experts.first().map_or(0, Trajectory::len);
    let entries = clustering
        .centers
        .iter()
        .enumerate()
        .map(|(k, center)| {
            let mut sin = vec![0.0; horizon];
            let mut cos = vec![0.0; horizon];
            for (e, _) in experts
                .iter()
                .zip(&clustering.assignment)
                .filter(|(_, &a)| a == k)
            {
                for (i, p) in e.poses.iter().enumerate() {
                    sin[i] += p.psi.sin();
                    cos[i] += p.psi.cos();
                }
            }
            Trajectory::new(
                (0..horizon)
                    .map(|i| Pose::new(center[2 * i], center[2 * i + 1], sin[i].atan2(cos[i])))
                    .collect(),
            )
        })
        .collect();
    Ok(Vocabulary { entries })
}

/// Soft target `∝ exp(−ADE(entry, expert) / τ)`.
pub fn expert_target(vocab: &Vocabulary, expert: &Trajectory, tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("target temperature must be positive, got {tau}")));
    }
    let scores: Vec<f64> = vocab.entries.iter().map(|e| -e.ade(expert) / tau).collect();
    Ok(softmax(&scores))
}
