//! The generalist planner: clip features, trajectory vocabulary, soft expert
//! targets and supervised pretraining.

mod features;
mod train;
mod vocab;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::privileged_reference;
use crate::tensor_nn::{NetworkShape, NetworkWeights, PolicyOutput};
use crate::world::Clip;

pub use features::{
    encode, FeatureVector, ObservationNoise, CURVATURE_LOOKAHEADS, FEATURE_DIM, NEAREST_AGENTS, PERCEPTION_DIM,
};
pub use train::{
    kl_divergence, perception_loss, pretrain, pretrain_loss, sample_gradient, HeadLoss, PretrainConfig,
    PretrainLog, TrainingSample,
};
pub use vocab::{build_vocabulary, expert_in_ego_frame, expert_target, Vocabulary};

/// Stable per-clip seed derived from a base seed and the clip id.
pub fn clip_seed(base: u64, clip_id: &str) -> u64 {
    // FNV-1a followed by a splitmix finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in clip_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ base.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Pretrained base policy with its vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generalist {
    pub network: NetworkWeights,
    pub vocabulary: Vocabulary,
}

impl Generalist {
    pub fn forward(&self, features: &[f64]) -> Result<PolicyOutput> {
        self.network.forward(features)
    }
}

/// Network shape for the fixed feature layout.
pub fn network_shape(hidden: &[usize], vocab_size: usize) -> NetworkShape {
    NetworkShape {
        input: FEATURE_DIM,
        hidden: hidden.to_vec(),
        vocab: vocab_size,
        perception: PERCEPTION_DIM,
    }
}

/// A clip with everything derived from it once: observation, soft target and
/// the privileged planner's progress.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedClip {
    pub clip: Clip,
    pub features: FeatureVector,
    pub target: Vec<f64>,
    pub reference_progress: f64,
}

impl PreparedClip {
    pub fn sample(&self) -> TrainingSample {
        TrainingSample {
            features: self.features.normalized.clone(),
            target: self.target.clone(),
            perception: self.features.perception_target.clone(),
        }
    }
}

/// Encodes every clip (noise seeded per clip from `noise_seed`) in parallel.
pub fn prepare_clips(
    clips: &[Clip],
    vocab: &Vocabulary,
    noise: &ObservationNoise,
    noise_seed: u64,
    tau: f64,
) -> Result<Vec<PreparedClip>> {
    clips
        .par_iter()
        .map(|clip| {
            let features = encode(clip, noise, clip_seed(noise_seed, &clip.id));
            let target = expert_target(vocab, &expert_in_ego_frame(clip), tau)?;
            let (_, reference_progress) = privileged_reference(clip)?;
            Ok(PreparedClip {
                clip: clip.clone(),
                features,
                target,
                reference_progress,
            })
        })
        .collect()
}
