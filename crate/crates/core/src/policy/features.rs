use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{wrap_angle, Clip, Pose};

/// Lookahead distances of the curvature samples, m.
pub const CURVATURE_LOOKAHEADS: [f64; 4] = [5.0, 10.0, 20.0, 30.0];
/// Agents described in the feature vector.
pub const NEAREST_AGENTS: usize = 4;
/// speed, accel, heading offset, lateral offset, 4 curvatures, 4 × (dx, dy, dvx, dvy).
pub const FEATURE_DIM: usize = 4 + CURVATURE_LOOKAHEADS.len() + 4 * NEAREST_AGENTS;
/// (dx, dy) of each of the nearest agents.
pub const PERCEPTION_DIM: usize = 2 * NEAREST_AGENTS;

/// Normalization divisors, one per raw feature slot of each group.
const EGO_SCALE: [f64; 4] = [10.0, 3.0, 0.2, 1.0];
const CURVATURE_SCALE: f64 = 0.04;
const AGENT_SCALE: [f64; 4] = [30.0, 5.0, 10.0, 5.0];

/// Standard deviations of the additive observation noise per field group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationNoise {
    /// Applied to speed (m/s), accel (m/s²), heading offset (rad) and lateral offset (m).
    pub ego: f64,
    /// 1/m
    pub curvature: f64,
    /// Agent relative position, m.
    pub agent_position: f64,
    /// Agent relative velocity, m/s.
    pub agent_velocity: f64,
}

impl Default for ObservationNoise {
    fn default() -> Self {
        ObservationNoise {
            ego: 0.05,
            curvature: 0.0,
            agent_position: 0.5,
            agent_velocity: 0.2,
        }
    }
}

impl ObservationNoise {
    pub fn none() -> Self {
        ObservationNoise {
            ego: 0.0,
            curvature: 0.0,
            agent_position: 0.0,
            agent_velocity: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("ego", self.ego),
            ("curvature", self.curvature),
            ("agent_position", self.agent_position),
            ("agent_velocity", self.agent_velocity),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("noise.{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Observation of one clip at the planning instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Physical units, observation noise applied.
    pub raw: Vec<f64>,
    /// `raw` divided by fixed per-field scales; the network input.
    pub normalized: Vec<f64>,
    /// Noise-free normalized (dx, dy) of the nearest agents, zero-padded.
    pub perception_target: Vec<f64>,
}

fn normalize(raw: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(raw.len());
    out.extend(raw[..4].iter().zip(EGO_SCALE).map(|(v, s)| v / s));
    out.extend(raw[4..8].iter().map(|v| v / CURVATURE_SCALE));
    for agent in raw[8..].chunks_exact(4) {
        out.extend(agent.iter().zip(AGENT_SCALE).map(|(v, s)| v / s));
    }
    out
}

/// Encodes the clip as seen at frame 0. Noise is drawn from a generator
/// seeded by `noise_seed`, so identical seeds give identical features.
pub fn encode(clip: &Clip, noise: &ObservationNoise, noise_seed: u64) -> FeatureVector {
    let now = clip.history_len;
    let ego = clip.ego_now();
    let prev = &clip.ego_track[now - 1];
    let (s, lateral) = clip.lane.project_extended(ego.pose.x, ego.pose.y);
    let heading = wrap_angle(ego.pose.psi - clip.lane.point_at(s).psi);

    let mut clean = vec![ego.speed, (ego.speed - prev.speed) / clip.dt, heading, lateral];
    clean.extend(CURVATURE_LOOKAHEADS.iter().map(|d| clip.lane.curvature_at(s + d)));

    let (cos, sin) = (ego.pose.psi.cos(), ego.pose.psi.sin());
    let mut agents: Vec<[f64; 4]> = clip
        .agents
        .iter()
        .map(|a| {
            let st = &a.states[now];
            let rel: Pose = ego.pose.to_local(&st.pose);
            let vx = cos * st.vx + sin * st.vy - ego.speed;
            let vy = -sin * st.vx + cos * st.vy;
            [rel.x, rel.y, vx, vy]
        })
        .collect();
    agents.sort_by(|a, b| (a[0].hypot(a[1])).total_cmp(&b[0].hypot(b[1])));
    agents.resize(NEAREST_AGENTS.max(agents.len()), [0.0; 4]);
    agents.truncate(NEAREST_AGENTS);
    let present = clip.agents.len().min(NEAREST_AGENTS);
    for a in &agents {
        clean.extend_from_slice(a);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut draw = |sigma: f64| -> f64 {
        let z: f64 = StandardNormal.sample(&mut rng);
        sigma * z
    };
    let mut raw = clean.clone();
    for v in &mut raw[..4] {
        *v += draw(noise.ego);
    }
    for v in &mut raw[4..8] {
        *v += draw(noise.curvature);
    }
    for (i, agent) in raw[8..].chunks_exact_mut(4).enumerate() {
        let (p, q) = (draw(noise.agent_position), draw(noise.agent_position));
        let (u, w) = (draw(noise.agent_velocity), draw(noise.agent_velocity));
        // Padding slots stay exactly zero.
        if i < present {
            agent[0] += p;
            agent[1] += q;
            agent[2] += u;
            agent[3] += w;
        }
    }

    let clean_norm = normalize(&clean);
    let perception_target = clean_norm[8..]
        .chunks_exact(4)
        .flat_map(|a| [a[0], a[1]])
        .collect();
    FeatureVector {
        normalized: normalize(&raw),
        raw,
        perception_target,
    }
}
