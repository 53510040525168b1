//! Clip data model, procedural scenarios, planar geometry and non-reactive
//! log-replay simulation.

mod geometry;
mod scenario;
mod sim;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use geometry::{obb_overlap, rect_distance, wrap_angle, Lane, OrientedRect, Pose};
pub use scenario::{generate_scenario, Knobs, ScenarioKind, ScenarioSpec};
pub use sim::{simulate, simulate_with, SimLog, SimOptions};

/// World-level constants shared by every clip of a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    /// Seconds between frames.
    pub dt: f64,
    pub history_len: usize,
    pub future_len: usize,
    /// m/s
    pub speed_limit: f64,
    /// m
    pub lane_half_width: f64,
    pub ego_length: f64,
    pub ego_width: f64,
    /// Centerline extent behind and ahead of the ego start, m.
    pub lane_behind: f64,
    pub lane_ahead: f64,
    /// Centerline vertex spacing, m.
    pub lane_spacing: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            dt: 0.5,
            history_len: 4,
            future_len: 8,
            speed_limit: 12.0,
            lane_half_width: 1.75,
            ego_length: 4.5,
            ego_width: 2.0,
            lane_behind: 40.0,
            lane_ahead: 140.0,
            lane_spacing: 1.0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("speed_limit", self.speed_limit),
            ("lane_half_width", self.lane_half_width),
            ("ego_length", self.ego_length),
            ("ego_width", self.ego_width),
            ("lane_behind", self.lane_behind),
            ("lane_ahead", self.lane_ahead),
            ("lane_spacing", self.lane_spacing),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("world.{name} must be positive, got {v}")));
            }
        }
        if self.future_len == 0 {
            return Err(Error::Config("world.future_len must be at least 1".into()));
        }
        if self.history_len == 0 {
            return Err(Error::Config("world.history_len must be at least 1".into()));
        }
        Ok(())
    }

    /// Planning horizon in seconds.
    pub fn horizon(&self) -> f64 {
        self.future_len as f64 * self.dt
    }
}

/// Ego state at one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub pose: Pose,
    /// m/s
    pub speed: f64,
}

/// Agent state at one frame; velocity in world axes, m/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub pose: Pose,
    pub vx: f64,
    pub vy: f64,
}

/// Logged track of one other road user over every clip frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub id: u32,
    pub length: f64,
    pub width: f64,
    pub states: Vec<AgentState>,
}

impl AgentTrack {
    pub fn footprint(&self, pose: &Pose) -> OrientedRect {
        OrientedRect::from_pose(pose, self.length, self.width)
    }
}

/// Planned ego poses for frames `1..=future_len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>) -> Self {
        Trajectory { poses }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.poses.iter().all(Pose::is_finite)
    }

    /// `(x, y, ψ)` per pose, concatenated.
    pub fn flatten(&self) -> Vec<f64> {
        self.poses.iter().flat_map(|p| [p.x, p.y, p.psi]).collect()
    }

    pub fn from_flat(values: &[f64]) -> Self {
        Trajectory {
            poses: values
                .chunks_exact(3)
                .map(|c| Pose::new(c[0], c[1], c[2]))
                .collect(),
        }
    }

    /// Mean pointwise Euclidean distance over positions.
    pub fn ade(&self, other: &Trajectory) -> f64 {
        let n = self.poses.len().min(other.poses.len());
        if n == 0 {
            return 0.0;
        }
        self.poses
            .iter()
            .zip(&other.poses)
            .map(|(a, b)| ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt())
            .sum::<f64>()
            / n as f64
    }

    /// Re-expresses every pose from the frame of `from` into world frame.
    pub fn to_world(&self, origin: &Pose) -> Trajectory {
        Trajectory {
            poses: self.poses.iter().map(|p| origin.to_world(p)).collect(),
        }
    }

    pub fn to_local(&self, origin: &Pose) -> Trajectory {
        Trajectory {
            poses: self.poses.iter().map(|p| origin.to_local(p)).collect(),
        }
    }
}

/// A logged driving scene over frames `−history_len ..= future_len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub id: String,
    /// Seconds between frames.
    pub dt: f64,
    pub history_len: usize,
    pub future_len: usize,
    pub ego_length: f64,
    pub ego_width: f64,
    pub ego_track: Vec<EgoState>,
    pub agents: Vec<AgentTrack>,
    pub lane: Lane,
    /// m/s
    pub speed_limit: f64,
    pub expert_future: Trajectory,
    pub scenario_tag: ScenarioKind,
}

impl Clip {
    pub fn frame_count(&self) -> usize {
        self.history_len + self.future_len + 1
    }

    /// Storage index of signed frame `f`, where frame 0 is the planning instant.
    pub fn index(&self, frame: i64) -> usize {
        (frame + self.history_len as i64) as usize
    }

    /// Ego state at the planning instant.
    pub fn ego_now(&self) -> &EgoState {
        &self.ego_track[self.history_len]
    }

    pub fn ego_footprint(&self, pose: &Pose) -> OrientedRect {
        OrientedRect::from_pose(pose, self.ego_length, self.ego_width)
    }

    pub fn validate(&self) -> Result<()> {
        let frames = self.frame_count();
        if !(self.dt > 0.0) {
            return Err(Error::Input(format!("clip {}: dt must be positive", self.id)));
        }
        if self.ego_track.len() != frames {
            return Err(Error::Input(format!(
                "clip {}: ego track has {} frames, expected {frames}",
                self.id,
                self.ego_track.len()
            )));
        }
        if !(self.ego_length > 0.0 && self.ego_width > 0.0) {
            return Err(Error::Input(format!("clip {}: ego extent must be positive", self.id)));
        }
        for a in &self.agents {
            if a.states.len() != frames {
                return Err(Error::Input(format!(
                    "clip {}: agent {} has {} frames, expected {frames}",
                    self.id,
                    a.id,
                    a.states.len()
                )));
            }
            if !(a.length > 0.0 && a.width > 0.0) {
                return Err(Error::Input(format!(
                    "clip {}: agent {} extent must be positive",
                    self.id, a.id
                )));
            }
        }
        if self.expert_future.len() != self.future_len || !self.expert_future.is_finite() {
            return Err(Error::Input(format!(
                "clip {}: expert future must hold {} finite poses",
                self.id, self.future_len
            )));
        }
        Ok(())
    }
}
