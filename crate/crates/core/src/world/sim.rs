use serde::{Deserialize, Serialize};

use super::{geometry::wrap_angle, obb_overlap, rect_distance, Clip, Pose, Trajectory};
use crate::error::{Error, Result};

/// Knobs of the log-replay simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// Interpolated collision checks per frame interval.
    pub collision_substeps: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            collision_substeps: 4,
        }
    }
}

/// Evidence record of one open-loop rollout, frames `0..=future_len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLog {
    pub ego_poses: Vec<Pose>,
    /// Signed speed from backward differences of logged positions, m/s.
    pub speed: Vec<f64>,
    /// m/s²
    pub accel: Vec<f64>,
    /// m/s³
    pub jerk: Vec<f64>,
    /// rad/s
    pub yaw_rate: Vec<f64>,
    /// Replayed agent poses, `agent_poses[frame][agent]`.
    pub agent_poses: Vec<Vec<Pose>>,
    /// Smallest footprint-to-footprint distance to any agent, m (∞ without agents).
    pub min_clearance: Vec<f64>,
    pub collision_frame: Option<usize>,
    pub off_drivable_frame: Option<usize>,
    /// Arclength gained along the centerline since frame 0, m.
    pub progress: Vec<f64>,
}

impl SimLog {
    pub fn collided(&self) -> bool {
        self.collision_frame.is_some()
    }

    pub fn off_drivable(&self) -> bool {
        self.off_drivable_frame.is_some()
    }

    pub fn final_progress(&self) -> f64 {
        *self.progress.last().unwrap_or(&0.0)
    }
}

/// Replays logged agents unchanged while the ego follows `candidate` open-loop.
pub fn simulate(clip: &Clip, candidate: &Trajectory) -> Result<SimLog> {
    simulate_with(clip, candidate, SimOptions::default())
}

pub fn simulate_with(clip: &Clip, candidate: &Trajectory, opts: SimOptions) -> Result<SimLog> {
    if candidate.len() != clip.future_len {
        return Err(Error::Input(format!(
            "candidate has {} poses, clip {} needs {}",
            candidate.len(),
            clip.id,
            clip.future_len
        )));
    }
    if !candidate.is_finite() {
        return Err(Error::Input(format!("non-finite candidate for clip {}", clip.id)));
    }
    let t_len = clip.future_len;
    let dt = clip.dt;
    let now = clip.history_len;

    let mut ego_poses = Vec::with_capacity(t_len + 1);
    ego_poses.push(clip.ego_now().pose);
    ego_poses.extend_from_slice(&candidate.poses);

    let mut speed = Vec::with_capacity(t_len + 1);
    speed.push(clip.ego_now().speed);
    for t in 1..=t_len {
        let (a, b) = (&ego_poses[t - 1], &ego_poses[t]);
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let dist = (dx * dx + dy * dy).sqrt();
        let forward = dx * a.psi.cos() + dy * a.psi.sin();
        speed.push(if forward < 0.0 { -dist / dt } else { dist / dt });
    }
    let prev_speed = clip.ego_track[now - 1].speed;
    let mut accel = Vec::with_capacity(t_len + 1);
    accel.push((speed[0] - prev_speed) / dt);
    for t in 1..=t_len {
        accel.push((speed[t] - speed[t - 1]) / dt);
    }
    let prev_accel = if now >= 2 {
        (clip.ego_track[now - 1].speed - clip.ego_track[now - 2].speed) / dt
    } else {
        accel[0]
    };
    let mut jerk = Vec::with_capacity(t_len + 1);
    jerk.push((accel[0] - prev_accel) / dt);
    for t in 1..=t_len {
        jerk.push((accel[t] - accel[t - 1]) / dt);
    }
    let prev_psi = clip.ego_track[now - 1].pose.psi;
    let mut yaw_rate = Vec::with_capacity(t_len + 1);
    yaw_rate.push(wrap_angle(ego_poses[0].psi - prev_psi) / dt);
    for t in 1..=t_len {
        yaw_rate.push(wrap_angle(ego_poses[t].psi - ego_poses[t - 1].psi) / dt);
    }

    let agent_poses: Vec<Vec<Pose>> = (0..=t_len)
        .map(|t| clip.agents.iter().map(|a| a.states[now + t].pose).collect())
        .collect();

    let min_clearance = (0..=t_len)
        .map(|t| {
            let ego = clip.ego_footprint(&ego_poses[t]);
            clip.agents
                .iter()
                .zip(&agent_poses[t])
                .map(|(a, p)| rect_distance(&ego, &a.footprint(p)))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();

    let substeps = opts.collision_substeps.max(1);
    let mut collision_frame = None;
    'frames: for t in 1..=t_len {
        for k in 1..=substeps {
            let alpha = k as f64 / substeps as f64;
            let ego = clip.ego_footprint(&ego_poses[t - 1].lerp(&ego_poses[t], alpha));
            for (i, a) in clip.agents.iter().enumerate() {
                let pose = agent_poses[t - 1][i].lerp(&agent_poses[t][i], alpha);
                if obb_overlap(&ego, &a.footprint(&pose)) {
                    collision_frame = Some(t);
                    break 'frames;
                }
            }
        }
    }

    let half = clip.lane.half_width();
    let off_drivable_frame = (1..=t_len).find(|&t| {
        clip.ego_footprint(&ego_poses[t])
            .corners()
            .iter()
            .any(|c| clip.lane.project(c[0], c[1]).1.abs() > half)
    });

    let s0 = clip.lane.project(ego_poses[0].x, ego_poses[0].y).0;
    let progress = ego_poses
        .iter()
        .map(|p| clip.lane.project(p.x, p.y).0 - s0)
        .collect();

    Ok(SimLog {
        ego_poses,
        speed,
        accel,
        jerk,
        yaw_rate,
        agent_poses,
        min_clearance,
        collision_frame,
        off_drivable_frame,
        progress,
    })
}
