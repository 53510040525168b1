//! Privileged IDM car-follower used as the expert and as the EP reference.

use crate::error::Result;
use crate::world::{simulate, AgentTrack, Clip, Lane, Pose, Trajectory};

/// Intelligent Driver Model constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdmParams {
    /// s
    pub time_headway: f64,
    /// m/s²
    pub max_accel: f64,
    /// m/s²
    pub comfortable_decel: f64,
    /// m
    pub min_gap: f64,
    pub exponent: f64,
    /// Hard braking limit, m/s².
    pub max_brake: f64,
    /// Agents entering the corridor within this many seconds count as leaders.
    pub lookahead: f64,
    /// Time constant of the lateral return to the centerline, s.
    pub lateral_tau: f64,
    /// Integration substeps per frame.
    pub substeps: usize,
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams {
            time_headway: 1.5,
            max_accel: 2.0,
            comfortable_decel: 3.0,
            min_gap: 2.0,
            exponent: 4.0,
            max_brake: 8.0,
            lookahead: 1.5,
            lateral_tau: 1.2,
            substeps: 10,
        }
    }
}

/// IDM acceleration for speed `v`, leader speed `v_lead` and bumper gap `gap`
/// (`None` on a free road).
pub fn idm_accel(p: &IdmParams, desired: f64, v: f64, lead: Option<(f64, f64)>) -> f64 {
    let free = 1.0 - (v / desired.max(1e-6)).powf(p.exponent);
    let interaction = match lead {
        Some((gap, v_lead)) => {
            let s_star = p.min_gap
                + (v * p.time_headway
                    + v * (v - v_lead) / (2.0 * (p.max_accel * p.comfortable_decel).sqrt()))
                .max(0.0);
            (s_star / gap.max(0.1)).powi(2)
        }
        None => 0.0,
    };
    (p.max_accel * (free - interaction)).clamp(-p.max_brake, p.max_accel)
}

/// Agent pose and world velocity at `t` seconds after the planning instant,
/// interpolating logged frames and extrapolating at constant velocity past the log.
fn agent_at(clip: &Clip, agent: &AgentTrack, t: f64) -> (Pose, f64, f64) {
    let now = clip.history_len;
    let last = agent.states.len() - 1;
    let f = now as f64 + t / clip.dt;
    if f >= last as f64 {
        let s = &agent.states[last];
        let extra = (f - last as f64) * clip.dt;
        let pose = Pose::new(s.pose.x + s.vx * extra, s.pose.y + s.vy * extra, s.pose.psi);
        return (pose, s.vx, s.vy);
    }
    let i = f.floor().max(0.0) as usize;
    let alpha = f - i as f64;
    let (a, b) = (&agent.states[i], &agent.states[i + 1]);
    (
        a.pose.lerp(&b.pose, alpha),
        a.vx + alpha * (b.vx - a.vx),
        a.vy + alpha * (b.vy - a.vy),
    )
}

/// Half extents of a rectangle along and across the lane at its position.
fn lane_extents(lane: &Lane, s: f64, pose: &Pose, length: f64, width: f64) -> (f64, f64) {
    let rel = pose.psi - lane.point_at(s).psi;
    let (sn, cs) = (rel.sin().abs(), rel.cos().abs());
    (
        0.5 * (length * cs + width * sn),
        0.5 * (length * sn + width * cs),
    )
}

/// Nearest conflicting agent ahead: `(bumper gap, speed along the lane)`.
fn leader(clip: &Clip, p: &IdmParams, t: f64, s_ego: f64) -> Option<(f64, f64)> {
    let lane = &clip.lane;
    let half = lane.half_width();
    let mut best: Option<(f64, f64)> = None;
    for agent in &clip.agents {
        let (pose, vx, vy) = agent_at(clip, agent, t);
        let (s_a, _) = lane.project_extended(pose.x, pose.y);
        if s_a <= s_ego {
            continue;
        }
        let steps = (p.lookahead / 0.25).round() as usize;
        let occupies = (0..=steps).any(|k| {
            let (q, _, _) = agent_at(clip, agent, t + k as f64 * 0.25);
            let (s_q, l_q) = lane.project_extended(q.x, q.y);
            let (_, lat) = lane_extents(lane, s_q, &q, agent.length, agent.width);
            l_q.abs() - lat < half
        });
        if !occupies {
            continue;
        }
        let (long, _) = lane_extents(lane, s_a, &pose, agent.length, agent.width);
        let gap = s_a - s_ego - 0.5 * clip.ego_length - long;
        let tangent = lane.point_at(s_a).psi;
        let v_lead = vx * tangent.cos() + vy * tangent.sin();
        if best.is_none_or(|(g, _)| gap < g) {
            best = Some((gap, v_lead));
        }
    }
    best
}

/// IDM rollout along the centerline with ground-truth knowledge of every
/// agent's future, in world frame.
pub fn idm_rollout(clip: &Clip, p: &IdmParams) -> Trajectory {
    let lane = &clip.lane;
    let ego = clip.ego_now();
    let (mut s, l0) = lane.project_extended(ego.pose.x, ego.pose.y);
    let mut v = ego.speed.max(0.0);
    let mut t = 0.0;
    let h = clip.dt / p.substeps.max(1) as f64;
    let mut poses = Vec::with_capacity(clip.future_len);
    for _ in 0..clip.future_len {
        for _ in 0..p.substeps.max(1) {
            let a = idm_accel(p, clip.speed_limit, v, leader(clip, p, t, s));
            let v_next = (v + a * h).max(0.0);
            s += 0.5 * (v + v_next) * h;
            v = v_next;
            t += h;
        }
        let l = l0 * (-t / p.lateral_tau).exp();
        let dl = -l / p.lateral_tau;
        let base = lane.offset_point(s, l);
        poses.push(Pose::new(base.x, base.y, base.psi + dl.atan2(v.max(1.0))));
    }
    Trajectory::new(poses)
}

/// Expert rollout and its centerline progress, m.
pub fn privileged_reference(clip: &Clip) -> Result<(Trajectory, f64)> {
    let traj = idm_rollout(clip, &IdmParams::default());
    let progress = simulate(clip, &traj)?.final_progress().max(0.0);
    Ok((traj, progress))
}
