use std::f64::consts::FRAC_PI_2;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{simulate, AgentState, AgentTrack, Clip, EgoState, Lane, Pose, WorldConfig};
use crate::error::{Error, Result};
use crate::metrics::privileged_reference;

const MAX_ATTEMPTS: usize = 25;
const CAR_LENGTH: f64 = 4.5;
const CAR_WIDTH: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    LeadBrake,
    CutIn,
    StaticObstacle,
    CurveFollow,
    GiveWay,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::LeadBrake,
        ScenarioKind::CutIn,
        ScenarioKind::StaticObstacle,
        ScenarioKind::CurveFollow,
        ScenarioKind::GiveWay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::LeadBrake => "lead_brake",
            ScenarioKind::CutIn => "cut_in",
            ScenarioKind::StaticObstacle => "static_obstacle",
            ScenarioKind::CurveFollow => "curve_follow",
            ScenarioKind::GiveWay => "give_way",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown scenario kind `{name}`")))
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-kind difficulty knobs. Distances in m, speeds in m/s, times in s.
///
/// | knob | valid | sampled |
/// |---|---|---|
/// | ego_speed (all) | [0, 20] | [4, 14] |
/// | lateral_offset (all) | [−0.6, 0.6] | [−0.4, 0.4] |
/// | lead_brake.gap (bumper to bumper) | [3, 200] | [8, 40] |
/// | lead_brake.lead_speed_delta | [−8, 8] | [−3, 2] |
/// | lead_brake.decel (m/s²) | [0, 9] | [1, 6] |
/// | lead_brake.brake_time | [0, 4] | [0, 2.5] |
/// | cut_in.gap | [2, 100] | [4, 25] |
/// | cut_in.speed_delta (slower than ego) | [−5, 10] | [0, 5] |
/// | cut_in.start_time | [0, 4] | [0, 1.5] |
/// | cut_in.duration | [0.5, 5] | [1.5, 3] |
/// | static_obstacle.distance (centre) | [8, 2000] | [15, 80] |
/// | curve_follow.curvature (1/m) | [−0.05, 0.05] | [−0.02, 0.02] |
/// | give_way.distance | [8, 100] | [12, 40] |
/// | give_way.crossing_speed | [0.5, 10] | [2, 6] |
/// | give_way.crossing_time | [−2, 4] | [0, 3] |
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Knobs {
    LeadBrake {
        gap: f64,
        lead_speed_delta: f64,
        decel: f64,
        brake_time: f64,
    },
    CutIn {
        gap: f64,
        speed_delta: f64,
        start_time: f64,
        duration: f64,
    },
    StaticObstacle {
        distance: f64,
    },
    CurveFollow {
        curvature: f64,
    },
    GiveWay {
        distance: f64,
        crossing_speed: f64,
        crossing_time: f64,
    },
}

impl Knobs {
    pub fn kind(&self) -> ScenarioKind {
        match self {
            Knobs::LeadBrake { .. } => ScenarioKind::LeadBrake,
            Knobs::CutIn { .. } => ScenarioKind::CutIn,
            Knobs::StaticObstacle { .. } => ScenarioKind::StaticObstacle,
            Knobs::CurveFollow { .. } => ScenarioKind::CurveFollow,
            Knobs::GiveWay { .. } => ScenarioKind::GiveWay,
        }
    }

    fn sample<R: Rng>(kind: ScenarioKind, rng: &mut R) -> Knobs {
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..=hi);
        match kind {
            ScenarioKind::LeadBrake => Knobs::LeadBrake {
                gap: u(8.0, 40.0),
                lead_speed_delta: u(-3.0, 2.0),
                decel: u(1.0, 6.0),
                brake_time: u(0.0, 2.5),
            },
            ScenarioKind::CutIn => Knobs::CutIn {
                gap: u(4.0, 25.0),
                speed_delta: u(0.0, 5.0),
                start_time: u(0.0, 1.5),
                duration: u(1.5, 3.0),
            },
            ScenarioKind::StaticObstacle => Knobs::StaticObstacle {
                distance: u(15.0, 80.0),
            },
            ScenarioKind::CurveFollow => Knobs::CurveFollow {
                curvature: u(-0.02, 0.02),
            },
            ScenarioKind::GiveWay => Knobs::GiveWay {
                distance: u(12.0, 40.0),
                crossing_speed: u(2.0, 6.0),
                crossing_time: u(0.0, 3.0),
            },
        }
    }

    fn ranges(&self) -> Vec<(&'static str, f64, f64, f64)> {
        match *self {
            Knobs::LeadBrake {
                gap,
                lead_speed_delta,
                decel,
                brake_time,
            } => vec![
                ("gap", gap, 3.0, 200.0),
                ("lead_speed_delta", lead_speed_delta, -8.0, 8.0),
                ("decel", decel, 0.0, 9.0),
                ("brake_time", brake_time, 0.0, 4.0),
            ],
            Knobs::CutIn {
                gap,
                speed_delta,
                start_time,
                duration,
            } => vec![
                ("gap", gap, 2.0, 100.0),
                ("speed_delta", speed_delta, -5.0, 10.0),
                ("start_time", start_time, 0.0, 4.0),
                ("duration", duration, 0.5, 5.0),
            ],
            Knobs::StaticObstacle { distance } => vec![("distance", distance, 8.0, 2000.0)],
            Knobs::CurveFollow { curvature } => vec![("curvature", curvature, -0.05, 0.05)],
            Knobs::GiveWay {
                distance,
                crossing_speed,
                crossing_time,
            } => vec![
                ("distance", distance, 8.0, 100.0),
                ("crossing_speed", crossing_speed, 0.5, 10.0),
                ("crossing_time", crossing_time, -2.0, 4.0),
            ],
        }
    }
}

/// Recipe for one procedural clip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub knobs: Knobs,
    /// Initial ego speed, m/s.
    pub ego_speed: f64,
    /// Ego offset to the left of the centerline, m.
    pub lateral_offset: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Draws every knob from its sampling range.
    pub fn sample(kind: ScenarioKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::draw(kind, seed, &mut rng)
    }

    fn draw<R: Rng>(kind: ScenarioKind, seed: u64, rng: &mut R) -> Self {
        let ego_speed = rng.random_range(4.0..=14.0);
        let lateral_offset = rng.random_range(-0.4..=0.4);
        ScenarioSpec {
            knobs: Knobs::sample(kind, rng),
            ego_speed,
            lateral_offset,
            seed,
        }
    }

    pub fn kind(&self) -> ScenarioKind {
        self.knobs.kind()
    }

    pub fn validate(&self) -> Result<()> {
        let mut all = self.knobs.ranges();
        all.push(("ego_speed", self.ego_speed, 0.0, 20.0));
        all.push(("lateral_offset", self.lateral_offset, -0.6, 0.6));
        for (name, v, lo, hi) in all {
            if !(v.is_finite() && (lo..=hi).contains(&v)) {
                return Err(Error::Config(format!(
                    "{}.{name} = {v} outside [{lo}, {hi}]",
                    self.kind()
                )));
            }
        }
        Ok(())
    }
}

/// Builds a clip for `spec`. If the privileged expert cannot drive the scene
/// without collision or leaving the lane, knobs are redrawn from the spec's
/// seed up to a fixed retry bound.
pub fn generate_scenario(spec: &ScenarioSpec, world: &WorldConfig) -> Result<Clip> {
    spec.validate()?;
    world.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut current = *spec;
    for _ in 0..MAX_ATTEMPTS {
        let mut clip = build_clip(&current, world)?;
        let (expert, _) = privileged_reference(&clip)?;
        let log = simulate(&clip, &expert)?;
        if !log.collided() && !log.off_drivable() {
            clip.expert_future = expert;
            return Ok(clip);
        }
        current = ScenarioSpec::draw(spec.kind(), spec.seed, &mut rng);
    }
    Err(Error::Infeasible {
        kind: spec.kind().to_string(),
        seed: spec.seed,
        attempts: MAX_ATTEMPTS,
    })
}

fn build_lane(world: &WorldConfig, curvature: f64, lateral_offset: f64) -> Result<Lane> {
    let n_behind = (world.lane_behind / world.lane_spacing).round() as i64;
    let n_ahead = (world.lane_ahead / world.lane_spacing).round() as i64;
    let points = (-n_behind..=n_ahead)
        .map(|i| {
            let s = i as f64 * world.lane_spacing;
            let (x, y) = if s <= 0.0 || curvature == 0.0 {
                (s, 0.0)
            } else {
                ((curvature * s).sin() / curvature, (1.0 - (curvature * s).cos()) / curvature)
            };
            [x, y - lateral_offset]
        })
        .collect();
    Lane::new(points, world.lane_half_width)
}

/// Agent moving along the lane at arclength `s` with lateral offset `l`,
/// tangential speed `vs` and lateral rate `vl`.
fn lane_agent(lane: &Lane, s: f64, l: f64, vs: f64, vl: f64) -> AgentState {
    let p = lane.offset_point(s, l);
    let (sn, cs) = p.psi.sin_cos();
    let heading = p.psi + vl.atan2(vs.max(0.1));
    AgentState {
        pose: Pose::new(p.x, p.y, heading),
        vx: vs * cs - vl * sn,
        vy: vs * sn + vl * cs,
    }
}

/// Position and speed after `t` seconds of cruising at `v0` then braking at
/// `decel` from `t_brake` until standstill.
fn brake_profile(v0: f64, decel: f64, t_brake: f64, t: f64) -> (f64, f64) {
    if t <= t_brake || decel <= 0.0 {
        return (v0 * t, v0);
    }
    let s_b = v0 * t_brake;
    let tau = t - t_brake;
    let t_stop = v0 / decel;
    if tau >= t_stop {
        (s_b + 0.5 * v0 * t_stop, 0.0)
    } else {
        (s_b + v0 * tau - 0.5 * decel * tau * tau, v0 - decel * tau)
    }
}

fn build_clip(spec: &ScenarioSpec, world: &WorldConfig) -> Result<Clip> {
    let curvature = match spec.knobs {
        Knobs::CurveFollow { curvature } => curvature,
        _ => 0.0,
    };
    let lane = build_lane(world, curvature, spec.lateral_offset)?;
    let dt = world.dt;
    let frames: Vec<f64> = (-(world.history_len as i64)..=world.future_len as i64)
        .map(|f| f as f64 * dt)
        .collect();
    let v0 = spec.ego_speed;
    let ego_track = frames
        .iter()
        .map(|&t| EgoState {
            pose: Pose::new(v0 * t.min(0.0), 0.0, 0.0),
            speed: v0,
        })
        .collect();
    // Ego centre sits at this arclength at the planning instant.
    let s_ego = world.lane_behind;
    let bumper = 0.5 * (world.ego_length + CAR_LENGTH);

    let track = |id: u32, states: Vec<AgentState>| AgentTrack {
        id,
        length: CAR_LENGTH,
        width: CAR_WIDTH,
        states,
    };

    let agents = match spec.knobs {
        Knobs::LeadBrake {
            gap,
            lead_speed_delta,
            decel,
            brake_time,
        } => {
            let vl = (v0 + lead_speed_delta).max(0.0);
            let s0 = s_ego + gap + bumper;
            let states = frames
                .iter()
                .map(|&t| {
                    let (ds, v) = brake_profile(vl, decel, brake_time, t.max(0.0));
                    let ds = if t < 0.0 { vl * t } else { ds };
                    lane_agent(&lane, s0 + ds, 0.0, v, 0.0)
                })
                .collect();
            vec![track(1, states)]
        }
        Knobs::CutIn {
            gap,
            speed_delta,
            start_time,
            duration,
        } => {
            let vc = (v0 - speed_delta).max(1.0);
            let s0 = s_ego + gap + bumper;
            let l_start = 2.0 * world.lane_half_width;
            let states = frames
                .iter()
                .map(|&t| {
                    let phase = ((t - start_time) / duration).clamp(0.0, 1.0);
                    let l = l_start * 0.5 * (1.0 + (std::f64::consts::PI * phase).cos());
                    let vl = if (0.0..1.0).contains(&phase) && t > start_time {
                        -l_start * 0.5 * std::f64::consts::PI * (std::f64::consts::PI * phase).sin() / duration
                    } else {
                        0.0
                    };
                    lane_agent(&lane, s0 + vc * t, l, vc, vl)
                })
                .collect();
            vec![track(1, states)]
        }
        Knobs::StaticObstacle { distance } => {
            let state = lane_agent(&lane, s_ego + distance, 0.0, 0.0, 0.0);
            let state = AgentState { vx: 0.0, vy: 0.0, ..state };
            vec![track(1, vec![state; frames.len()])]
        }
        Knobs::CurveFollow { .. } => Vec::new(),
        Knobs::GiveWay {
            distance,
            crossing_speed,
            crossing_time,
        } => {
            let centre = lane.point_at(s_ego + distance);
            let (sn, cs) = centre.psi.sin_cos();
            let heading = centre.psi - FRAC_PI_2;
            let states = frames
                .iter()
                .map(|&t| {
                    let l = -crossing_speed * (t - crossing_time);
                    AgentState {
                        pose: Pose::new(centre.x - l * sn, centre.y + l * cs, heading),
                        vx: crossing_speed * sn,
                        vy: -crossing_speed * cs,
                    }
                })
                .collect();
            vec![track(1, states)]
        }
    };

    let future_len = world.future_len;
    Ok(Clip {
        id: format!("{}-{}", spec.kind(), spec.seed),
        dt,
        history_len: world.history_len,
        future_len,
        ego_length: world.ego_length,
        ego_width: world.ego_width,
        ego_track,
        agents,
        lane,
        speed_limit: world.speed_limit,
        expert_future: super::Trajectory::new(vec![Pose::new(0.0, 0.0, 0.0); future_len]),
        scenario_tag: spec.kind(),
    })
}
