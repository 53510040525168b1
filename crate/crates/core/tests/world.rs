mod support;

use proptest::prelude::*;
use r2se_core::metrics::privileged_reference;
use r2se_core::policy::{build_vocabulary, clip_seed};
use r2se_core::world::{
    generate_scenario, obb_overlap, rect_distance, simulate, simulate_with, OrientedRect, Pose, ScenarioKind,
    ScenarioSpec, SimOptions, WorldConfig,
};
use support::*;

fn to_obb(r: &Rect) -> OrientedRect {
    OrientedRect::from_pose(&Pose::new(r.cx, r.cy, r.heading), r.length, r.width)
}

#[test]
fn obb_overlap_agrees_with_rasterization() {
    let mut r = rng(42);
    let mut disagreements = 0;
    let trials = 400;
    for _ in 0..trials {
        let (a, b) = (Rect::random(&mut r), Rect::random(&mut r));
        let sat = obb_overlap(&to_obb(&a), &to_obb(&b));
        let raster = raster_overlap(&a, &b, 0.02);
        if raster {
            // A shared grid point is a witness of overlap.
            assert!(sat, "{a:?} {b:?}");
        } else if sat {
            // Only slivers thinner than the grid may be missed.
            let d = sampled_distance(&a, &b, 200);
            assert!(d < 0.1, "SAT overlap without raster witness: {a:?} {b:?}");
            disagreements += 1;
        }
    }
    assert!(disagreements < trials / 20);
}

#[test]
fn rect_distance_matches_sampled_boundaries() {
    let mut r = rng(7);
    for _ in 0..200 {
        let (mut a, b) = (Rect::random(&mut r), Rect::random(&mut r));
        a.cx += 14.0;
        let d = rect_distance(&to_obb(&a), &to_obb(&b));
        let sampled = sampled_distance(&a, &b, 400);
        assert!(d <= sampled + 1e-9, "{d} > {sampled}");
        assert!(sampled - d < 0.03, "{d} vs {sampled}");
    }
}

fn clips(kind: ScenarioKind, n: u64) -> Vec<r2se_core::world::Clip> {
    let world = WorldConfig::default();
    (0..n)
        .map(|i| generate_scenario(&ScenarioSpec::sample(kind, clip_seed(5, &format!("{kind}-{i}"))), &world).unwrap())
        .collect()
}

#[test]
fn generated_clips_validate_and_expert_is_clean() {
    for kind in ScenarioKind::ALL {
        for clip in clips(kind, 10) {
            clip.validate().unwrap();
            assert_eq!(clip.scenario_tag, kind);
            let log = simulate(&clip, &clip.expert_future).unwrap();
            assert!(!log.collided() && !log.off_drivable(), "{} expert fails", clip.id);
            let (_, progress) = privileged_reference(&clip).unwrap();
            assert!(progress > 0.0);
        }
    }
}

#[test]
fn generation_is_deterministic() {
    let a = clips(ScenarioKind::CutIn, 5);
    let b = clips(ScenarioKind::CutIn, 5);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn simulator_collisions_agree_with_dense_substeps() {
    let mut all = Vec::new();
    for kind in ScenarioKind::ALL {
        all.extend(clips(kind, 6));
    }
    let vocab = build_vocabulary(&all, 16, 1).unwrap();
    let mut checked = 0;
    let mut agree = 0;
    for clip in &all {
        for m in 0..vocab.len() {
            let cand = vocab.candidate(clip, m);
            let log = simulate_with(clip, &cand, SimOptions { collision_substeps: 4 }).unwrap();
            let dense = dense_collision(clip, &log.ego_poses, 64);
            if let Some(t) = log.collision_frame {
                // Coarse substeps are a subset of the dense ones.
                let d = dense.expect("dense check must also collide");
                assert!(d <= t);
            }
            checked += 1;
            agree += usize::from(log.collision_frame.is_some() == dense.is_some());
        }
    }
    assert!(agree as f64 / checked as f64 > 0.97, "{agree}/{checked}");
}

#[test]
fn simulator_speed_is_displacement_over_dt() {
    let clip = &clips(ScenarioKind::LeadBrake, 1)[0];
    let log = simulate(clip, &clip.expert_future).unwrap();
    for t in 1..log.ego_poses.len() {
        let (a, b) = (&log.ego_poses[t - 1], &log.ego_poses[t]);
        let d = (b.x - a.x).hypot(b.y - a.y) / clip.dt;
        assert!((log.speed[t].abs() - d).abs() < 1e-12);
        assert!((log.accel[t] - (log.speed[t] - log.speed[t - 1]) / clip.dt).abs() < 1e-12);
    }
}

#[test]
fn wrong_candidate_length_is_input_error() {
    let clip = &clips(ScenarioKind::GiveWay, 1)[0];
    let mut short = clip.expert_future.clone();
    short.poses.pop();
    assert!(matches!(simulate(clip, &short), Err(r2se_core::Error::Input(_))));
}

proptest! {
    #[test]
    fn overlap_is_symmetric(s in 0u64..10_000) {
        let mut r = rng(s);
        let (a, b) = (to_obb(&Rect::random(&mut r)), to_obb(&Rect::random(&mut r)));
        prop_assert_eq!(obb_overlap(&a, &b), obb_overlap(&b, &a));
        prop_assert!((rect_distance(&a, &b) - rect_distance(&b, &a)).abs() < 1e-12);
        prop_assert!(obb_overlap(&a, &a));
    }

    #[test]
    fn sampled_specs_validate(kind in 0usize..5, seed in any::<u64>()) {
        ScenarioSpec::sample(ScenarioKind::ALL[kind], seed).validate().unwrap();
    }
}
