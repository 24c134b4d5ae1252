mod common;

use common::pipeline_ref::{
    arc_scene, default_model, interaction, replay_and_oracle, temporal, translation_gap,
};
use common::reference::max_abs_diff;
use drope_core::attention::{EncodingVariant, Engine, Pose, PoseSet, QkvSet, VariantKind};
use drope_core::pipeline::{
    rollout, synthetic_scene, tokenize_scene, ModelConfig, Policy, RoadShape, SyntheticConfig,
    TrajectoryModel,
};
use drope_core::rng::{seeded, uniform_vec};

#[test]
fn interaction_matches_reference_on_small_scene() {
    for variant in VariantKind::ALL {
        let model = TrajectoryModel::random(
            ModelConfig {
                variant,
                ..ModelConfig::default()
            },
            21,
        )
        .unwrap();
        let mut scene = synthetic_scene(&SyntheticConfig {
            agents: 3,
            seed: 4,
            ..SyntheticConfig::default()
        })
        .unwrap();
        scene.map.truncate(2);
        let tokens = tokenize_scene(&scene, &model.encoder).unwrap();
        let (agents, map) = model.interaction_step(&tokens).unwrap();
        let (ra, rm) = interaction(&model, &tokens);
        let scale = ra.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        assert!(max_abs_diff(&agents, &ra) / scale < 1e-10, "{variant}");
        assert!(max_abs_diff(&map, &rm) / scale < 1e-10, "{variant}");
    }
}

#[test]
fn temporal_matches_masked_reference() {
    let model = default_model(22);
    let x = uniform_vec(&mut seeded(3), 4 * 2 * 64, 1.0);
    let got = model.temporal_step(&x, 4, 2).unwrap();
    let want = temporal(&model, &x, 4, 2);
    assert!(max_abs_diff(&got, &want) < 1e-12);
}

#[test]
fn greedy_rollout_is_translation_invariant() {
    let model = default_model(23);
    for seed in 0..3 {
        let scene = arc_scene(seed);
        assert!(translation_gap(&model, &scene, 5.3, -2.1) < 1e-6);
        assert!(translation_gap(&model, &scene, 1250.0, -730.0) < 1e-6);
    }
}

#[test]
fn rollout_replays_and_oracle_is_exact() {
    let model = default_model(24);
    for road in [RoadShape::Straight, RoadShape::Arc { curvature: -0.015 }] {
        let scene = synthetic_scene(&SyntheticConfig {
            road,
            seed: 9,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let (replays, ade) = replay_and_oracle(&model, &scene);
        assert!(replays);
        assert!(ade < 1e-9, "{ade:e}");
    }
}

#[test]
fn speed_never_negative_under_hard_braking() {
    let model = default_model(25);
    let scene = arc_scene(1);
    let r = rollout(&model, &scene, &Policy::ForcedBin(0), 16).unwrap();
    assert!(r.states.iter().flatten().all(|s| s.v >= 0.0));
    let s = rollout(&model, &scene, &Policy::Sample { seed: 8 }, 16).unwrap();
    assert!(s.states.iter().flatten().all(|s| s.v >= 0.0));
}

/// Rotating the scene about the origin shifts every heading by the same
/// angle: heading-head weights stay put, position heads are free to change.
#[test]
fn rigid_rotation_keeps_angle_head_weights() {
    let mut rng = seeded(10);
    let qkv = QkvSet::random(5, 2, 4, 3, &mut rng).unwrap();
    let poses = PoseSet::random(5, 40.0, &mut rng);
    let phi: f64 = 0.9;
    let (s, c) = phi.sin_cos();
    let rotated = PoseSet::new(
        poses
            .0
            .iter()
            .map(|p| {
                Pose::new(
                    c * p.x - s * p.y,
                    s * p.x + c * p.y,
                    p.heading.radians() + phi,
                )
                .unwrap()
            })
            .collect(),
    );
    let engine = Engine::new(EncodingVariant::DropeHeadByHead).keep_weights();
    let a = engine.self_attention(&qkv, &poses).unwrap();
    let b = engine.self_attention(&qkv, &rotated).unwrap();
    let (wa, wb) = (a.weights.unwrap(), b.weights.unwrap());
    let mut moved_position_head = false;
    for i in 0..5 {
        let odd = |w: &[f64]| w[(i * 2 + 1) * 5..][..5].to_vec();
        let even = |w: &[f64]| w[(i * 2) * 5..][..5].to_vec();
        assert!(max_abs_diff(&odd(&wa), &odd(&wb)) < 1e-8);
        moved_position_head |= max_abs_diff(&even(&wa), &even(&wb)) > 1e-6;
    }
    assert!(moved_position_head);
}
