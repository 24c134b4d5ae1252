//! Loop-based re-statement of the pipeline blocks plus shared rollout checks.
#![allow(dead_code)]

use super::reference::{attention, linear, mlp, Banks};
use drope_core::attention::{EncodingVariant, Pose};
use drope_core::pipeline::{
    replay, rollout, scene_min_ade, synthetic_scene, AttentionBlock, ModelConfig, Policy,
    RoadShape, Scene, SceneTokens, SyntheticConfig, TrajectoryModel,
};

fn rows(x: &[f64], d: usize) -> Vec<Vec<f64>> {
    x.chunks(d).map(<[f64]>::to_vec).collect()
}

#[allow(clippy::too_many_arguments)]
pub fn block(
    b: &AttentionBlock,
    cfg: &ModelConfig,
    variant: EncodingVariant,
    causal: bool,
    x: &[f64],
    xp: &[Pose],
    ctx: &[f64],
    cp: &[Pose],
) -> Vec<f64> {
    let d = cfg.d_model;
    let (xr, cr) = (rows(x, d), rows(ctx, d));
    let q: Vec<f64> = xr.iter().flat_map(|r| linear(&b.wq, r)).collect();
    let k: Vec<f64> = cr.iter().flat_map(|r| linear(&b.wk, r)).collect();
    let v: Vec<f64> = cr.iter().flat_map(|r| linear(&b.wv, r)).collect();
    let banks = Banks {
        q: &q,
        k: &k,
        v: &v,
        queries: xr.len(),
        keys: cr.len(),
        heads: cfg.heads,
        pairs: cfg.pairs,
        value_dim: cfg.value_dim,
    };
    let attn = attention(variant, &banks, xp, cp, b.rpe.as_ref(), causal).values;
    let merged = cfg.heads * cfg.value_dim;
    let mut out = Vec::new();
    for (i, xi) in xr.iter().enumerate() {
        let o = linear(&b.wo, &attn[i * merged..(i + 1) * merged]);
        let y: Vec<f64> = xi.iter().zip(&o).map(|(a, b)| a + b).collect();
        let f = mlp(&b.ffn, &y);
        out.extend(y.iter().zip(&f).map(|(a, b)| a + b));
    }
    out
}

pub fn interaction(model: &TrajectoryModel, t: &SceneTokens) -> (Vec<f64>, Vec<f64>) {
    let cfg = &model.config;
    let variant = EncodingVariant::from_kind(cfg.variant, cfg.pairs);
    let row = t.agents * cfg.d_model;
    let mut agents = t.agent.clone();
    let mut map = t.map.clone();
    for b in &model.blocks {
        for s in 0..t.steps {
            let x = agents[s * row..(s + 1) * row].to_vec();
            let p = &t.agent_poses[s].0;
            let y = block(&b.agent_self, cfg, variant, false, &x, p, &x, p);
            agents[s * row..(s + 1) * row].copy_from_slice(&y);
        }
        let mp = &t.map_poses.0;
        map = block(&b.map_self, cfg, variant, false, &map, mp, &map, mp);
        for s in 0..t.steps {
            let x = agents[s * row..(s + 1) * row].to_vec();
            let p = &t.agent_poses[s].0;
            let y = block(&b.agent_map, cfg, variant, false, &x, p, &map, mp);
            agents[s * row..(s + 1) * row].copy_from_slice(&y);
        }
    }
    (agents, map)
}

pub fn temporal(model: &TrajectoryModel, agents: &[f64], steps: usize, count: usize) -> Vec<f64> {
    let cfg = &model.config;
    let d = cfg.d_model;
    let still = vec![Pose::default(); steps];
    let mut out = vec![0.0; agents.len()];
    for a in 0..count {
        let mut seq = Vec::new();
        for t in 0..steps {
            for c in 0..d {
                let i = (c / 2) as f64;
                let angle = t as f64 / 10_000f64.powf(2.0 * i / d as f64);
                let pe = if c % 2 == 0 { angle.sin() } else { angle.cos() };
                seq.push(agents[(t * count + a) * d + c] + pe);
            }
        }
        let y = block(
            &model.temporal,
            cfg,
            EncodingVariant::Plain,
            true,
            &seq,
            &still,
            &seq,
            &still,
        );
        for t in 0..steps {
            out[(t * count + a) * d..][..d].copy_from_slice(&y[t * d..(t + 1) * d]);
        }
    }
    out
}

pub fn default_model(seed: u64) -> TrajectoryModel {
    TrajectoryModel::random(ModelConfig::default(), seed).unwrap()
}

pub fn arc_scene(seed: u64) -> Scene {
    synthetic_scene(&SyntheticConfig {
        agents: 4,
        road: RoadShape::Arc { curvature: 0.01 },
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

/// Largest coordinate change of a 16-step greedy rollout when the whole scene
/// is translated by `(dx, dy)`, measured back in the original frame.
pub fn translation_gap(model: &TrajectoryModel, scene: &Scene, dx: f64, dy: f64) -> f64 {
    let a = rollout(model, scene, &Policy::Greedy, 16).unwrap();
    let b = rollout(model, &scene.translated(dx, dy), &Policy::Greedy, 16).unwrap();
    let mut worst: f64 = 0.0;
    for (sa, sb) in a.states.iter().flatten().zip(b.states.iter().flatten()) {
        worst = worst
            .max((sa.x - (sb.x - dx)).abs())
            .max((sa.y - (sb.y - dy)).abs());
    }
    worst
}

/// Whether a greedy rollout replays exactly, and the constant-velocity
/// oracle's scene minADE.
pub fn replay_and_oracle(model: &TrajectoryModel, scene: &Scene) -> (bool, f64) {
    let r = rollout(model, scene, &Policy::Greedy, 16).unwrap();
    let replayed = replay(&r.start, &r.actions, r.dt).unwrap();
    let cv = rollout(model, scene, &Policy::ConstantVelocity, 16).unwrap();
    (replayed == r.states, scene_min_ade(&[cv], scene).unwrap())
}
