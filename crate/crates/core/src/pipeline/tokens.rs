use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use super::scene::{point_at_arc_length, polyline_length, AgentTrack, MapSegment, Scene};
use crate::attention::{Pose, PoseSet};
use crate::error::{config, invalid, Result};
use crate::nn::Mlp;

/// `[v, dv, dyaw, length, width]`.
pub const AGENT_FEATURES: usize = 5;
/// Points per resampled map segment.
pub const MAP_POINTS: usize = 8;

/// Per-token feature encoders. Neither sees absolute poses.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEncoder {
    pub d_model: usize,
    pub agent: Mlp,
    /// Applied to each local-frame point, then max-pooled.
    pub map_point: Mlp,
}

impl TokenEncoder {
    pub fn random<R: Rng + ?Sized>(d_model: usize, rng: &mut R) -> Result<Self> {
        if d_model == 0 || !d_model.is_multiple_of(2) {
            return Err(config("d_model must be positive and even"));
        }
        Ok(Self {
            d_model,
            agent: Mlp::random(AGENT_FEATURES, d_model, d_model, rng),
            map_point: Mlp::random(2, d_model, d_model, rng),
        })
    }
}

/// Tokens of a window of `steps` timesteps, agent rows laid out as
/// `(t * agents + a) * d_model`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTokens {
    pub steps: usize,
    pub agents: usize,
    pub segments: usize,
    pub d_model: usize,
    pub agent: Vec<f64>,
    pub map: Vec<f64>,
    pub agent_poses: Vec<PoseSet>,
    pub map_poses: PoseSet,
}

impl SceneTokens {
    pub fn agent_rows(&self, t: usize) -> &[f64] {
        let w = self.agents * self.d_model;
        &self.agent[t * w..(t + 1) * w]
    }
}

/// Features of `track` at step `t`; differences use step `t - 1` when present.
pub fn agent_features(track: &AgentTrack, t: usize) -> [f64; AGENT_FEATURES] {
    let s = track.states[t];
    let (dv, dyaw) = match t.checked_sub(1).map(|p| track.states[p]) {
        Some(prev) => (s.v - prev.v, (s.yaw - prev.yaw).signed()),
        None => (0.0, 0.0),
    };
    [s.v, dv, dyaw, track.length, track.width]
}

/// `count` points evenly spaced in arc length along `shape`.
pub fn resample(shape: &[[f64; 2]], count: usize) -> Vec<[f64; 2]> {
    let total = polyline_length(shape);
    (0..count)
        .map(|i| {
            let s = if count == 1 {
                total / 2.0
            } else {
                total * i as f64 / (count - 1) as f64
            };
            point_at_arc_length(shape, s).0
        })
        .collect()
}

pub fn encode_map(map: &[MapSegment], encoder: &TokenEncoder) -> (Vec<f64>, PoseSet) {
    let d = encoder.d_model;
    let mut tokens = vec![f64::NEG_INFINITY; map.len() * d];
    let mut scratch = vec![0.0; encoder.map_point.hidden_dim()];
    let mut point = vec![0.0; d];
    for (seg, row) in map.iter().zip(tokens.chunks_exact_mut(d)) {
        for p in resample(&seg.local_shape, MAP_POINTS) {
            encoder.map_point.forward_into(&p, &mut scratch, &mut point);
            for (r, x) in row.iter_mut().zip(&point) {
                *r = r.max(*x);
            }
        }
    }
    (tokens, PoseSet::new(map.iter().map(|m| m.anchor).collect()))
}

/// Agent tokens for steps `start..end` of every track.
pub fn encode_agents(
    agents: &[AgentTrack],
    start: usize,
    end: usize,
    encoder: &TokenEncoder,
) -> Result<(Vec<f64>, Vec<PoseSet>)> {
    if agents.is_empty() {
        return Err(invalid("scene has no agents"));
    }
    if start >= end || agents.iter().any(|a| a.states.len() < end) {
        return Err(invalid("token window outside the agent tracks"));
    }
    let d = encoder.d_model;
    let mut tokens = vec![0.0; (end - start) * agents.len() * d];
    let mut scratch = vec![0.0; encoder.agent.hidden_dim()];
    let mut poses = Vec::with_capacity(end - start);
    let mut rows = tokens.chunks_exact_mut(d);
    for t in start..end {
        let mut at_t = Vec::with_capacity(agents.len());
        for a in agents {
            let row = rows.next().expect("row count matches window");
            encoder
                .agent
                .forward_into(&agent_features(a, t), &mut scratch, row);
            let s = a.states[t];
            at_t.push(Pose {
                x: s.x,
                y: s.y,
                heading: s.yaw,
            });
        }
        poses.push(PoseSet::new(at_t));
    }
    Ok((tokens, poses))
}

/// Tokens of the observed prefix with the stripped poses alongside.
pub fn tokenize_scene(scene: &Scene, encoder: &TokenEncoder) -> Result<SceneTokens> {
    scene.validate()?;
    let (agent, agent_poses) = encode_agents(&scene.agents, 0, scene.history, encoder)?;
    let (map, map_poses) = encode_map(&scene.map, encoder);
    Ok(SceneTokens {
        steps: scene.history,
        agents: scene.agents.len(),
        segments: scene.map.len(),
        d_model: encoder.d_model,
        agent,
        map,
        agent_poses,
        map_poses,
    })
}
