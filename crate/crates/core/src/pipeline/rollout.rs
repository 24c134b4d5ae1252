use alloc::vec::Vec;
use rand::Rng;

use super::kinematics::{kinematic_step, AgentState, ControlAction};
use super::model::TrajectoryModel;
use super::scene::{AgentTrack, Scene};
use super::tokens::{encode_agents, encode_map, SceneTokens};
use crate::attention::softmax_rows;
use crate::error::{ensure_len, invalid, Error, Result};
use crate::rng::seeded;

/// Horizons longer than this many seconds are allowed but unusual.
pub const SOFT_HORIZON_SECONDS: f64 = 8.0;

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    /// Most likely bin.
    Greedy,
    /// Draw from the decoded distribution with a seeded generator.
    Sample { seed: u64 },
    /// Every agent takes this grid bin every step.
    ForcedBin(usize),
    /// Hold each agent's last observed acceleration and yaw rate.
    ConstantVelocity,
}

impl Policy {
    fn needs_model(&self) -> bool {
        matches!(self, Policy::Greedy | Policy::Sample { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Last observed state per agent.
    pub start: Vec<AgentState>,
    /// `states[a][k]` is agent `a` after `k + 1` steps.
    pub states: Vec<Vec<AgentState>>,
    pub actions: Vec<Vec<ControlAction>>,
    pub dt: f64,
}

impl Rollout {
    pub fn horizon(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn positions(&self, agent: usize) -> Vec<[f64; 2]> {
        self.states[agent]
            .iter()
            .map(AgentState::position)
            .collect()
    }
}

pub fn exceeds_soft_horizon(horizon: usize, dt: f64) -> bool {
    horizon as f64 * dt > SOFT_HORIZON_SECONDS + 1e-12
}

fn last_rates(track: &AgentTrack, dt: f64) -> ControlAction {
    let n = track.states.len();
    if n < 2 {
        return ControlAction::default();
    }
    let (prev, cur) = (track.states[n - 2], track.states[n - 1]);
    ControlAction::new((cur.v - prev.v) / dt, (cur.yaw - prev.yaw).signed() / dt)
}

/// Inverse-CDF draw from one probability row.
fn sample_row<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Autoregressive closed-loop rollout from the scene's observed prefix. The
/// model sees a window of the last `scene.history` states of every agent.
pub fn rollout(
    model: &TrajectoryModel,
    scene: &Scene,
    policy: &Policy,
    horizon: usize,
) -> Result<Rollout> {
    scene.validate()?;
    let grid = model.config.grid;
    if let Policy::ForcedBin(i) = policy {
        grid.action(*i)?;
    }
    let window = scene.history;
    let mut tracks: Vec<AgentTrack> = scene
        .agents
        .iter()
        .map(|a| AgentTrack {
            states: a.states[..window].to_vec(),
            ..a.clone()
        })
        .collect();
    let held: Vec<ControlAction> = tracks.iter().map(|t| last_rates(t, scene.dt)).collect();
    let (map, map_poses) = encode_map(&scene.map, &model.encoder);
    let mut rng = match policy {
        Policy::Sample { seed } => Some(seeded(*seed)),
        _ => None,
    };

    let n = tracks.len();
    let mut states = alloc::vec![Vec::with_capacity(horizon); n];
    let mut actions = alloc::vec![Vec::with_capacity(horizon); n];
    for _ in 0..horizon {
        let len = tracks[0].states.len();
        let chosen: Vec<ControlAction> = if policy.needs_model() {
            let (agent, agent_poses) = encode_agents(&tracks, len - window, len, &model.encoder)?;
            let tokens = SceneTokens {
                steps: window,
                agents: n,
                segments: scene.map.len(),
                d_model: model.config.d_model,
                agent,
                map: map.clone(),
                agent_poses,
                map_poses: map_poses.clone(),
            };
            let dist = model.forward(&tokens)?;
            match rng.as_mut() {
                None => (0..n)
                    .map(|a| grid.action(dist.argmax(a)))
                    .collect::<Result<_>>()?,
                Some(r) => {
                    let mut p = dist.logits.clone();
                    softmax_rows(&mut p, dist.classes);
                    p.chunks(dist.classes)
                        .map(|row| grid.action(sample_row(row, r)))
                        .collect::<Result<_>>()?
                }
            }
        } else if let Policy::ForcedBin(i) = policy {
            alloc::vec![grid.action(*i)?; n]
        } else {
            held.clone()
        };
        for (a, u) in chosen.into_iter().enumerate() {
            let last = *tracks[a].states.last().expect("tracks are non-empty");
            let next = kinematic_step(&last, &u, scene.dt)?;
            tracks[a].states.push(next);
            states[a].push(next);
            actions[a].push(u);
        }
    }
    Ok(Rollout {
        start: scene.agents.iter().map(|a| a.states[window - 1]).collect(),
        states,
        actions,
        dt: scene.dt,
    })
}

/// Re-applies recorded actions from the start states.
pub fn replay(
    start: &[AgentState],
    actions: &[Vec<ControlAction>],
    dt: f64,
) -> Result<Vec<Vec<AgentState>>> {
    ensure_len("replay agents", start.len(), actions.len())?;
    start
        .iter()
        .zip(actions)
        .map(|(s0, us)| {
            let mut s = *s0;
            us.iter()
                .map(|u| {
                    s = kinematic_step(&s, u, dt)?;
                    Ok(s)
                })
                .collect()
        })
        .collect()
}

/// Mean displacement of the best of `samples` against `truth`.
pub fn min_ade(samples: &[Vec<[f64; 2]>], truth: &[[f64; 2]]) -> Result<f64> {
    if samples.is_empty() || truth.is_empty() {
        return Err(invalid("minADE needs at least one sample and one step"));
    }
    let mut best = f64::INFINITY;
    for s in samples {
        ensure_len("trajectory horizon", truth.len(), s.len())?;
        let total: f64 = s
            .iter()
            .zip(truth)
            .map(|(p, g)| libm::hypot(p[0] - g[0], p[1] - g[1]))
            .sum();
        best = best.min(total / truth.len() as f64);
    }
    Ok(best)
}

/// Per-agent minADE over rollouts against the scene's recorded future,
/// averaged over agents.
pub fn scene_min_ade(rollouts: &[Rollout], scene: &Scene) -> Result<f64> {
    let first = rollouts.first().ok_or_else(|| invalid("no rollouts"))?;
    let horizon = first.horizon();
    if scene.future() < horizon {
        return Err(Error::Dimension {
            what: "ground-truth horizon",
            expected: horizon,
            found: scene.future(),
        });
    }
    let agents = scene.agents.len();
    let mut sum = 0.0;
    for a in 0..agents {
        let samples: Vec<Vec<[f64; 2]>> = rollouts
            .iter()
            .map(|r| {
                ensure_len("rollout agents", agents, r.states.len())?;
                Ok(r.positions(a))
            })
            .collect::<Result<_>>()?;
        sum += min_ade(&samples, &scene.future_positions(a, horizon))?;
    }
    Ok(sum / agents as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::model::ModelConfig;
    use crate::pipeline::scene::{synthetic_scene, RoadShape, SyntheticConfig};
    use alloc::vec;

    fn small_model() -> TrajectoryModel {
        TrajectoryModel::random(
            ModelConfig {
                d_model: 16,
                heads: 2,
                pairs: 2,
                value_dim: 4,
                ffn_hidden: 8,
                ..ModelConfig::default()
            },
            11,
        )
        .unwrap()
    }

    #[test]
    fn min_ade_examples() {
        let truth = vec![[0.0, 0.0], [1.0, 1.0], [2.0, 0.5]];
        assert_eq!(min_ade(core::slice::from_ref(&truth), &truth).unwrap(), 0.0);
        let off: Vec<[f64; 2]> = truth.iter().map(|p| [p[0] + 3.0, p[1] + 4.0]).collect();
        assert!((min_ade(core::slice::from_ref(&off), &truth).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(min_ade(&[off, truth.clone()], &truth).unwrap(), 0.0);
        assert!(matches!(
            min_ade(&[vec![[0.0, 0.0]]], &truth),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn zero_bin_goes_straight_at_constant_speed() {
        let model = small_model();
        let scene = synthetic_scene(&SyntheticConfig::default()).unwrap();
        let r = rollout(
            &model,
            &scene,
            &Policy::ForcedBin(model.config.grid.zero_index()),
            6,
        )
        .unwrap();
        for (a, s0) in r.start.iter().enumerate() {
            for s in &r.states[a] {
                assert_eq!((s.v, s.yaw), (s0.v, s0.yaw));
            }
        }
    }

    #[test]
    fn greedy_is_deterministic_and_replays_exactly() {
        let model = small_model();
        let scene = synthetic_scene(&SyntheticConfig {
            agents: 3,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let a = rollout(&model, &scene, &Policy::Greedy, 5).unwrap();
        let b = rollout(&model, &scene, &Policy::Greedy, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(replay(&a.start, &a.actions, a.dt).unwrap(), a.states);
        let s = rollout(&model, &scene, &Policy::Sample { seed: 3 }, 5).unwrap();
        assert_eq!(
            s,
            rollout(&model, &scene, &Policy::Sample { seed: 3 }, 5).unwrap()
        );
    }

    #[test]
    fn constant_velocity_oracle_has_zero_min_ade() {
        let model = small_model();
        for road in [RoadShape::Straight, RoadShape::Arc { curvature: 0.02 }] {
            let scene = synthetic_scene(&SyntheticConfig {
                road,
                ..SyntheticConfig::default()
            })
            .unwrap();
            let r = rollout(&model, &scene, &Policy::ConstantVelocity, 16).unwrap();
            assert!(scene_min_ade(&[r], &scene).unwrap() < 1e-9);
        }
    }

    #[test]
    fn horizon_longer_than_future_is_dimension_error() {
        let model = small_model();
        let scene = synthetic_scene(&SyntheticConfig {
            future: 2,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let r = rollout(&model, &scene, &Policy::ConstantVelocity, 3).unwrap();
        assert!(matches!(
            scene_min_ade(&[r], &scene),
            Err(Error::Dimension { .. })
        ));
        assert!(exceeds_soft_horizon(17, 0.5));
        assert!(!exceeds_soft_horizon(16, 0.5));
    }
}
