//! JSON scene files. See `schemas/scene.schema.json`.

use std::path::Path;

use anyhow::{Context, Result};
use drope_core::pipeline::{
    segment_polyline, AgentState, AgentTrack, MapSegment, Scene, DEFAULT_DT, MAX_SEGMENT_LENGTH,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateRecord {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentRecord {
    pub id: u64,
    pub length: f64,
    pub width: f64,
    /// Observed history followed by any ground-truth future.
    pub states: Vec<StateRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolylineRecord {
    /// One point is a stop sign.
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub scene_id: String,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Number of observed steps at the start of every track.
    pub history: usize,
    pub agents: Vec<AgentRecord>,
    #[serde(default)]
    pub map: Vec<PolylineRecord>,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

impl SceneFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading scene {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing scene {}", path.display()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    /// Polylines are cut into segments of at most 25 m.
    pub fn to_scene(&self) -> Result<Scene> {
        let agents = self
            .agents
            .iter()
            .map(|a| {
                let states = a
                    .states
                    .iter()
                    .map(|s| AgentState::new(s.x, s.y, s.yaw, s.v))
                    .collect::<drope_core::Result<_>>()?;
                Ok(AgentTrack {
                    length: a.length,
                    width: a.width,
                    states,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut map = Vec::new();
        for line in &self.map {
            map.extend(segment_polyline(&line.points, MAX_SEGMENT_LENGTH)?);
        }
        let scene = Scene {
            agents,
            map,
            dt: self.dt,
            history: self.history,
        };
        scene.validate()?;
        Ok(scene)
    }

    /// Map segments are written back as individual polylines.
    pub fn from_scene(scene_id: impl Into<String>, scene: &Scene) -> Self {
        Self {
            scene_id: scene_id.into(),
            dt: scene.dt,
            history: scene.history,
            agents: scene
                .agents
                .iter()
                .enumerate()
                .map(|(i, a)| AgentRecord {
                    id: i as u64,
                    length: a.length,
                    width: a.width,
                    states: a
                        .states
                        .iter()
                        .map(|s| StateRecord {
                            x: s.x,
                            y: s.y,
                            yaw: s.yaw.radians(),
                            v: s.v,
                        })
                        .collect(),
                })
                .collect(),
            map: scene
                .map
                .iter()
                .map(|m: &MapSegment| PolylineRecord {
                    points: m.points.clone(),
                })
                .collect(),
        }
    }

    pub fn agent_ids(&self) -> Vec<u64> {
        self.agents.iter().map(|a| a.id).collect()
    }
}
