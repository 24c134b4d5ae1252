use alloc::vec::Vec;
use rand::Rng;

use super::kinematics::{kinematic_step, AgentState, ControlAction};
use crate::attention::Pose;
use crate::error::{config, ensure_finite, invalid, Result};
use crate::rng::seeded;

pub const DEFAULT_DT: f64 = 0.5;
pub const MAX_SEGMENT_LENGTH: f64 = 25.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub length: f64,
    pub width: f64,
    pub states: Vec<AgentState>,
}

impl AgentTrack {
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            states: self.states.iter().map(|s| s.translated(dx, dy)).collect(),
            ..self.clone()
        }
    }
}

/// A polyline piece with its own frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MapSegment {
    pub points: Vec<[f64; 2]>,
    /// Arc-length midpoint, heading toward the next vertex.
    pub anchor: Pose,
    /// `points` expressed in the anchor frame.
    pub local_shape: Vec<[f64; 2]>,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    libm::hypot(b[0] - a[0], b[1] - a[1])
}

fn lerp(a: [f64; 2], b: [f64; 2], t: f64) -> [f64; 2] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t]
}

pub fn polyline_length(points: &[[f64; 2]]) -> f64 {
    points.windows(2).map(|w| dist(w[0], w[1])).sum()
}

/// Point at arc length `s` and the direction of the edge it lies on.
/// Zero-length edges are skipped; a polyline without length has heading 0.
pub fn point_at_arc_length(points: &[[f64; 2]], s: f64) -> ([f64; 2], f64) {
    let mut walked = 0.0;
    let mut last = None;
    for w in points.windows(2) {
        let len = dist(w[0], w[1]);
        if len == 0.0 {
            continue;
        }
        let heading = libm::atan2(w[1][1] - w[0][1], w[1][0] - w[0][0]);
        if walked + len >= s {
            return (lerp(w[0], w[1], (s - walked) / len), heading);
        }
        walked += len;
        last = Some((w[1], heading));
    }
    last.unwrap_or((points[0], 0.0))
}

impl MapSegment {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("map segment needs at least one point"));
        }
        for p in &points {
            ensure_finite("map point", p)?;
        }
        let (mid, heading) = point_at_arc_length(&points, polyline_length(&points) / 2.0);
        let anchor = Pose::new(mid[0], mid[1], heading)?;
        let (c, s) = (libm::cos(heading), libm::sin(heading));
        let local_shape = points
            .iter()
            .map(|p| {
                let (dx, dy) = (p[0] - mid[0], p[1] - mid[1]);
                [c * dx + s * dy, -s * dx + c * dy]
            })
            .collect();
        Ok(Self {
            points,
            anchor,
            local_shape,
        })
    }

    pub fn stop_sign(x: f64, y: f64) -> Result<Self> {
        Self::new(alloc::vec![[x, y]])
    }

    pub fn length(&self) -> f64 {
        polyline_length(&self.points)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            points: self.points.iter().map(|p| [p[0] + dx, p[1] + dy]).collect(),
            anchor: Pose {
                x: self.anchor.x + dx,
                y: self.anchor.y + dy,
                heading: self.anchor.heading,
            },
            local_shape: self.local_shape.clone(),
        }
    }
}

/// Cut a polyline into consecutive pieces of at most `max_len` meters,
/// inserting interpolated break points.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn segment_polyline(points: &[[f64; 2]], max_len: f64) -> Result<Vec<MapSegment>> {
    if !(max_len > 0.0) {
        return Err(invalid("segment length must be positive"));
    }
    if points.len() < 2 {
        return points
            .iter()
            .map(|p| MapSegment::new(alloc::vec![*p]))
            .collect::<Result<_>>();
    }
    const EPS: f64 = 1e-9;
    let mut segments = Vec::new();
    let mut current = alloc::vec![points[0]];
    let mut room = max_len;
    for w in points.windows(2) {
        let mut from = w[0];
        let to = w[1];
        let mut len = dist(from, to);
        while len > room + EPS {
            let cut = lerp(from, to, room / len);
            current.push(cut);
            segments.push(MapSegment::new(core::mem::replace(
                &mut current,
                alloc::vec![cut],
            ))?);
            from = cut;
            len = dist(from, to);
            room = max_len;
        }
        current.push(to);
        room -= len;
    }
    if current.len() > 1 && polyline_length(&current) > EPS {
        segments.push(MapSegment::new(current)?);
    }
    Ok(segments)
}

/// Agent tracks over `T` steps plus map segments. The first `history` steps
/// are observed; the rest is ground truth for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub agents: Vec<AgentTrack>,
    pub map: Vec<MapSegment>,
    pub dt: f64,
    pub history: usize,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() {
            return Err(invalid("scene has no agents"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(invalid("dt must be positive and finite"));
        }
        let steps = self.agents[0].states.len();
        if self.agents.iter().any(|a| a.states.len() != steps) {
            return Err(config("agent tracks have different lengths"));
        }
        if self.history == 0 || self.history > steps {
            return Err(config("history must be between 1 and the track length"));
        }
        for a in &self.agents {
            ensure_finite("agent size", &[a.length, a.width])?;
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.agents.first().map_or(0, |a| a.states.len())
    }

    pub fn future(&self) -> usize {
        self.steps().saturating_sub(self.history)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            agents: self.agents.iter().map(|a| a.translated(dx, dy)).collect(),
            map: self.map.iter().map(|m| m.translated(dx, dy)).collect(),
            dt: self.dt,
            history: self.history,
        }
    }

    /// Ground-truth positions after the observed prefix, per agent.
    pub fn future_positions(&self, agent: usize, horizon: usize) -> Vec<[f64; 2]> {
        self.agents[agent].states[self.history..]
            .iter()
            .take(horizon)
            .map(AgentState::position)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RoadShape {
    Straight,
    /// Constant signed curvature of the centerline, 1/m.
    Arc {
        curvature: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub agents: usize,
    pub history: usize,
    pub future: usize,
    pub dt: f64,
    pub road: RoadShape,
    pub road_length: f64,
    pub lane_width: f64,
    pub speed_range: (f64, f64),
    pub stop_sign: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            agents: 4,
            history: 4,
            future: 16,
            dt: DEFAULT_DT,
            road: RoadShape::Straight,
            road_length: 200.0,
            lane_width: 3.5,
            speed_range: (2.0, 10.0),
            stop_sign: true,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=8).contains(&self.agents) {
            return Err(config("synthetic scenes have 2 to 8 agents"));
        }
        if self.history == 0 {
            return Err(config("history must be at least one step"));
        }
        ensure_finite(
            "synthetic config",
            &[self.dt, self.road_length, self.lane_width],
        )?;
        if self.dt <= 0.0 || self.road_length <= 0.0 || self.lane_width <= 0.0 {
            return Err(config("dt, road length and lane width must be positive"));
        }
        let (lo, hi) = self.speed_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
            return Err(config("speed range must satisfy 0 <= lo <= hi"));
        }
        if let RoadShape::Arc { curvature } = self.road {
            if !curvature.is_finite() || curvature.abs() * self.lane_width >= 1.0 {
                return Err(config(
                    "arc curvature must be finite and wider than the lanes",
                ));
            }
        }
        Ok(())
    }
}

/// Curve at lateral offset `offset` (left positive) from the centerline.
fn road_point(road: RoadShape, s: f64, offset: f64) -> ([f64; 2], f64) {
    match road {
        RoadShape::Straight => ([s, offset], 0.0),
        RoadShape::Arc { curvature: 0.0 } => ([s, offset], 0.0),
        RoadShape::Arc { curvature: k } => {
            let th = k * s;
            let (sn, cs) = (libm::sin(th), libm::cos(th));
            ([sn / k - offset * sn, (1.0 - cs) / k + offset * cs], th)
        }
    }
}

fn lane_curvature(road: RoadShape, offset: f64) -> f64 {
    match road {
        RoadShape::Straight => 0.0,
        RoadShape::Arc { curvature: k } => k / (1.0 - k * offset),
    }
}

/// Straight or constant-curvature road with agents driving at constant
/// speed along their lanes. Tracks follow [`kinematic_step`] exactly.
pub fn synthetic_scene(cfg: &SyntheticConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = seeded(cfg.seed);
    let steps = cfg.history + cfg.future;

    let mut map = Vec::new();
    let samples = libm::ceil(cfg.road_length) as usize;
    for offset in [-cfg.lane_width, 0.0, cfg.lane_width] {
        let line: Vec<[f64; 2]> = (0..=samples)
            .map(|i| {
                road_point(
                    cfg.road,
                    cfg.road_length * i as f64 / samples as f64,
                    offset,
                )
                .0
            })
            .collect();
        map.extend(segment_polyline(&line, MAX_SEGMENT_LENGTH)?);
    }
    if cfg.stop_sign {
        let (p, _) = road_point(cfg.road, cfg.road_length, cfg.lane_width / 2.0);
        map.push(MapSegment::stop_sign(p[0], p[1])?);
    }

    let (lo, hi) = cfg.speed_range;
    let mut agents = Vec::with_capacity(cfg.agents);
    for _ in 0..cfg.agents {
        let lane = if rng.gen::<bool>() { 0.5 } else { -0.5 } * cfg.lane_width;
        let s0 = rng.gen_range(0.05..0.3) * cfg.road_length;
        let speed = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let (p, heading) = road_point(cfg.road, s0, lane);
        let u = ControlAction::new(0.0, speed * lane_curvature(cfg.road, lane));
        let mut state = AgentState::new(p[0], p[1], heading, speed)?;
        let mut states = Vec::with_capacity(steps);
        states.push(state);
        for _ in 1..steps {
            state = kinematic_step(&state, &u, cfg.dt)?;
            states.push(state);
        }
        agents.push(AgentTrack {
            length: rng.gen_range(4.0..5.0),
            width: rng.gen_range(1.7..2.0),
            states,
        });
    }
    let scene = Scene {
        agents,
        map,
        dt: cfg.dt,
        history: cfg.history,
    };
    scene.validate()?;
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn straight_segment_local_frame() {
        let points: Vec<[f64; 2]> = (0..=25).map(|i| [i as f64, 0.0]).collect();
        let seg = MapSegment::new(points).unwrap();
        assert!((seg.anchor.x - 12.5).abs() < 1e-12 && seg.anchor.y == 0.0);
        assert_eq!(seg.anchor.heading.radians(), 0.0);
        let first = seg.local_shape[0];
        let last = *seg.local_shape.last().unwrap();
        assert!((first[0] + 12.5).abs() < 1e-9 && first[1].abs() < 1e-9);
        assert!((last[0] - 12.5).abs() < 1e-9 && last[1].abs() < 1e-9);
    }

    #[test]
    fn rotated_segment_anchor_maps_to_origin() {
        let seg = MapSegment::new(vec![[1.0, 1.0], [1.0, 5.0], [1.0, 9.0]]).unwrap();
        assert!((seg.anchor.heading.radians() - core::f64::consts::FRAC_PI_2).abs() < 1e-15);
        let mid = seg.local_shape[1];
        assert!(mid[0].abs() < 1e-12 && mid[1].abs() < 1e-12);
        assert!((seg.local_shape[2][0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn stop_sign_heading_zero() {
        let seg = MapSegment::stop_sign(3.0, -7.0).unwrap();
        assert_eq!(seg.anchor.heading.radians(), 0.0);
        assert_eq!((seg.anchor.x, seg.anchor.y), (3.0, -7.0));
        assert_eq!(seg.local_shape, vec![[0.0, 0.0]]);
    }

    #[test]
    fn segmentation_caps_length_and_preserves_total() {
        let line: Vec<[f64; 2]> = (0..=100)
            .map(|i| [i as f64 * 0.7, i as f64 * 0.7])
            .collect();
        let total = polyline_length(&line);
        let segs = segment_polyline(&line, MAX_SEGMENT_LENGTH).unwrap();
        assert!(segs.iter().all(|s| s.length() <= MAX_SEGMENT_LENGTH + 1e-9));
        let sum: f64 = segs.iter().map(MapSegment::length).sum();
        assert!((sum - total).abs() < 1e-9);
        assert_eq!(segs.len(), libm::ceil(total / MAX_SEGMENT_LENGTH) as usize);
    }

    #[test]
    fn synthetic_scene_shapes() {
        let cfg = SyntheticConfig {
            agents: 3,
            road: RoadShape::Arc { curvature: 0.01 },
            seed: 7,
            ..SyntheticConfig::default()
        };
        let scene = synthetic_scene(&cfg).unwrap();
        assert_eq!(scene.agents.len(), 3);
        assert_eq!(scene.steps(), 20);
        assert_eq!(scene.future(), 16);
        assert!(scene
            .map
            .iter()
            .all(|m| m.length() <= MAX_SEGMENT_LENGTH + 1e-9));
        assert_eq!(scene, synthetic_scene(&cfg).unwrap());
        assert!(synthetic_scene(&SyntheticConfig { agents: 9, ..cfg }).is_err());
    }

    #[test]
    fn translation_moves_everything_but_local_shape() {
        let scene = synthetic_scene(&SyntheticConfig::default()).unwrap();
        let moved = scene.translated(5.0, -2.0);
        assert_eq!(moved.map[0].local_shape, scene.map[0].local_shape);
        assert_eq!(
            moved.agents[1].states[0].x,
            scene.agents[1].states[0].x + 5.0
        );
    }
}
