use crate::error::{ensure_finite, invalid, Error, Result};
use crate::rotary::Angle;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub yaw: Angle,
    /// Speed, never negative.
    pub v: f64,
}

impl AgentState {
    pub fn new(x: f64, y: f64, yaw: f64, v: f64) -> Result<Self> {
        ensure_finite("agent state", &[x, y, v])?;
        Ok(Self {
            x,
            y,
            yaw: Angle::new(yaw)?,
            v: v.max(0.0),
        })
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlAction {
    /// m/s².
    pub accel: f64,
    /// rad/s.
    pub yaw_rate: f64,
    /// `(accel bin, yaw-rate bin)` when the action came from an [`ActionGrid`].
    pub bin: Option<(usize, usize)>,
}

impl ControlAction {
    pub fn new(accel: f64, yaw_rate: f64) -> Self {
        Self {
            accel,
            yaw_rate,
            bin: None,
        }
    }
}

/// Evenly spaced accel × yaw-rate bins, both ranges symmetric about zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionGrid {
    pub accel_bins: usize,
    pub yaw_bins: usize,
    pub accel_max: f64,
    pub yaw_rate_max: f64,
}

impl Default for ActionGrid {
    fn default() -> Self {
        Self {
            accel_bins: 9,
            yaw_bins: 9,
            accel_max: 4.0,
            yaw_rate_max: 1.0,
        }
    }
}

fn bin_value(bin: usize, bins: usize, max: f64) -> f64 {
    if bins == 1 {
        0.0
    } else {
        -max + 2.0 * max * bin as f64 / (bins - 1) as f64
    }
}

impl ActionGrid {
    pub fn validate(&self) -> Result<()> {
        if self.accel_bins == 0 || self.yaw_bins == 0 {
            return Err(Error::Configuration(
                "action grid needs at least one bin per axis".into(),
            ));
        }
        if !(self.accel_max.is_finite() && self.accel_max >= 0.0)
            || !(self.yaw_rate_max.is_finite() && self.yaw_rate_max >= 0.0)
        {
            return Err(Error::Configuration(
                "action bounds must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.accel_bins * self.yaw_bins
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index, accel-major.
    pub fn index(&self, accel_bin: usize, yaw_bin: usize) -> usize {
        accel_bin * self.yaw_bins + yaw_bin
    }

    pub fn action(&self, index: usize) -> Result<ControlAction> {
        if index >= self.len() {
            return Err(invalid("action index outside the grid"));
        }
        let (a, w) = (index / self.yaw_bins, index % self.yaw_bins);
        Ok(ControlAction {
            accel: bin_value(a, self.accel_bins, self.accel_max),
            yaw_rate: bin_value(w, self.yaw_bins, self.yaw_rate_max),
            bin: Some((a, w)),
        })
    }

    /// The bin closest to zero accel and zero yaw rate.
    pub fn zero_index(&self) -> usize {
        self.index(self.accel_bins / 2, self.yaw_bins / 2)
    }

    pub fn contains(&self, u: &ControlAction) -> bool {
        u.accel.abs() <= self.accel_max && u.yaw_rate.abs() <= self.yaw_rate_max
    }
}

/// Semi-implicit unicycle: speed and yaw first, then position with the new
/// values. Bounds are the caller's business.
pub fn kinematic_step(s: &AgentState, u: &ControlAction, dt: f64) -> Result<AgentState> {
    ensure_finite("kinematic input", &[s.x, s.y, s.v, u.accel, u.yaw_rate, dt])?;
    if dt <= 0.0 {
        return Err(invalid("dt must be positive"));
    }
    let v = (s.v + u.accel * dt).max(0.0);
    let yaw = s.yaw.shifted(u.yaw_rate * dt)?;
    let th = yaw.radians();
    Ok(AgentState {
        x: s.x + v * libm::cos(th) * dt,
        y: s.y + v * libm::sin(th) * dt,
        yaw,
        v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    #[test]
    fn straight_line() {
        let s = AgentState::new(0.0, 0.0, 0.0, 1.0).unwrap();
        let n = kinematic_step(&s, &ControlAction::new(0.0, 0.0), 0.5).unwrap();
        assert_eq!((n.x, n.y, n.yaw.radians(), n.v), (0.5, 0.0, 0.0, 1.0));
    }

    #[test]
    fn turn_in_place() {
        let s = AgentState::new(2.0, -1.0, 0.3, 0.0).unwrap();
        let n = kinematic_step(&s, &ControlAction::new(0.0, 0.8), 0.5).unwrap();
        assert_eq!((n.x, n.y), (2.0, -1.0));
        assert!((n.yaw.radians() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn quarter_turn_rate() {
        let s = AgentState::new(0.0, 0.0, 0.0, 1.0).unwrap();
        let n = kinematic_step(&s, &ControlAction::new(0.0, FRAC_PI_2), 0.5).unwrap();
        assert!((n.yaw.radians() - FRAC_PI_4).abs() < 1e-15);
        assert!((n.x - 0.5 * FRAC_PI_4.cos()).abs() < 1e-15);
        assert!((n.y - 0.5 * FRAC_PI_4.sin()).abs() < 1e-15);
    }

    #[test]
    fn speed_clamps_at_zero_and_bad_input_rejected() {
        let s = AgentState::new(0.0, 0.0, 0.0, 1.0).unwrap();
        let n = kinematic_step(&s, &ControlAction::new(-4.0, 0.0), 0.5).unwrap();
        assert_eq!(n.v, 0.0);
        assert_eq!((n.x, n.y), (0.0, 0.0));
        assert!(kinematic_step(&s, &ControlAction::new(f64::NAN, 0.0), 0.5).is_err());
        assert!(kinematic_step(&s, &ControlAction::new(0.0, 0.0), 0.0).is_err());
    }

    #[test]
    fn default_grid() {
        let g = ActionGrid::default();
        assert_eq!(g.len(), 81);
        let z = g.action(g.zero_index()).unwrap();
        assert_eq!((z.accel, z.yaw_rate, z.bin), (0.0, 0.0, Some((4, 4))));
        let first = g.action(0).unwrap();
        assert_eq!((first.accel, first.yaw_rate), (-4.0, -1.0));
        let last = g.action(80).unwrap();
        assert_eq!((last.accel, last.yaw_rate), (4.0, 1.0));
        assert!(g.action(81).is_err());
        assert!((0..81).all(|i| g.contains(&g.action(i).unwrap())));
    }
}
