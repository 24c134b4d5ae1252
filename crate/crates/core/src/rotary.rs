//! Rotary kernels.
//!
//! Two embeddings share one primitive, the 2D rotation:
//!
//! - the *position* embedding rotates pair `l` of a vector by `m * freqs[l]`
//!   with the geometric schedule `freqs[l] = base^(-l / pairs)`;
//! - the *heading* embedding rotates every pair by the same angle, which keeps
//!   the dot product of two embedded vectors periodic in the relative heading.
//!
//! Block-diagonal matrices are never built. Every kernel works pair by pair,
//! in place on a slice, with owned-vector wrappers on top.

use alloc::vec::Vec;
use core::f64::consts::TAU;
use core::ops::{Mul, Sub};

use crate::error::{ensure_finite, invalid, Error, Result};

pub const DEFAULT_BASE: f64 = 10_000.0;

/// An angle in radians, always canonicalized to `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Angle(f64);

impl Angle {
    pub const ZERO: Angle = Angle(0.0);

    pub fn new(radians: f64) -> Result<Self> {
        if !radians.is_finite() {
            return Err(invalid("angle must be finite"));
        }
        Ok(Angle(wrap_tau(radians)))
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    /// The same direction expressed in `[-π, π)`.
    pub fn signed(self) -> f64 {
        if self.0 >= core::f64::consts::PI {
            self.0 - TAU
        } else {
            self.0
        }
    }

    /// Shift by `delta` radians and re-canonicalize.
    pub fn shifted(self, delta: f64) -> Result<Self> {
        Angle::new(self.0 + delta)
    }
}

impl Sub for Angle {
    type Output = Angle;

    fn sub(self, rhs: Angle) -> Angle {
        relative_angle(self, rhs)
    }
}

/// Floor-based modulo so negative inputs land in `[0, 2π)`.
pub(crate) fn wrap_tau(radians: f64) -> f64 {
    let wrapped = radians - TAU * libm::floor(radians / TAU);
    // rounding can push tiny negatives up to exactly TAU
    if !(0.0..TAU).contains(&wrapped) {
        0.0
    } else {
        wrapped
    }
}

/// `(a - b) mod 2π`.
pub fn relative_angle(a: Angle, b: Angle) -> Angle {
    Angle(wrap_tau(a.0 - b.0))
}

/// Per-pair rotation frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySchedule {
    freqs: Vec<f64>,
}

impl FrequencySchedule {
    /// `freqs[l] = 10000^(-l / pairs)`.
    pub fn standard(pairs: usize) -> Self {
        Self::geometric(pairs, DEFAULT_BASE)
    }

    pub fn geometric(pairs: usize, base: f64) -> Self {
        let freqs = (0..pairs)
            .map(|l| {
                if l == 0 {
                    1.0
                } else {
                    libm::pow(base, -(l as f64) / pairs as f64)
                }
            })
            .collect();
        Self { freqs }
    }

    /// Every pair at unit frequency.
    pub fn uniform(pairs: usize) -> Self {
        Self {
            freqs: alloc::vec![1.0; pairs],
        }
    }

    pub fn from_freqs(freqs: Vec<f64>) -> Result<Self> {
        if freqs.iter().any(|f| !f.is_finite() || *f <= 0.0) {
            return Err(invalid("frequencies must be finite and positive"));
        }
        Ok(Self { freqs })
    }

    pub fn pairs(&self) -> usize {
        self.freqs.len()
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }
}

/// A vector of `2 * pairs` reals read as consecutive 2D pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct EvenVector(Vec<f64>);

impl EvenVector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if !data.len().is_multiple_of(2) {
            return Err(Error::Dimension {
                what: "even vector length",
                expected: data.len() + 1,
                found: data.len(),
            });
        }
        Ok(Self(data))
    }

    pub fn pairs(&self) -> usize {
        self.0.len() / 2
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &EvenVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.dot(self))
    }
}

/// Row-major 2x2 rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation2 {
    pub m: [[f64; 2]; 2],
}

impl Rotation2 {
    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.m[0][0] * v[0] + self.m[0][1] * v[1],
            self.m[1][0] * v[0] + self.m[1][1] * v[1],
        ]
    }

    pub fn transpose(&self) -> Rotation2 {
        Rotation2 {
            m: [[self.m[0][0], self.m[1][0]], [self.m[0][1], self.m[1][1]]],
        }
    }

    pub fn determinant(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }
}

impl Mul for Rotation2 {
    type Output = Rotation2;

    fn mul(self, rhs: Rotation2) -> Rotation2 {
        let a = self.m;
        let b = rhs.m;
        Rotation2 {
            m: [
                [
                    a[0][0] * b[0][0] + a[0][1] * b[1][0],
                    a[0][0] * b[0][1] + a[0][1] * b[1][1],
                ],
                [
                    a[1][0] * b[0][0] + a[1][1] * b[1][0],
                    a[1][0] * b[0][1] + a[1][1] * b[1][1],
                ],
            ],
        }
    }
}

/// `[[cos θ, -sin θ], [sin θ, cos θ]]`.
pub fn rotate2d(theta: f64) -> Result<Rotation2> {
    if !theta.is_finite() {
        return Err(invalid("rotation angle must be finite"));
    }
    let (s, c) = libm::sincos(theta);
    Ok(Rotation2 {
        m: [[c, -s], [s, c]],
    })
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn rotate_pair(pair: &mut [f64], sin: f64, cos: f64) {
    let (a, b) = (pair[0], pair[1]);
    pair[0] = cos * a - sin * b;
    pair[1] = sin * a + cos * b;
}

/// Rotate pair `l` of `x` by `m * freqs[l]`. `x` must hold exactly
/// `2 * freqs.len()` values.
pub fn rope_in_place(x: &mut [f64], m: f64, freqs: &[f64]) {
    debug_assert_eq!(x.len(), 2 * freqs.len());
    for (pair, f) in x.chunks_exact_mut(2).zip(freqs) {
        let (s, c) = libm::sincos(m * f);
        rotate_pair(pair, s, c);
    }
}

/// Rotate every pair of `x` by the same `theta`.
pub fn heading_in_place(x: &mut [f64], theta: f64) {
    debug_assert_eq!(x.len() % 2, 0);
    let (s, c) = libm::sincos(theta);
    for pair in x.chunks_exact_mut(2) {
        rotate_pair(pair, s, c);
    }
}

/// Number of pairs that carry the x coordinate when a planar position is
/// embedded into `pairs` pairs. The remaining pairs carry y.
pub fn planar_x_pairs(pairs: usize) -> usize {
    pairs.div_ceil(2)
}

/// Frequencies used per axis by [`planar_in_place`] for a vector of `pairs`
/// pairs.
pub fn planar_schedule(pairs: usize) -> FrequencySchedule {
    FrequencySchedule::standard(planar_x_pairs(pairs))
}

/// Embed a planar position by axis splitting: the first half of the pairs is
/// rotated with scalar position `pos.0`, the second half with `pos.1`, each
/// half using `freqs` from its own start. `freqs` needs at least
/// `planar_x_pairs(pairs)` entries. `sign = -1.0` applies the inverse.
pub fn planar_in_place(x: &mut [f64], pos: (f64, f64), freqs: &[f64], sign: f64) {
    let pairs = x.len() / 2;
    let split = planar_x_pairs(pairs);
    debug_assert!(freqs.len() >= split);
    let (xs, ys) = x.split_at_mut(2 * split);
    rope_in_place(xs, sign * pos.0, &freqs[..split]);
    rope_in_place(ys, sign * pos.1, &freqs[..pairs - split]);
}

/// Multi-frequency position embedding of a scalar position `m`.
pub fn rope_embed(x: &EvenVector, m: f64, sched: &FrequencySchedule) -> Result<EvenVector> {
    if x.0.len() != 2 * sched.pairs() {
        return Err(Error::Dimension {
            what: "rope input length",
            expected: 2 * sched.pairs(),
            found: x.0.len(),
        });
    }
    if !m.is_finite() {
        return Err(invalid("position must be finite"));
    }
    ensure_finite("rope input", &x.0)?;
    let mut out = x.0.clone();
    rope_in_place(&mut out, m, sched.freqs());
    Ok(EvenVector(out))
}

/// Single-frequency heading embedding.
pub fn drope_embed(x: &EvenVector, theta: Angle) -> Result<EvenVector> {
    ensure_finite("heading-embedding input", &x.0)?;
    let mut out = x.0.clone();
    heading_in_place(&mut out, theta.radians());
    Ok(EvenVector(out))
}

/// How the heading embedding picks its per-pair frequencies.
///
/// `MultiFrequency` exists only as a negative control: it reuses the
/// position schedule inside the heading embedding, which breaks periodicity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AngleEncoding {
    #[default]
    Uniform,
    MultiFrequency,
}

/// Settings shared by every rotary-based engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotaryConfig {
    pub base: f64,
    pub angle: AngleEncoding,
}

impl Default for RotaryConfig {
    fn default() -> Self {
        Self {
            base: DEFAULT_BASE,
            angle: AngleEncoding::Uniform,
        }
    }
}

impl RotaryConfig {
    pub fn with_fault(mut self) -> Self {
        self.angle = AngleEncoding::MultiFrequency;
        self
    }

    /// Per-axis schedule for a planar-position sub-vector of `pairs` pairs.
    pub fn position_schedule(&self, pairs: usize) -> FrequencySchedule {
        FrequencySchedule::geometric(planar_x_pairs(pairs), self.base)
    }

    /// Rotate `x` by a heading `theta` under this config (`sign` inverts).
    pub fn heading_in_place(&self, x: &mut [f64], theta: f64, sign: f64) {
        match self.angle {
            AngleEncoding::Uniform => heading_in_place(x, sign * theta),
            AngleEncoding::MultiFrequency => {
                let sched = FrequencySchedule::geometric(x.len() / 2, self.base);
                rope_in_place(x, sign * theta, sched.freqs());
            }
        }
    }
}
