//! Three tokens at headings π/2, 0 and 3π/2: the pairs (0, 1) and (1, 2)
//! share the relative heading π/2 (mod 2π), yet the multi-frequency position
//! embedding scores them differently while the heading embedding does not.

use core::f64::consts::{FRAC_PI_2, PI};

use crate::error::{config, ensure_len, Result};
use crate::rng::{seeded, uniform_vec};
use crate::rotary::{rope_in_place, Angle, EvenVector, FrequencySchedule, RotaryConfig};

pub const HEADINGS: [f64; 3] = [FRAC_PI_2, 0.0, 3.0 * PI / 2.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicityReport {
    pub pairs: usize,
    /// Score of the pair (0, 1).
    pub rope_lhs: f64,
    /// Score of the pair (1, 2).
    pub rope_rhs: f64,
    pub rope_gap: f64,
    pub drope_lhs: f64,
    pub drope_rhs: f64,
    pub drope_gap: f64,
}

/// Random `Q`, `K` (uniform in `[-1, 1)`, seeded), shared by both token pairs.
pub fn rope_periodicity_counterexample(pairs: usize, seed: u64) -> Result<PeriodicityReport> {
    rope_periodicity_counterexample_with(pairs, seed, &RotaryConfig::default())
}

pub fn rope_periodicity_counterexample_with(
    pairs: usize,
    seed: u64,
    rotary: &RotaryConfig,
) -> Result<PeriodicityReport> {
    if pairs < 2 {
        return Err(config(
            "the counterexample needs at least two pairs; with one pair the schedule is [1] and both embeddings coincide",
        ));
    }
    let mut rng = seeded(seed);
    let q = EvenVector::new(uniform_vec(&mut rng, 2 * pairs, 1.0))?;
    let k = EvenVector::new(uniform_vec(&mut rng, 2 * pairs, 1.0))?;
    periodicity_gaps(&q, &k, rotary)
}

/// Scores both equal-relative-heading pairs under both embeddings. Works for
/// any pair count, including the degenerate single pair.
pub fn periodicity_gaps(
    q: &EvenVector,
    k: &EvenVector,
    rotary: &RotaryConfig,
) -> Result<PeriodicityReport> {
    ensure_len("key length", q.as_slice().len(), k.as_slice().len())?;
    let pairs = q.pairs();
    let sched = FrequencySchedule::geometric(pairs, rotary.base);

    let rope = |x: &EvenVector, theta: f64| {
        let mut v = x.as_slice().to_vec();
        rope_in_place(&mut v, theta, sched.freqs());
        v
    };
    let heading = |x: &EvenVector, theta: f64| -> Result<alloc::vec::Vec<f64>> {
        let mut v = x.as_slice().to_vec();
        rotary.heading_in_place(&mut v, Angle::new(theta)?.radians(), 1.0);
        Ok(v)
    };
    let score = |a: &[f64], b: &[f64]| crate::rotary::dot(a, b);

    let [t0, t1, t2] = HEADINGS;
    let rope_lhs = score(&rope(q, t0), &rope(k, t1));
    let rope_rhs = score(&rope(q, t1), &rope(k, t2));
    let drope_lhs = score(&heading(q, t0)?, &heading(k, t1)?);
    let drope_rhs = score(&heading(q, t1)?, &heading(k, t2)?);
    Ok(PeriodicityReport {
        pairs,
        rope_lhs,
        rope_rhs,
        rope_gap: (rope_lhs - rope_rhs).abs(),
        drope_lhs,
        drope_rhs,
        drope_gap: (drope_lhs - drope_rhs).abs(),
    })
}
