//! Randomized invariance suite.
//!
//! Every property draws its inputs from a generator seeded by the suite seed
//! and the property index, so a report is a pure function of the config.
//! Dot-product errors are relative to `|Q| |K|`; engine-output errors are
//! relative to the largest output magnitude.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;
use rand::Rng;

use crate::attention::{
    rope_periodicity_counterexample_with, EncodingVariant, Engine, PoseSet, QkvSet, RpeEncoders,
    VariantKind,
};
use crate::error::{invalid, Result};
use crate::rng::{seeded, uniform_vec, SeededRng};
use crate::rotary::{dot, rope_in_place, wrap_tau, AngleEncoding, FrequencySchedule, RotaryConfig};

pub const DOT_TOLERANCE: f64 = 1e-8;
pub const ENGINE_TOLERANCE: f64 = 1e-8;
pub const ROPE_GAP_MIN: f64 = 1e-3;
pub const DROPE_GAP_MAX: f64 = 1e-10;
pub const STOCHASTIC_TOLERANCE: f64 = 1e-12;
pub const TRANSLATION: (f64, f64) = (5.3, -2.1);

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub trials: usize,
    pub seed: u64,
    pub rotary: RotaryConfig,
    /// Pair counts cycled through by the scalar checks.
    pub pair_counts: Vec<usize>,
    /// Pair counts swept by the counterexample, one run per seed each.
    pub counterexample_pairs: Vec<usize>,
    pub counterexample_seeds: usize,
    /// Trials per variant for the engine-level checks.
    pub engine_trials: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            seed: 0,
            rotary: RotaryConfig::default(),
            pair_counts: vec![1, 2, 8, 32],
            counterexample_pairs: vec![8],
            counterexample_seeds: 100,
            engine_trials: 50,
        }
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.engine_trials == 0 || self.counterexample_seeds == 0 {
            return Err(invalid("trial counts must be positive"));
        }
        if self.pair_counts.is_empty() || self.pair_counts.contains(&0) {
            return Err(invalid("pair counts must be non-empty and positive"));
        }
        if self.counterexample_pairs.iter().any(|p| *p < 2) || self.counterexample_pairs.is_empty()
        {
            return Err(invalid("counterexample pair counts must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    /// `observed < threshold` passes.
    Below,
    /// `observed > threshold` passes.
    Above,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub trials: usize,
    /// Largest error for `Below`, smallest margin for `Above`.
    pub observed: f64,
    pub threshold: f64,
    pub comparison: Comparison,
    pub passed: bool,
    /// Trials that broke the threshold.
    pub violations: usize,
}

impl PropertyResult {
    fn new(name: &'static str, comparison: Comparison, threshold: f64) -> Self {
        Self {
            name,
            trials: 0,
            observed: match comparison {
                Comparison::Below => 0.0,
                Comparison::Above => f64::INFINITY,
            },
            threshold,
            comparison,
            passed: true,
            violations: 0,
        }
    }

    fn record(&mut self, value: f64) {
        self.trials += 1;
        let ok = match self.comparison {
            Comparison::Below => value < self.threshold,
            Comparison::Above => value > self.threshold,
        };
        // NaN counts as a violation and pins the observed value
        if !ok {
            self.violations += 1;
            self.passed = false;
        }
        self.observed = match self.comparison {
            Comparison::Below if value.is_nan() || value > self.observed => value,
            Comparison::Above if value.is_nan() || value < self.observed => value,
            _ => self.observed,
        };
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub seed: u64,
    pub fault_injected: bool,
    pub results: Vec<PropertyResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn get(&self, name: &str) -> Option<&PropertyResult> {
        self.results.iter().find(|r| r.name == name)
    }
}

fn rng_for(cfg: &VerifyConfig, property: u64) -> SeededRng {
    seeded(
        cfg.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(property),
    )
}

fn norm(x: &[f64]) -> f64 {
    libm::sqrt(dot(x, x))
}

fn relative(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(f64::MIN_POSITIVE)
}

/// Shifting both positions by a common offset leaves the score unchanged.
pub fn check_rope_relative_position(cfg: &VerifyConfig) -> PropertyResult {
    let mut res = PropertyResult::new("rope_relative_position", Comparison::Below, DOT_TOLERANCE);
    let mut rng = rng_for(cfg, 1);
    for t in 0..cfg.trials {
        let pairs = cfg.pair_counts[t % cfg.pair_counts.len()];
        let sched = FrequencySchedule::geometric(pairs, cfg.rotary.base);
        let q = uniform_vec(&mut rng, 2 * pairs, 1.0);
        let k = uniform_vec(&mut rng, 2 * pairs, 1.0);
        let (m, n, c): (f64, f64, f64) = (
            rng.gen_range(-100.0..100.0),
            rng.gen_range(-100.0..100.0),
            rng.gen_range(-100.0..100.0),
        );
        let score = |a: f64, b: f64| {
            let (mut qa, mut kb) = (q.clone(), k.clone());
            rope_in_place(&mut qa, a, sched.freqs());
            rope_in_place(&mut kb, b, sched.freqs());
            dot(&qa, &kb)
        };
        res.record(relative(
            score(m, n),
            score(m + c, n + c),
            norm(&q) * norm(&k),
        ));
    }
    res
}

/// Shifting both headings by a common `delta`, with wrap to `[0, 2π)`, leaves
/// the score unchanged. A third of the trials are forced to wrap.
pub fn check_drope_relative_angle(cfg: &VerifyConfig) -> PropertyResult {
    let mut res = PropertyResult::new("drope_relative_angle", Comparison::Below, DOT_TOLERANCE);
    let mut rng = rng_for(cfg, 2);
    let rotary = cfg.rotary;
    for t in 0..cfg.trials {
        let pairs = cfg.pair_counts[t % cfg.pair_counts.len()];
        let q = uniform_vec(&mut rng, 2 * pairs, 1.0);
        let k = uniform_vec(&mut rng, 2 * pairs, 1.0);
        let (ti, tj, delta): (f64, f64, f64) = if t % 3 == 0 {
            let ti = rng.gen_range(TAU - 0.5..TAU);
            (ti, rng.gen_range(0.0..TAU), rng.gen_range(0.5..1.5))
        } else {
            (
                rng.gen_range(0.0..TAU),
                rng.gen_range(0.0..TAU),
                rng.gen_range(-2.0 * TAU..2.0 * TAU),
            )
        };
        let score = |a: f64, b: f64| {
            let (mut qa, mut kb) = (q.clone(), k.clone());
            rotary.heading_in_place(&mut qa, wrap_tau(a), 1.0);
            rotary.heading_in_place(&mut kb, wrap_tau(b), 1.0);
            dot(&qa, &kb)
        };
        res.record(relative(
            score(ti, tj),
            score(ti + delta, tj + delta),
            norm(&q) * norm(&k),
        ));
    }
    res
}

/// Returns the RoPE minimum-gap and DRoPE maximum-gap results.
pub fn check_periodicity(cfg: &VerifyConfig) -> Result<(PropertyResult, PropertyResult)> {
    let mut rope = PropertyResult::new("periodicity_rope_gap", Comparison::Above, ROPE_GAP_MIN);
    let mut drope = PropertyResult::new("periodicity_drope_gap", Comparison::Below, DROPE_GAP_MAX);
    for &pairs in &cfg.counterexample_pairs {
        for s in 0..cfg.counterexample_seeds as u64 {
            let r =
                rope_periodicity_counterexample_with(pairs, cfg.seed.wrapping_add(s), &cfg.rotary)?;
            rope.record(r.rope_gap);
            drope.record(r.drope_gap);
        }
    }
    Ok((rope, drope))
}

const ENGINE_TOKENS: usize = 6;
const ENGINE_HEADS: usize = 2;
const ENGINE_PAIRS: usize = 4;
const ENGINE_VALUE: usize = 4;

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| f64::max(m, v.abs()))
}

fn output_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()));
    diff / max_abs(a).max(f64::MIN_POSITIVE)
}

/// Runs `f` for every variant on fresh random inputs.
fn engine_trials(
    cfg: &VerifyConfig,
    property: u64,
    res: &mut PropertyResult,
    mut f: impl FnMut(&Engine, &QkvSet, &PoseSet, &mut SeededRng) -> Result<f64>,
) -> Result<()> {
    let mut rng = rng_for(cfg, property);
    for _ in 0..cfg.engine_trials {
        for kind in VariantKind::ALL {
            let qkv = QkvSet::random(
                ENGINE_TOKENS,
                ENGINE_HEADS,
                ENGINE_PAIRS,
                ENGINE_VALUE,
                &mut rng,
            )?;
            let poses = PoseSet::random(ENGINE_TOKENS, 50.0, &mut rng);
            let enc = RpeEncoders::random(ENGINE_HEADS, ENGINE_PAIRS, ENGINE_VALUE, &mut rng);
            let engine = Engine::new(EncodingVariant::from_kind(kind, ENGINE_PAIRS))
                .with_rotary(cfg.rotary)
                .with_rpe(&enc)
                .keep_weights();
            let e = f(&engine, &qkv, &poses, &mut rng)?;
            res.record(e);
        }
    }
    Ok(())
}

pub fn check_engine_translation(cfg: &VerifyConfig) -> Result<PropertyResult> {
    let mut res = PropertyResult::new(
        "engine_translation_invariance",
        Comparison::Below,
        ENGINE_TOLERANCE,
    );
    engine_trials(cfg, 3, &mut res, |engine, qkv, poses, _| {
        let a = engine.self_attention(qkv, poses)?;
        let b = engine.self_attention(qkv, &poses.translated(TRANSLATION.0, TRANSLATION.1))?;
        Ok(output_error(&a.values, &b.values))
    })?;
    Ok(res)
}

/// Adds a common heading offset to every token; headings re-canonicalize.
pub fn check_engine_heading_shift(cfg: &VerifyConfig) -> Result<PropertyResult> {
    let mut res = PropertyResult::new(
        "engine_heading_shift_invariance",
        Comparison::Below,
        ENGINE_TOLERANCE,
    );
    engine_trials(cfg, 4, &mut res, |engine, qkv, poses, rng| {
        let delta: f64 = rng.gen_range(-2.0 * TAU..2.0 * TAU);
        let a = engine.self_attention(qkv, poses)?;
        let b = engine.self_attention(qkv, &poses.with_heading_shift(delta)?)?;
        Ok(output_error(&a.values, &b.values))
    })?;
    Ok(res)
}

pub fn check_row_stochastic(cfg: &VerifyConfig) -> Result<PropertyResult> {
    let mut res = PropertyResult::new(
        "attention_rows_stochastic",
        Comparison::Below,
        STOCHASTIC_TOLERANCE,
    );
    engine_trials(cfg, 5, &mut res, |engine, qkv, poses, _| {
        let out = engine.self_attention(qkv, poses)?;
        let w = out.weights.as_deref().unwrap_or(&[]);
        Ok(w.chunks(out.key_tokens).fold(0.0, |m, row| {
            let neg = row.iter().any(|x| *x < 0.0);
            let err = (row.iter().sum::<f64>() - 1.0).abs();
            f64::max(m, if neg { f64::INFINITY } else { err })
        }))
    })?;
    Ok(res)
}

pub fn run_suite(cfg: &VerifyConfig) -> Result<VerifyReport> {
    cfg.validate()?;
    let (rope_gap, drope_gap) = check_periodicity(cfg)?;
    Ok(VerifyReport {
        seed: cfg.seed,
        fault_injected: cfg.rotary.angle == AngleEncoding::MultiFrequency,
        results: vec![
            check_rope_relative_position(cfg),
            check_drope_relative_angle(cfg),
            rope_gap,
            drope_gap,
            check_engine_translation(cfg)?,
            check_engine_heading_shift(cfg)?,
            check_row_stochastic(cfg)?,
        ],
    })
}
