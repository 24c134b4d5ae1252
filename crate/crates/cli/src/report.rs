//! Machine-readable reports. Schemas live in `schemas/`.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use drope_core::profiler::{SweepRow, TrendCheck};
use drope_core::verify::{Comparison, PropertyResult, VerifyReport};
use serde::Serialize;

pub const VERIFY_SCHEMA: &str = "drope.verify-report.v1";
pub const PROFILE_SCHEMA: &str = "drope.profile-report.v1";
pub const ROLLOUT_SCHEMA: &str = "drope.rollout-summary.v1";

/// The only non-deterministic part of any report.
#[derive(Debug, Clone, Serialize)]
pub struct Header {
    pub schema: &'static str,
    pub tool: &'static str,
    pub version: &'static str,
    pub generated_unix_ms: u128,
}

impl Header {
    pub fn new(schema: &'static str) -> Self {
        Self {
            schema,
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            generated_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_millis()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyRecord {
    pub name: &'static str,
    pub trials: usize,
    /// Largest error for `below`, smallest gap for `above`. `null` for NaN.
    pub observed: Option<f64>,
    pub threshold: f64,
    pub comparison: &'static str,
    pub passed: bool,
    pub violations: usize,
}

impl From<&PropertyResult> for PropertyRecord {
    fn from(r: &PropertyResult) -> Self {
        Self {
            name: r.name,
            trials: r.trials,
            observed: (!r.observed.is_nan()).then_some(r.observed),
            threshold: r.threshold,
            comparison: match r.comparison {
                Comparison::Below => "below",
                Comparison::Above => "above",
            },
            passed: r.passed,
            violations: r.violations,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyDocument {
    pub header: Header,
    pub seed: u64,
    pub fault_injected: bool,
    pub passed: bool,
    pub properties: Vec<PropertyRecord>,
}

impl VerifyDocument {
    pub fn new(report: &VerifyReport) -> Self {
        Self {
            header: Header::new(VERIFY_SCHEMA),
            seed: report.seed,
            fault_injected: report.fault_injected,
            passed: report.all_passed(),
            properties: report.results.iter().map(PropertyRecord::from).collect(),
        }
    }
}

/// Column order of `sweep.csv`.
pub const SWEEP_HEADER: [&str; 18] = [
    "variant",
    "tokens",
    "heads",
    "pairs",
    "value_dim",
    "qk_width",
    "qkv_scalars",
    "pairwise_scalars",
    "embedded_scalars",
    "total_scalars",
    "total_scalars_materialized",
    "bytes_f32",
    "bytes_f64",
    "flops_scores",
    "flops_weighted_sum",
    "flops_embedding",
    "flops_rpe_encoders",
    "flops_total",
];

#[derive(Debug, Clone, Serialize)]
pub struct SweepRecord {
    pub variant: &'static str,
    pub tokens: u64,
    pub heads: u64,
    pub pairs: u64,
    pub value_dim: u64,
    pub qk_width: u64,
    pub qkv_scalars: u64,
    pub pairwise_scalars: u64,
    pub embedded_scalars: u64,
    pub total_scalars: u64,
    pub total_scalars_materialized: u64,
    pub bytes_f32: u64,
    pub bytes_f64: u64,
    pub flops_scores: u64,
    pub flops_weighted_sum: u64,
    pub flops_embedding: u64,
    pub flops_rpe_encoders: u64,
    pub flops_total: u64,
}

impl From<&SweepRow> for SweepRecord {
    fn from(r: &SweepRow) -> Self {
        let (m, f) = (&r.memory, &r.flops);
        Self {
            variant: m.variant.name(),
            tokens: m.tokens,
            heads: m.heads,
            pairs: m.pairs,
            value_dim: m.value_dim,
            qk_width: m.qk_width,
            qkv_scalars: m.qkv_scalars,
            pairwise_scalars: m.pairwise_scalars,
            embedded_scalars: m.embedded_scalars,
            total_scalars: m.total_scalars,
            total_scalars_materialized: m.total_scalars_materialized,
            bytes_f32: m.bytes_f32,
            bytes_f64: m.bytes_f64,
            flops_scores: f.flops_scores,
            flops_weighted_sum: f.flops_weighted_sum,
            flops_embedding: f.flops_embedding,
            flops_rpe_encoders: f.flops_rpe_encoders,
            flops_total: f.total,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrendRecord {
    pub name: &'static str,
    pub comparisons: usize,
    pub passed: bool,
    pub detail: String,
}

impl From<&TrendCheck> for TrendRecord {
    fn from(t: &TrendCheck) -> Self {
        Self {
            name: t.name,
            comparisons: t.comparisons,
            passed: t.passed,
            detail: t.detail.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Conventions {
    pub width: &'static str,
    pub flops: &'static str,
    pub rpe_encoder_hidden: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileDocument {
    pub header: Header,
    pub conventions: Conventions,
    pub rows: Vec<SweepRecord>,
    pub trend_checks: Vec<TrendRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RolloutDocument {
    pub header: Header,
    pub scene_id: String,
    pub seed: u64,
    pub variant: &'static str,
    pub policy: &'static str,
    pub horizon: usize,
    pub dt: f64,
    pub samples: usize,
    pub agents: usize,
    /// `null` when the scene's ground truth is shorter than the horizon.
    pub min_ade: Option<f64>,
    pub trajectory_files: Vec<String>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nan_observed_serializes_as_null() {
        let r = PropertyResult {
            name: "p",
            trials: 1,
            observed: f64::NAN,
            threshold: 1.0,
            comparison: Comparison::Below,
            passed: false,
            violations: 1,
        };
        let v = serde_json::to_value(PropertyRecord::from(&r)).unwrap();
        assert!(v["observed"].is_null());
        assert_eq!(v["comparison"], "below");
    }

    #[test]
    fn sweep_header_matches_record_fields() {
        let rows = drope_core::profiler::sweep(
            &[drope_core::profiler::SweepConfig {
                tokens: 2,
                heads: 1,
                pairs: 1,
                value_dim: 1,
            }],
            &[drope_core::attention::VariantKind::Plain],
        )
        .unwrap();
        let v = serde_json::to_value(SweepRecord::from(&rows[0])).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        let mut expected: Vec<&str> = SWEEP_HEADER.to_vec();
        expected.sort_unstable();
        let mut got: Vec<&str> = keys.iter().map(|s| s.as_str()).collect();
        got.sort_unstable();
        assert_eq!(got, expected);
    }
}
