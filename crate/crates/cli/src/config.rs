//! Run configuration: one JSON file, every field optional, flags on top.

use std::path::{Path, PathBuf};

use anyhow::Context;
use drope_core::attention::VariantKind;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum FaultInject {
    /// Use the multi-frequency position schedule inside the heading embedding.
    RopeFreqsInFangle,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub fault_inject: Option<FaultInject>,
    pub verify: VerifySection,
    pub profile: ProfileSection,
    pub rollout: RolloutSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub trials: usize,
    pub pair_counts: Vec<usize>,
    pub counterexample_pairs: Vec<usize>,
    pub counterexample_seeds: usize,
    pub engine_trials: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        let d = drope_core::verify::VerifyConfig::default();
        Self {
            trials: d.trials,
            pair_counts: d.pair_counts,
            counterexample_pairs: d.counterexample_pairs,
            counterexample_seeds: d.counterexample_seeds,
            engine_trials: d.engine_trials,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSection {
    pub tokens: Vec<usize>,
    pub heads: Vec<usize>,
    pub pairs: Vec<usize>,
    pub value_dim: Vec<usize>,
    pub variants: Vec<Variant>,
}

impl Default for ProfileSection {
    fn default() -> Self {
        Self {
            tokens: vec![64],
            heads: vec![4],
            pairs: vec![32, 64, 128, 256],
            value_dim: vec![64],
            variants: VariantKind::ALL.iter().copied().map(Variant).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Greedy,
    Sample,
    ConstantVelocity,
    /// Always the zero-accel, zero-yaw-rate bin.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutSection {
    pub scene: Option<PathBuf>,
    pub variant: Variant,
    pub policy: PolicyKind,
    pub horizon: usize,
    /// Rollouts per scene; only `sample` draws more than one.
    pub samples: usize,
    pub d_model: usize,
    pub heads: usize,
    pub pairs: usize,
    pub value_dim: usize,
    pub blocks: usize,
}

impl Default for RolloutSection {
    fn default() -> Self {
        let m = drope_core::pipeline::ModelConfig::default();
        Self {
            scene: None,
            variant: Variant(m.variant),
            policy: PolicyKind::Greedy,
            horizon: 16,
            samples: 1,
            d_model: m.d_model,
            heads: m.heads,
            pairs: m.pairs,
            value_dim: m.value_dim,
            blocks: m.blocks,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(UsageError::wrap)?;
        serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))
            .map_err(UsageError::wrap)
    }
}

/// Variant name as it appears in config files and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Variant(pub VariantKind);

impl TryFrom<String> for Variant {
    type Error = drope_core::Error;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse().map(Variant)
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.0.name().to_string()
    }
}
