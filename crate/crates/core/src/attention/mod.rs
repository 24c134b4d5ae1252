//! Multi-head attention over token banks under five encoding regimes.
//!
//! | variant            | what the scores see                                   |
//! |--------------------|--------------------------------------------------------|
//! | `Plain`            | raw `Q_i . K_j`                                        |
//! | `Rpe`              | `Q_i . (K_j + Dk(rel_ij))`, values `V_j + Dv(rel_ij)`  |
//! | `Rope`             | planar position rotation of `Q_i` and `K_j`            |
//! | `DropeHeadByHead`  | even heads rotate by position, odd heads by heading    |
//! | `DropeIntraHead`   | every head splits into a position and a heading part   |
//!
//! Scores are scaled by `1/sqrt(pairs)` where `pairs` is the number of 2D
//! pairs per head (the QK width is `2 * pairs`).

mod backward;
mod counterexample;
mod engine;
mod rpe;

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;
use rand::Rng;

use crate::error::{config, ensure_finite, ensure_len, invalid, Error, Result};
use crate::rng::uniform_vec;
use crate::rotary::Angle;

pub use backward::AttentionGradients;
pub use counterexample::{
    periodicity_gaps, rope_periodicity_counterexample, rope_periodicity_counterexample_with,
    PeriodicityReport, HEADINGS,
};
pub use engine::{
    mhca, mhsa_drope_hbh, mhsa_drope_ih, mhsa_plain, mhsa_rope, mhsa_rpe, softmax_rows, Engine,
    MemoryCategory, MemoryLedger,
};
pub use rpe::{relative_descriptor, RpeEncoders, RPE_DESCRIPTOR_DIM, RPE_HIDDEN};

/// Query, key and value banks for `tokens x heads`.
///
/// Layout is token-major: the vector for token `i`, head `h` starts at
/// `(i * heads + h) * width`.
#[derive(Debug, Clone, PartialEq)]
pub struct QkvSet {
    tokens: usize,
    heads: usize,
    pairs: usize,
    value_dim: usize,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
}

impl QkvSet {
    pub fn new(
        tokens: usize,
        heads: usize,
        pairs: usize,
        value_dim: usize,
        q: Vec<f64>,
        k: Vec<f64>,
        v: Vec<f64>,
    ) -> Result<Self> {
        if heads == 0 || pairs == 0 || value_dim == 0 {
            return Err(config("heads, pairs and value width must be positive"));
        }
        let qk = tokens * heads * 2 * pairs;
        ensure_len("query bank", qk, q.len())?;
        ensure_len("key bank", qk, k.len())?;
        ensure_len("value bank", tokens * heads * value_dim, v.len())?;
        Ok(Self {
            tokens,
            heads,
            pairs,
            value_dim,
            q,
            k,
            v,
        })
    }

    pub fn zeros(tokens: usize, heads: usize, pairs: usize, value_dim: usize) -> Result<Self> {
        let qk = tokens * heads * 2 * pairs;
        Self::new(
            tokens,
            heads,
            pairs,
            value_dim,
            vec![0.0; qk],
            vec![0.0; qk],
            vec![0.0; tokens * heads * value_dim],
        )
    }

    /// Entries uniform in `[-1, 1)`.
    pub fn random<R: Rng + ?Sized>(
        tokens: usize,
        heads: usize,
        pairs: usize,
        value_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let qk = tokens * heads * 2 * pairs;
        let q = uniform_vec(rng, qk, 1.0);
        let k = uniform_vec(rng, qk, 1.0);
        let v = uniform_vec(rng, tokens * heads * value_dim, 1.0);
        Self::new(tokens, heads, pairs, value_dim, q, k, v)
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn value_dim(&self) -> usize {
        self.value_dim
    }

    pub fn qk_width(&self) -> usize {
        2 * self.pairs
    }

    pub fn query(&self, token: usize, head: usize) -> &[f64] {
        let w = self.qk_width();
        let at = (token * self.heads + head) * w;
        &self.q[at..at + w]
    }

    pub fn key(&self, token: usize, head: usize) -> &[f64] {
        let w = self.qk_width();
        let at = (token * self.heads + head) * w;
        &self.k[at..at + w]
    }

    pub fn value(&self, token: usize, head: usize) -> &[f64] {
        let at = (token * self.heads + head) * self.value_dim;
        &self.v[at..at + self.value_dim]
    }

    /// Scalars held by the three banks.
    pub fn scalar_count(&self) -> usize {
        self.q.len() + self.k.len() + self.v.len()
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        ensure_finite("query bank", &self.q)?;
        ensure_finite("key bank", &self.k)?;
        ensure_finite("value bank", &self.v)
    }

    /// Reorder tokens so that output token `i` is input token `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let w = self.qk_width() * self.heads;
        let vw = self.value_dim * self.heads;
        let gather = |src: &[f64], width: usize| -> Vec<f64> {
            perm.iter()
                .flat_map(|&p| src[p * width..(p + 1) * width].iter().copied())
                .collect()
        };
        Self {
            q: gather(&self.q, w),
            k: gather(&self.k, w),
            v: gather(&self.v, vw),
            ..self.clone()
        }
    }
}

/// Global planar position (meters) and heading.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: Angle,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() {
            return Err(invalid("pose position must be finite"));
        }
        Ok(Self {
            x,
            y,
            heading: Angle::new(heading)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoseSet(pub Vec<Pose>);

impl PoseSet {
    pub fn new(poses: Vec<Pose>) -> Self {
        Self(poses)
    }

    /// All tokens at the origin with heading 0.
    pub fn identical(n: usize) -> Self {
        Self(vec![Pose::default(); n])
    }

    /// Positions uniform in `[-extent, extent)^2`, headings uniform on the circle.
    pub fn random<R: Rng + ?Sized>(n: usize, extent: f64, rng: &mut R) -> Self {
        Self(
            (0..n)
                .map(|_| Pose {
                    x: rng.gen_range(-extent..extent),
                    y: rng.gen_range(-extent..extent),
                    heading: Angle::new(rng.gen_range(0.0..core::f64::consts::TAU))
                        .expect("finite"),
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self(
            self.0
                .iter()
                .map(|p| Pose {
                    x: p.x + dx,
                    y: p.y + dy,
                    heading: p.heading,
                })
                .collect(),
        )
    }

    pub fn with_heading_shift(&self, delta: f64) -> Result<Self> {
        self.0
            .iter()
            .map(|p| {
                Ok(Pose {
                    heading: p.heading.shifted(delta)?,
                    ..*p
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self(perm.iter().map(|&p| self.0[p]).collect())
    }

    pub(crate) fn check(&self, tokens: usize) -> Result<()> {
        ensure_len("pose count", tokens, self.0.len())?;
        if self.0.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(invalid("pose positions must be finite"));
        }
        Ok(())
    }
}

/// Encoding regime without its parameters, as named on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VariantKind {
    Plain,
    Rpe,
    Rope,
    DropeHeadByHead,
    DropeIntraHead,
}

impl VariantKind {
    pub const ALL: [VariantKind; 5] = [
        VariantKind::Plain,
        VariantKind::Rpe,
        VariantKind::Rope,
        VariantKind::DropeHeadByHead,
        VariantKind::DropeIntraHead,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::Plain => "plain",
            VariantKind::Rpe => "rpe",
            VariantKind::Rope => "rope",
            VariantKind::DropeHeadByHead => "drope-hbh",
            VariantKind::DropeIntraHead => "drope-ih",
        }
    }

    pub fn is_rotary(self) -> bool {
        matches!(
            self,
            VariantKind::Rope | VariantKind::DropeHeadByHead | VariantKind::DropeIntraHead
        )
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariantKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(alloc::format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodingVariant {
    Plain,
    Rpe,
    Rope,
    DropeHeadByHead,
    /// Widths (in scalars) of the position and heading sub-vectors of each
    /// head; they must be even and sum to the QK width.
    DropeIntraHead {
        pos_width: usize,
        angle_width: usize,
    },
}

impl EncodingVariant {
    pub fn kind(self) -> VariantKind {
        match self {
            EncodingVariant::Plain => VariantKind::Plain,
            EncodingVariant::Rpe => VariantKind::Rpe,
            EncodingVariant::Rope => VariantKind::Rope,
            EncodingVariant::DropeHeadByHead => VariantKind::DropeHeadByHead,
            EncodingVariant::DropeIntraHead { .. } => VariantKind::DropeIntraHead,
        }
    }

    /// The intra-head split closest to half and half that keeps both parts
    /// even: `(pairs, pairs)` for even `pairs`, otherwise `(pairs + 1, pairs - 1)`.
    pub fn intra_head_balanced(pairs: usize) -> Self {
        let pos_width = if pairs.is_multiple_of(2) {
            pairs
        } else {
            pairs + 1
        };
        EncodingVariant::DropeIntraHead {
            pos_width,
            angle_width: 2 * pairs - pos_width,
        }
    }

    pub fn from_kind(kind: VariantKind, pairs: usize) -> Self {
        match kind {
            VariantKind::Plain => EncodingVariant::Plain,
            VariantKind::Rpe => EncodingVariant::Rpe,
            VariantKind::Rope => EncodingVariant::Rope,
            VariantKind::DropeHeadByHead => EncodingVariant::DropeHeadByHead,
            VariantKind::DropeIntraHead => Self::intra_head_balanced(pairs),
        }
    }

    pub fn validate(self, heads: usize, pairs: usize) -> Result<()> {
        match self {
            EncodingVariant::DropeHeadByHead if heads < 2 => {
                Err(config("head-by-head integration needs at least two heads"))
            }
            EncodingVariant::DropeIntraHead {
                pos_width,
                angle_width,
            } => {
                if pos_width % 2 != 0 || angle_width % 2 != 0 {
                    Err(config("intra-head split widths must be even"))
                } else if pos_width + angle_width != 2 * pairs {
                    Err(config(alloc::format!(
                        "intra-head split {pos_width}+{angle_width} does not cover QK width {}",
                        2 * pairs
                    )))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Per-head outputs before the head merge; merged rows are the same buffer
/// read as `tokens x (heads * value_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub tokens: usize,
    pub key_tokens: usize,
    pub heads: usize,
    pub value_dim: usize,
    pub values: Vec<f64>,
    /// `tokens x heads x key_tokens`, only when requested.
    pub weights: Option<Vec<f64>>,
}

impl AttentionOutput {
    pub fn head(&self, token: usize, head: usize) -> &[f64] {
        let at = (token * self.heads + head) * self.value_dim;
        &self.values[at..at + self.value_dim]
    }

    pub fn merged(&self) -> &[f64] {
        &self.values
    }

    pub fn merged_row(&self, token: usize) -> &[f64] {
        let w = self.heads * self.value_dim;
        &self.values[token * w..(token + 1) * w]
    }

    pub fn weight_row(&self, token: usize, head: usize) -> Option<&[f64]> {
        self.weights.as_ref().map(|w| {
            let at = (token * self.heads + head) * self.key_tokens;
            &w[at..at + self.key_tokens]
        })
    }
}
