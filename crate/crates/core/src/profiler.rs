//! Exact scalar and FLOP accounting for the attention variants.
//!
//! Width convention: `pairs` is the number of 2D rotary pairs per head, so
//! the QK width is `w = 2 * pairs`. The input ledger is then
//! `N * H * (2w + d_v)` for the Q, K and V banks, which is the familiar
//! `N * H * (2 d_k + d_v)` with `d_k` read as the QK width. RPE adds
//! `N^2 * H * (w + d_v)` for the per-pair `K_ij` and `V_ij`.
//!
//! FLOP convention: one multiply, one add, one compare or one transcendental
//! (sin, cos, exp, tanh) each count as one FLOP.
//!
//! | component       | count                                             |
//! |-----------------|---------------------------------------------------|
//! | scores          | `2 * N * M * H * w`                               |
//! | weighted sum    | `2 * N * M * H * d_v`                             |
//! | rotary embed    | `6 * (N + M) * H * pairs` (4 mul + 2 add a pair)  |
//! | RPE encoders    | `N * M * H * (mlp_k + mlp_v + w + d_v)`           |
//!
//! with `mlp(in, hidden, out) = 2*in*hidden + hidden + 2*hidden*out`, input
//! width 3 and the trailing `w + d_v` being the `K_j + Dk` / `V_j + Dv` adds.
//! Softmax arithmetic is not counted.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::attention::{
    EncodingVariant, Engine, MemoryLedger, PoseSet, QkvSet, RpeEncoders, VariantKind,
    RPE_DESCRIPTOR_DIM, RPE_HIDDEN,
};
use crate::error::{invalid, Error, Result};
use crate::rng::seeded;

pub const WIDTH_CONVENTION: &str =
    "pairs = 2D rotary pairs per head; qk_width = 2*pairs; qkv = N*H*(2*qk_width + d_v); rpe pairwise = N^2*H*(qk_width + d_v)";
pub const FLOP_CONVENTION: &str =
    "1 FLOP = one multiply, add, compare or transcendental; scores 2*N*M*H*qk_width; weighted sum 2*N*M*H*d_v; rotary 6*(N+M)*H*pairs; rpe N*M*H*(mlp_k + mlp_v + qk_width + d_v), mlp = 2*3*hidden + hidden + 2*hidden*out; softmax not counted";

/// Whether rotary variants copy Q and K before rotating them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedMode {
    Materialized,
    InPlace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryReport {
    pub variant: VariantKind,
    pub tokens: u64,
    pub heads: u64,
    pub pairs: u64,
    pub value_dim: u64,
    pub qk_width: u64,
    pub qkv_scalars: u64,
    pub pairwise_scalars: u64,
    /// Extra scalars for rotated Q and K when they are materialized.
    pub embedded_scalars: u64,
    /// Inputs plus mandated intermediates with in-place rotation.
    pub total_scalars: u64,
    pub total_scalars_materialized: u64,
    pub bytes_f32: u64,
    pub bytes_f64: u64,
}

impl MemoryReport {
    /// Exact `pairwise / qkv` as a reduced-free fraction `(num, den)`.
    pub fn pairwise_ratio(&self) -> (u64, u64) {
        (self.pairwise_scalars, self.qkv_scalars)
    }
}

fn positive(what: &str, v: usize) -> Result<u64> {
    if v == 0 {
        Err(invalid(format!("{what} must be positive")))
    } else {
        Ok(v as u64)
    }
}

/// Multiplies with overflow turned into [`Error::Range`].
fn mul(factors: &[u64]) -> Result<u64> {
    factors.iter().try_fold(1u64, |acc, f| {
        acc.checked_mul(*f)
            .ok_or_else(|| Error::Range(String::from("scalar count overflows u64")))
    })
}

fn add(terms: &[u64]) -> Result<u64> {
    terms.iter().try_fold(0u64, |acc, t| {
        acc.checked_add(*t)
            .ok_or_else(|| Error::Range(String::from("scalar count overflows u64")))
    })
}

/// Shape of one attention call as seen by the ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CallShape {
    pub queries: usize,
    pub keys: usize,
    pub heads: usize,
    pub pairs: usize,
    pub value_dim: usize,
}

impl CallShape {
    pub fn self_attention(tokens: usize, heads: usize, pairs: usize, value_dim: usize) -> Self {
        Self {
            queries: tokens,
            keys: tokens,
            heads,
            pairs,
            value_dim,
        }
    }
}

/// Closed-form ledger of what an engine call allocates.
///
/// Activations are the output block, one score row, the retained weights
/// when requested, and the RPE encoder hidden scratch.
pub fn predicted_ledger(
    variant: VariantKind,
    shape: CallShape,
    mode: EmbedMode,
    keep_weights: bool,
    rpe_hidden: usize,
) -> Result<MemoryLedger> {
    let n = positive("token count", shape.queries)?;
    let m = positive("key count", shape.keys)?;
    let h = positive("head count", shape.heads)?;
    EncodingVariant::from_kind(variant, shape.pairs).validate(shape.heads, shape.pairs)?;
    let w = 2 * positive("pair count", shape.pairs)?;
    let dv = positive("value width", shape.value_dim)?;

    let inputs = add(&[mul(&[n, h, w])?, mul(&[m, h, w])?, mul(&[m, h, dv])?])?;
    let pairwise = if variant == VariantKind::Rpe {
        mul(&[n, m, h, add(&[w, dv])?])?
    } else {
        0
    };
    let embedded = if variant.is_rotary() && mode == EmbedMode::Materialized {
        add(&[mul(&[n, h, w])?, mul(&[m, h, w])?])?
    } else {
        0
    };
    let mut activations = add(&[mul(&[n, h, dv])?, m])?;
    if keep_weights {
        activations = add(&[activations, mul(&[n, h, m])?])?;
    }
    if variant == VariantKind::Rpe {
        activations = add(&[activations, rpe_hidden as u64])?;
    }
    Ok(MemoryLedger {
        inputs,
        pairwise,
        embedded,
        activations,
    })
}

/// Closed-form input ledger for self-attention over `tokens` tokens.
pub fn count_input_memory(
    variant: VariantKind,
    tokens: usize,
    heads: usize,
    pairs: usize,
    value_dim: usize,
) -> Result<MemoryReport> {
    let shape = CallShape::self_attention(tokens, heads, pairs, value_dim);
    let in_place = predicted_ledger(variant, shape, EmbedMode::InPlace, false, RPE_HIDDEN)?;
    let copied = predicted_ledger(variant, shape, EmbedMode::Materialized, false, RPE_HIDDEN)?;
    let total = in_place.input_total();
    Ok(MemoryReport {
        variant,
        tokens: tokens as u64,
        heads: heads as u64,
        pairs: pairs as u64,
        value_dim: value_dim as u64,
        qk_width: 2 * pairs as u64,
        qkv_scalars: in_place.inputs,
        pairwise_scalars: in_place.pairwise,
        embedded_scalars: copied.embedded,
        total_scalars: total,
        total_scalars_materialized: copied.input_total(),
        bytes_f32: mul(&[total, 4])?,
        bytes_f64: mul(&[total, 8])?,
    })
}

/// Run the engine on seeded data and return what it actually allocated.
pub fn measure_ledger(
    variant: VariantKind,
    shape: CallShape,
    mode: EmbedMode,
    keep_weights: bool,
    seed: u64,
) -> Result<MemoryLedger> {
    let mut rng = seeded(seed);
    let CallShape {
        queries,
        keys,
        heads,
        pairs,
        value_dim,
    } = shape;
    let encoders = RpeEncoders::zeros(heads, pairs, value_dim);
    let mut engine = Engine::new(EncodingVariant::from_kind(variant, pairs)).with_rpe(&encoders);
    engine.keep_weights = keep_weights;
    let mut ledger = MemoryLedger::default();
    let query_set = QkvSet::random(queries, heads, pairs, value_dim, &mut rng)?;
    let query_poses = PoseSet::random(queries, 50.0, &mut rng);
    if queries == keys && mode == EmbedMode::InPlace {
        let mut owned = query_set;
        engine.self_attention_in_place(&mut owned, &query_poses, &mut ledger)?;
    } else if queries == keys {
        engine.self_attention_traced(&query_set, &query_poses, &mut ledger)?;
    } else {
        if mode == EmbedMode::InPlace {
            return Err(invalid(
                "in-place rotation is only defined for self-attention",
            ));
        }
        let kv = QkvSet::random(keys, heads, pairs, value_dim, &mut rng)?;
        let key_poses = PoseSet::random(keys, 50.0, &mut rng);
        engine.cross_attention_traced(&query_set, &kv, &query_poses, &key_poses, &mut ledger)?;
    }
    Ok(ledger)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopReport {
    pub variant: VariantKind,
    pub queries: u64,
    pub keys: u64,
    pub heads: u64,
    pub pairs: u64,
    pub value_dim: u64,
    pub encoder_hidden: u64,
    pub flops_scores: u64,
    pub flops_weighted_sum: u64,
    pub flops_embedding: u64,
    pub flops_rpe_encoders: u64,
    pub total: u64,
}

/// FLOPs of one two-layer encoder application.
pub fn encoder_flops(input: u64, hidden: u64, output: u64) -> Result<u64> {
    add(&[
        mul(&[2, input, hidden])?,
        hidden,
        mul(&[2, hidden, output])?,
    ])
}

pub fn count_flops(
    variant: VariantKind,
    tokens: usize,
    key_tokens: usize,
    heads: usize,
    pairs: usize,
    value_dim: usize,
) -> Result<FlopReport> {
    count_flops_with_hidden(
        variant, tokens, key_tokens, heads, pairs, value_dim, RPE_HIDDEN,
    )
}

pub fn count_flops_with_hidden(
    variant: VariantKind,
    tokens: usize,
    key_tokens: usize,
    heads: usize,
    pairs: usize,
    value_dim: usize,
    hidden: usize,
) -> Result<FlopReport> {
    let n = positive("token count", tokens)?;
    let m = positive("key count", key_tokens)?;
    let h = positive("head count", heads)?;
    let p = positive("pair count", pairs)?;
    EncodingVariant::from_kind(variant, pairs).validate(heads, pairs)?;
    let dv = positive("value width", value_dim)?;
    let hid = hidden as u64;
    let w = 2 * p;

    let scores = mul(&[2, n, m, h, w])?;
    let weighted = mul(&[2, n, m, h, dv])?;
    let embedding = if variant.is_rotary() {
        mul(&[6, add(&[n, m])?, h, p])?
    } else {
        0
    };
    let encoders = if variant == VariantKind::Rpe {
        let per_pair = add(&[
            encoder_flops(RPE_DESCRIPTOR_DIM as u64, hid, w)?,
            encoder_flops(RPE_DESCRIPTOR_DIM as u64, hid, dv)?,
            w,
            dv,
        ])?;
        mul(&[n, m, h, per_pair])?
    } else {
        0
    };
    Ok(FlopReport {
        variant,
        queries: n,
        keys: m,
        heads: h,
        pairs: p,
        value_dim: dv,
        encoder_hidden: hid,
        flops_scores: scores,
        flops_weighted_sum: weighted,
        flops_embedding: embedding,
        flops_rpe_encoders: encoders,
        total: add(&[scores, weighted, embedding, encoders])?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SweepConfig {
    pub tokens: usize,
    pub heads: usize,
    pub pairs: usize,
    pub value_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepRow {
    pub config: SweepConfig,
    pub memory: MemoryReport,
    pub flops: FlopReport,
}

/// One row per `(config, variant)`, configs outermost.
pub fn sweep(configs: &[SweepConfig], variants: &[VariantKind]) -> Result<Vec<SweepRow>> {
    if configs.is_empty() || variants.is_empty() {
        return Err(invalid("sweep needs at least one config and one variant"));
    }
    let mut rows = Vec::with_capacity(configs.len() * variants.len());
    for c in configs {
        for &v in variants {
            rows.push(SweepRow {
                config: *c,
                memory: count_input_memory(v, c.tokens, c.heads, c.pairs, c.value_dim)?,
                flops: count_flops(v, c.tokens, c.tokens, c.heads, c.pairs, c.value_dim)?,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendCheck {
    pub name: &'static str,
    /// Number of comparisons the check made; zero means it did not apply.
    pub comparisons: usize,
    pub passed: bool,
    pub detail: String,
}

fn find(rows: &[SweepRow], c: &SweepConfig, v: VariantKind) -> Option<SweepRow> {
    rows.iter()
        .find(|r| r.config == *c && r.memory.variant == v)
        .copied()
}

/// Series of configs that differ only in one axis, sorted along it.
fn series<K: Ord + Copy>(
    rows: &[SweepRow],
    key: impl Fn(&SweepConfig) -> K,
    axis: impl Fn(&SweepConfig) -> usize,
) -> Vec<Vec<SweepConfig>> {
    let mut configs: Vec<SweepConfig> = rows.iter().map(|r| r.config).collect();
    configs.sort_by_key(|c| (key(c), axis(c)));
    configs.dedup();
    let mut out: Vec<Vec<SweepConfig>> = Vec::new();
    for c in configs {
        match out.last_mut() {
            Some(group) if key(&group[0]) == key(&c) => group.push(c),
            _ => out.push(alloc::vec![c]),
        }
    }
    out
}

/// Trend checks over a sweep table. Checks whose variants are missing from
/// the table report zero comparisons and pass vacuously.
pub fn trend_checks(rows: &[SweepRow]) -> Vec<TrendCheck> {
    let mut checks = Vec::new();

    // RPE pairwise memory is exactly quadratic in N.
    let mut cmp = 0;
    let mut ok = true;
    let mut detail = String::new();
    for group in series(rows, |c| (c.heads, c.pairs, c.value_dim), |c| c.tokens) {
        for w in group.windows(2) {
            if let (Some(a), Some(b)) = (
                find(rows, &w[0], VariantKind::Rpe),
                find(rows, &w[1], VariantKind::Rpe),
            ) {
                cmp += 1;
                let (na, nb) = (a.memory.tokens, b.memory.tokens);
                if a.memory.pairwise_scalars * nb * nb != b.memory.pairwise_scalars * na * na {
                    ok = false;
                    detail = format!("N {na} -> {nb} broke quadratic scaling");
                }
            }
        }
    }
    checks.push(TrendCheck {
        name: "rpe_pairwise_quadratic_in_tokens",
        comparisons: cmp,
        passed: ok,
        detail,
    });

    // pairwise / qkv = N (w + d_v) / (2w + d_v)
    let mut cmp = 0;
    let mut ok = true;
    let mut detail = String::new();
    for r in rows.iter().filter(|r| r.memory.variant == VariantKind::Rpe) {
        cmp += 1;
        let m = r.memory;
        let lhs = m.pairwise_scalars * (2 * m.qk_width + m.value_dim);
        let rhs = m.tokens * (m.qk_width + m.value_dim) * m.qkv_scalars;
        if lhs != rhs {
            ok = false;
            detail = format!("ratio mismatch at {:?}", r.config);
        }
    }
    checks.push(TrendCheck {
        name: "rpe_ratio_linear_in_tokens",
        comparisons: cmp,
        passed: ok,
        detail,
    });

    let mut cmp = 0;
    let mut ok = true;
    let mut detail = String::new();
    for r in rows
        .iter()
        .filter(|r| r.memory.variant == VariantKind::DropeHeadByHead)
    {
        if let Some(p) = find(rows, &r.config, VariantKind::Plain) {
            cmp += 1;
            if p.memory.total_scalars != r.memory.total_scalars {
                ok = false;
                detail = format!("memory differs at {:?}", r.config);
            }
        }
    }
    checks.push(TrendCheck {
        name: "drope_memory_equals_plain_in_place",
        comparisons: cmp,
        passed: ok,
        detail,
    });

    let mut cmp = 0;
    let mut ok = true;
    let mut detail = String::new();
    for group in series(rows, |c| (c.tokens, c.heads, c.value_dim), |c| c.pairs) {
        let ratios: Vec<(usize, f64)> = group
            .iter()
            .filter_map(|c| {
                let r = find(rows, c, VariantKind::Rpe)?;
                let d = find(rows, c, VariantKind::DropeHeadByHead)?;
                Some((c.pairs, r.flops.total as f64 / d.flops.total as f64))
            })
            .collect();
        for w in ratios.windows(2) {
            cmp += 1;
            if w[1].1 < w[0].1 {
                ok = false;
                detail = format!(
                    "ratio fell from {:.4} (pairs {}) to {:.4} (pairs {})",
                    w[0].1, w[0].0, w[1].1, w[1].0
                );
            }
        }
    }
    checks.push(TrendCheck {
        name: "rpe_flop_ratio_non_decreasing_in_pairs",
        comparisons: cmp,
        passed: ok,
        detail,
    });

    checks
}
