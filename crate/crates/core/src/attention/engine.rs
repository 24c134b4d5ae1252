use alloc::borrow::Cow;
use alloc::vec;
use alloc::vec::Vec;

use super::{
    relative_descriptor, AttentionOutput, EncodingVariant, PoseSet, QkvSet, RpeEncoders,
    RPE_DESCRIPTOR_DIM,
};
use crate::error::{config, Error, Result};
use crate::rotary::{dot, planar_in_place, RotaryConfig};

/// What an allocation made by an engine is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryCategory {
    /// The Q, K and V banks handed to the engine.
    Inputs,
    /// Per-pair `K_ij` / `V_ij` tensors (RPE only).
    Pairwise,
    /// Rotated copies of Q and K.
    Embedded,
    /// Outputs, score rows, retained weights and encoder scratch.
    Activations,
}

/// Scalar counts recorded by an engine run, one bucket per category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MemoryLedger {
    pub inputs: u64,
    pub pairwise: u64,
    pub embedded: u64,
    pub activations: u64,
}

impl MemoryLedger {
    pub fn record(&mut self, category: MemoryCategory, scalars: usize) {
        let slot = match category {
            MemoryCategory::Inputs => &mut self.inputs,
            MemoryCategory::Pairwise => &mut self.pairwise,
            MemoryCategory::Embedded => &mut self.embedded,
            MemoryCategory::Activations => &mut self.activations,
        };
        *slot += scalars as u64;
    }

    /// Inputs plus mandated intermediates.
    pub fn input_total(&self) -> u64 {
        self.inputs + self.pairwise + self.embedded
    }

    pub fn full_total(&self) -> u64 {
        self.input_total() + self.activations
    }
}

fn alloc_tracked(ledger: &mut MemoryLedger, category: MemoryCategory, len: usize) -> Vec<f64> {
    ledger.record(category, len);
    vec![0.0; len]
}

#[derive(Debug, Clone, Copy)]
pub(super) struct Dims {
    pub(super) queries: usize,
    pub(super) keys: usize,
    pub(super) heads: usize,
    pub(super) pairs: usize,
    pub(super) value_dim: usize,
}

impl Dims {
    pub(super) fn width(&self) -> usize {
        2 * self.pairs
    }
}

/// A configured attention regime.
///
/// Self-attention is cross-attention where both sides come from the same
/// token set; every entry point funnels into the same score and weighted-sum
/// loops so results agree bit for bit across them.
#[derive(Debug, Clone, Copy)]
pub struct Engine<'a> {
    pub variant: EncodingVariant,
    pub rotary: RotaryConfig,
    pub rpe: Option<&'a RpeEncoders>,
    pub keep_weights: bool,
    /// Query `i` only sees keys `0..=i`.
    pub causal: bool,
}

impl<'a> Engine<'a> {
    pub fn new(variant: EncodingVariant) -> Self {
        Self {
            variant,
            rotary: RotaryConfig::default(),
            rpe: None,
            keep_weights: false,
            causal: false,
        }
    }

    pub fn with_rotary(mut self, rotary: RotaryConfig) -> Self {
        self.rotary = rotary;
        self
    }

    pub fn with_rpe(mut self, encoders: &'a RpeEncoders) -> Self {
        self.rpe = Some(encoders);
        self
    }

    pub fn keep_weights(mut self) -> Self {
        self.keep_weights = true;
        self
    }

    pub fn causal(mut self) -> Self {
        self.causal = true;
        self
    }

    pub fn self_attention(&self, qkv: &QkvSet, poses: &PoseSet) -> Result<AttentionOutput> {
        self.self_attention_traced(qkv, poses, &mut MemoryLedger::default())
    }

    /// Like [`Engine::self_attention`], recording every buffer it allocates.
    /// Rotary variants materialize rotated copies of Q and K.
    pub fn self_attention_traced(
        &self,
        qkv: &QkvSet,
        poses: &PoseSet,
        ledger: &mut MemoryLedger,
    ) -> Result<AttentionOutput> {
        self.cross_attention_traced(qkv, qkv, poses, poses, ledger)
    }

    /// Rotates `qkv.q` and `qkv.k` in place instead of copying them. The
    /// banks hold the embedded vectors afterwards.
    pub fn self_attention_in_place(
        &self,
        qkv: &mut QkvSet,
        poses: &PoseSet,
        ledger: &mut MemoryLedger,
    ) -> Result<AttentionOutput> {
        let dims = self.prepare(qkv, qkv, poses, poses)?;
        ledger.record(MemoryCategory::Inputs, qkv.scalar_count());
        if self.variant == EncodingVariant::Rpe {
            return self.attend_rpe(qkv, qkv, poses, poses, dims, ledger);
        }
        if self.variant.kind().is_rotary() {
            let (t, h, p) = (qkv.tokens(), qkv.heads(), qkv.pairs());
            self.embed(&mut qkv.q, t, h, p, poses, 1.0);
            self.embed(&mut qkv.k, t, h, p, poses, 1.0);
        }
        self.attend(&qkv.q, &qkv.k, &qkv.v, dims, ledger)
    }

    pub fn cross_attention(
        &self,
        queries: &QkvSet,
        keysvals: &QkvSet,
        query_poses: &PoseSet,
        key_poses: &PoseSet,
    ) -> Result<AttentionOutput> {
        self.cross_attention_traced(
            queries,
            keysvals,
            query_poses,
            key_poses,
            &mut MemoryLedger::default(),
        )
    }

    /// Queries come from `queries.q`, keys and values from `keysvals`.
    pub fn cross_attention_traced(
        &self,
        queries: &QkvSet,
        keysvals: &QkvSet,
        query_poses: &PoseSet,
        key_poses: &PoseSet,
        ledger: &mut MemoryLedger,
    ) -> Result<AttentionOutput> {
        let dims = self.prepare(queries, keysvals, query_poses, key_poses)?;
        ledger.record(
            MemoryCategory::Inputs,
            queries.q.len() + keysvals.k.len() + keysvals.v.len(),
        );
        if self.variant == EncodingVariant::Rpe {
            return self.attend_rpe(queries, keysvals, query_poses, key_poses, dims, ledger);
        }
        let q_hat = self.embedded(&queries.q, dims.queries, dims, query_poses, ledger);
        let k_hat = self.embedded(&keysvals.k, dims.keys, dims, key_poses, ledger);
        self.attend(&q_hat, &k_hat, &keysvals.v, dims, ledger)
    }

    pub(super) fn prepare(
        &self,
        queries: &QkvSet,
        keysvals: &QkvSet,
        query_poses: &PoseSet,
        key_poses: &PoseSet,
    ) -> Result<Dims> {
        if queries.qk_width() != keysvals.qk_width() {
            return Err(Error::Dimension {
                what: "query/key width",
                expected: queries.qk_width(),
                found: keysvals.qk_width(),
            });
        }
        if queries.heads() != keysvals.heads() {
            return Err(Error::Dimension {
                what: "head count",
                expected: queries.heads(),
                found: keysvals.heads(),
            });
        }
        queries.check_finite()?;
        keysvals.check_finite()?;
        query_poses.check(queries.tokens())?;
        key_poses.check(keysvals.tokens())?;
        self.variant.validate(queries.heads(), queries.pairs())?;
        if self.causal && queries.tokens() != keysvals.tokens() {
            return Err(config("causal masking needs equal query and key counts"));
        }
        if self.variant == EncodingVariant::Rpe {
            self.rpe
                .ok_or_else(|| config("RPE variant needs encoders"))?
                .check(queries.heads(), queries.pairs(), keysvals.value_dim())?;
        }
        Ok(Dims {
            queries: queries.tokens(),
            keys: keysvals.tokens(),
            heads: queries.heads(),
            pairs: queries.pairs(),
            value_dim: keysvals.value_dim(),
        })
    }

    fn embedded<'b>(
        &self,
        bank: &'b [f64],
        tokens: usize,
        dims: Dims,
        poses: &PoseSet,
        ledger: &mut MemoryLedger,
    ) -> Cow<'b, [f64]> {
        if !self.variant.kind().is_rotary() {
            return Cow::Borrowed(bank);
        }
        ledger.record(MemoryCategory::Embedded, bank.len());
        let mut out = bank.to_vec();
        self.embed(&mut out, tokens, dims.heads, dims.pairs, poses, 1.0);
        Cow::Owned(out)
    }

    /// Apply the variant's rotation to every vector of a Q or K bank.
    /// `sign = -1.0` applies the inverse (transpose) rotation.
    pub(crate) fn embed(
        &self,
        bank: &mut [f64],
        tokens: usize,
        heads: usize,
        pairs: usize,
        poses: &PoseSet,
        sign: f64,
    ) {
        let width = 2 * pairs;
        let full = self.rotary.position_schedule(pairs);
        let split = match self.variant {
            EncodingVariant::DropeIntraHead { pos_width, .. } => pos_width,
            _ => width,
        };
        let partial = self.rotary.position_schedule(split / 2);
        for i in 0..tokens {
            let pose = poses.0[i];
            let pos = (pose.x, pose.y);
            let heading = pose.heading.radians();
            for h in 0..heads {
                let at = (i * heads + h) * width;
                let vec = &mut bank[at..at + width];
                match self.variant {
                    EncodingVariant::Plain | EncodingVariant::Rpe => {}
                    EncodingVariant::Rope => planar_in_place(vec, pos, full.freqs(), sign),
                    EncodingVariant::DropeHeadByHead => {
                        if h % 2 == 0 {
                            planar_in_place(vec, pos, full.freqs(), sign);
                        } else {
                            self.rotary.heading_in_place(vec, heading, sign);
                        }
                    }
                    EncodingVariant::DropeIntraHead { pos_width, .. } => {
                        let (p, a) = vec.split_at_mut(pos_width);
                        if !p.is_empty() {
                            planar_in_place(p, pos, partial.freqs(), sign);
                        }
                        if !a.is_empty() {
                            self.rotary.heading_in_place(a, heading, sign);
                        }
                    }
                }
            }
        }
    }

    pub(super) fn key_limit(&self, query: usize, keys: usize) -> usize {
        if self.causal {
            query + 1
        } else {
            keys
        }
    }

    fn attend(
        &self,
        q: &[f64],
        k: &[f64],
        v: &[f64],
        dims: Dims,
        ledger: &mut MemoryLedger,
    ) -> Result<AttentionOutput> {
        let Dims {
            queries,
            keys,
            heads,
            value_dim,
            ..
        } = dims;
        let width = dims.width();
        let scale = score_scale(dims.pairs);
        let mut out = alloc_tracked(
            ledger,
            MemoryCategory::Activations,
            queries * heads * value_dim,
        );
        let mut scores = alloc_tracked(ledger, MemoryCategory::Activations, keys);
        let mut weights = self
            .keep_weights
            .then(|| alloc_tracked(ledger, MemoryCategory::Activations, queries * heads * keys));

        for i in 0..queries {
            let limit = self.key_limit(i, keys);
            for h in 0..heads {
                let qi = &q[(i * heads + h) * width..][..width];
                for (j, s) in scores[..limit].iter_mut().enumerate() {
                    *s = dot(qi, &k[(j * heads + h) * width..][..width]) * scale;
                }
                softmax_in_place(&mut scores[..limit]);
                let o = &mut out[(i * heads + h) * value_dim..][..value_dim];
                for (j, a) in scores[..limit].iter().enumerate() {
                    axpy(o, *a, &v[(j * heads + h) * value_dim..][..value_dim]);
                }
                if let Some(w) = weights.as_mut() {
                    w[(i * heads + h) * keys..][..limit].copy_from_slice(&scores[..limit]);
                }
            }
        }
        Ok(AttentionOutput {
            tokens: queries,
            key_tokens: keys,
            heads,
            value_dim,
            values: out,
            weights,
        })
    }

    fn attend_rpe(
        &self,
        queries: &QkvSet,
        keysvals: &QkvSet,
        query_poses: &PoseSet,
        key_poses: &PoseSet,
        dims: Dims,
        ledger: &mut MemoryLedger,
    ) -> Result<AttentionOutput> {
        let enc = self.rpe.expect("checked in prepare");
        let Dims {
            queries: nq,
            keys: nk,
            heads,
            value_dim,
            ..
        } = dims;
        let width = dims.width();
        let scale = score_scale(dims.pairs);

        // K_ij and V_ij are materialized for every (i, j, h).
        let mut k_pair = alloc_tracked(ledger, MemoryCategory::Pairwise, nq * nk * heads * width);
        let mut v_pair = alloc_tracked(
            ledger,
            MemoryCategory::Pairwise,
            nq * nk * heads * value_dim,
        );
        let mut hidden = alloc_tracked(ledger, MemoryCategory::Activations, enc.hidden());
        for i in 0..nq {
            for j in 0..nk {
                let rel = relative_descriptor(&query_poses.0[i], &key_poses.0[j]);
                debug_assert_eq!(rel.len(), RPE_DESCRIPTOR_DIM);
                for h in 0..heads {
                    let slot = ((i * nk + j) * heads + h) * width;
                    let kd = &mut k_pair[slot..slot + width];
                    enc.key[h].forward_into(&rel, &mut hidden, kd);
                    for (d, k) in kd.iter_mut().zip(keysvals.key(j, h)) {
                        *d += k;
                    }
                    let slot = ((i * nk + j) * heads + h) * value_dim;
                    let vd = &mut v_pair[slot..slot + value_dim];
                    enc.value[h].forward_into(&rel, &mut hidden, vd);
                    for (d, v) in vd.iter_mut().zip(keysvals.value(j, h)) {
                        *d += v;
                    }
                }
            }
        }

        let mut out = alloc_tracked(ledger, MemoryCategory::Activations, nq * heads * value_dim);
        let mut scores = alloc_tracked(ledger, MemoryCategory::Activations, nk);
        let mut weights = self
            .keep_weights
            .then(|| alloc_tracked(ledger, MemoryCategory::Activations, nq * heads * nk));
        for i in 0..nq {
            let limit = self.key_limit(i, nk);
            for h in 0..heads {
                let qi = queries.query(i, h);
                for (j, s) in scores[..limit].iter_mut().enumerate() {
                    let slot = ((i * nk + j) * heads + h) * width;
                    *s = dot(qi, &k_pair[slot..slot + width]) * scale;
                }
                softmax_in_place(&mut scores[..limit]);
                let o = &mut out[(i * heads + h) * value_dim..][..value_dim];
                for (j, a) in scores[..limit].iter().enumerate() {
                    let slot = ((i * nk + j) * heads + h) * value_dim;
                    axpy(o, *a, &v_pair[slot..slot + value_dim]);
                }
                if let Some(w) = weights.as_mut() {
                    w[(i * heads + h) * nk..][..limit].copy_from_slice(&scores[..limit]);
                }
            }
        }
        Ok(AttentionOutput {
            tokens: nq,
            key_tokens: nk,
            heads,
            value_dim,
            values: out,
            weights,
        })
    }
}

pub(crate) fn score_scale(pairs: usize) -> f64 {
    1.0 / libm::sqrt(pairs as f64)
}

#[inline]
fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// Row-max subtracted softmax.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in row.iter_mut() {
        *s = libm::exp(*s - max);
        sum += *s;
    }
    for s in row.iter_mut() {
        *s /= sum;
    }
}

/// Softmax over consecutive rows of width `width`.
pub fn softmax_rows(values: &mut [f64], width: usize) {
    if width == 0 {
        return;
    }
    for row in values.chunks_mut(width) {
        softmax_in_place(row);
    }
}

pub fn mhsa_plain(qkv: &QkvSet) -> Result<AttentionOutput> {
    Engine::new(EncodingVariant::Plain).self_attention(qkv, &PoseSet::identical(qkv.tokens()))
}

pub fn mhsa_rpe(qkv: &QkvSet, poses: &PoseSet, encoders: &RpeEncoders) -> Result<AttentionOutput> {
    Engine::new(EncodingVariant::Rpe)
        .with_rpe(encoders)
        .self_attention(qkv, poses)
}

pub fn mhsa_rope(qkv: &QkvSet, poses: &PoseSet, rotary: &RotaryConfig) -> Result<AttentionOutput> {
    Engine::new(EncodingVariant::Rope)
        .with_rotary(*rotary)
        .self_attention(qkv, poses)
}

pub fn mhsa_drope_hbh(
    qkv: &QkvSet,
    poses: &PoseSet,
    rotary: &RotaryConfig,
) -> Result<AttentionOutput> {
    Engine::new(EncodingVariant::DropeHeadByHead)
        .with_rotary(*rotary)
        .self_attention(qkv, poses)
}

pub fn mhsa_drope_ih(
    qkv: &QkvSet,
    poses: &PoseSet,
    rotary: &RotaryConfig,
    split: (usize, usize),
) -> Result<AttentionOutput> {
    Engine::new(EncodingVariant::DropeIntraHead {
        pos_width: split.0,
        angle_width: split.1,
    })
    .with_rotary(*rotary)
    .self_attention(qkv, poses)
}

/// Cross attention: queries from the first set, keys and values from the second.
pub fn mhca(
    queries: &QkvSet,
    keysvals: &QkvSet,
    query_poses: &PoseSet,
    key_poses: &PoseSet,
    variant: EncodingVariant,
    rotary: &RotaryConfig,
    encoders: Option<&RpeEncoders>,
) -> Result<AttentionOutput> {
    let mut engine = Engine::new(variant).with_rotary(*rotary);
    engine.rpe = encoders;
    engine.cross_attention(queries, keysvals, query_poses, key_poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::Pose;
    use crate::rng::seeded;

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn uniform_scores_average_values() {
        let qkv = QkvSet::new(
            2,
            1,
            1,
            2,
            vec![1.0, 0.0, 1.0, 0.0],
            vec![0.5, 0.5, 0.5, 0.5],
            vec![1.0, 2.0, 3.0, 6.0],
        )
        .unwrap();
        let out = Engine::new(EncodingVariant::Plain)
            .keep_weights()
            .self_attention(&qkv, &PoseSet::identical(2))
            .unwrap();
        assert_eq!(out.weight_row(0, 0).unwrap(), &[0.5, 0.5]);
        assert_eq!(out.head(1, 0), &[2.0, 4.0]);
    }

    #[test]
    fn single_token_returns_its_value() {
        let mut rng = seeded(1);
        let qkv = QkvSet::random(1, 2, 3, 4, &mut rng).unwrap();
        let out = mhsa_plain(&qkv).unwrap();
        assert_eq!(out.merged(), &qkv.v[..]);
    }

    #[test]
    fn non_finite_inputs_rejected() {
        let mut rng = seeded(2);
        let mut qkv = QkvSet::random(3, 1, 2, 2, &mut rng).unwrap();
        qkv.k[4] = f64::NAN;
        assert!(matches!(mhsa_plain(&qkv), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn head_by_head_needs_two_heads() {
        let mut rng = seeded(3);
        let qkv = QkvSet::random(3, 1, 2, 2, &mut rng).unwrap();
        let err = mhsa_drope_hbh(&qkv, &PoseSet::identical(3), &RotaryConfig::default());
        assert!(matches!(err, Err(Error::Configuration(_))));
    }

    #[test]
    fn intra_head_split_validated() {
        let mut rng = seeded(4);
        let qkv = QkvSet::random(3, 1, 2, 2, &mut rng).unwrap();
        let poses = PoseSet::identical(3);
        let rot = RotaryConfig::default();
        assert!(mhsa_drope_ih(&qkv, &poses, &rot, (1, 3)).is_err());
        assert!(mhsa_drope_ih(&qkv, &poses, &rot, (2, 4)).is_err());
        assert!(mhsa_drope_ih(&qkv, &poses, &rot, (2, 2)).is_ok());
    }

    #[test]
    fn zero_encoders_reproduce_plain_bitwise() {
        let mut rng = seeded(5);
        let qkv = QkvSet::random(4, 2, 3, 5, &mut rng).unwrap();
        let poses = PoseSet::random(4, 30.0, &mut rng);
        let enc = RpeEncoders::zeros(2, 3, 5);
        let rpe = mhsa_rpe(&qkv, &poses, &enc).unwrap();
        let plain = mhsa_plain(&qkv).unwrap();
        assert_eq!(rpe.values, plain.values);
    }

    #[test]
    fn identical_poses_rpe_is_plain_with_shifted_banks() {
        let mut rng = seeded(6);
        let (n, h, p, dv) = (4, 2, 2, 3);
        let qkv = QkvSet::random(n, h, p, dv, &mut rng).unwrap();
        let enc = RpeEncoders::random(h, p, dv, &mut rng);
        let pose = Pose::new(3.0, -7.0, 1.2).unwrap();
        let poses = PoseSet::new(vec![pose; n]);
        let rpe = mhsa_rpe(&qkv, &poses, &enc).unwrap();

        let zero = [0.0; 3];
        let mut shifted = qkv.clone();
        for i in 0..n {
            for head in 0..h {
                let dk = enc.key[head].forward(&zero);
                let dvv = enc.value[head].forward(&zero);
                let at = (i * h + head) * 2 * p;
                for (c, d) in dk.iter().enumerate() {
                    shifted.k[at + c] += d;
                }
                let at = (i * h + head) * dv;
                for (c, d) in dvv.iter().enumerate() {
                    shifted.v[at + c] += d;
                }
            }
        }
        let plain = mhsa_plain(&shifted).unwrap();
        assert!(max_abs_diff(&rpe.values, &plain.values) < 1e-12);
    }

    #[test]
    fn rpe_without_encoders_is_config_error() {
        let mut rng = seeded(7);
        let qkv = QkvSet::random(2, 1, 1, 1, &mut rng).unwrap();
        let err = Engine::new(EncodingVariant::Rpe).self_attention(&qkv, &PoseSet::identical(2));
        assert!(matches!(err, Err(Error::Configuration(_))));
    }

    #[test]
    fn rotary_variants_at_identical_poses_equal_plain() {
        let mut rng = seeded(8);
        let qkv = QkvSet::random(5, 2, 4, 3, &mut rng).unwrap();
        let poses = PoseSet::new(vec![Pose::new(12.0, -4.5, 2.2).unwrap(); 5]);
        let rot = RotaryConfig::default();
        let plain = mhsa_plain(&qkv).unwrap();
        for out in [
            mhsa_rope(&qkv, &poses, &rot).unwrap(),
            mhsa_drope_hbh(&qkv, &poses, &rot).unwrap(),
            mhsa_drope_ih(&qkv, &poses, &rot, (4, 4)).unwrap(),
        ] {
            assert!(max_abs_diff(&out.values, &plain.values) < 1e-12);
        }
    }

    #[test]
    fn empty_angle_part_matches_rope() {
        let mut rng = seeded(9);
        let qkv = QkvSet::random(4, 2, 3, 2, &mut rng).unwrap();
        let poses = PoseSet::random(4, 20.0, &mut rng);
        let rot = RotaryConfig::default();
        let ih = mhsa_drope_ih(&qkv, &poses, &rot, (6, 0)).unwrap();
        let rope = mhsa_rope(&qkv, &poses, &rot).unwrap();
        assert!(max_abs_diff(&ih.values, &rope.values) < 1e-12);
    }

    #[test]
    fn in_place_matches_materialized() {
        let mut rng = seeded(10);
        let qkv = QkvSet::random(4, 2, 2, 3, &mut rng).unwrap();
        let poses = PoseSet::random(4, 20.0, &mut rng);
        let engine = Engine::new(EncodingVariant::DropeHeadByHead);
        let mut a = MemoryLedger::default();
        let mut b = MemoryLedger::default();
        let copy = engine.self_attention_traced(&qkv, &poses, &mut a).unwrap();
        let mut owned = qkv.clone();
        let inplace = engine
            .self_attention_in_place(&mut owned, &poses, &mut b)
            .unwrap();
        assert_eq!(copy.values, inplace.values);
        assert_eq!(a.embedded, 2 * 4 * 2 * 4);
        assert_eq!(b.embedded, 0);
        assert_eq!(a.inputs, b.inputs);
    }

    #[test]
    fn cross_with_single_key_returns_that_value() {
        let mut rng = seeded(11);
        let q = QkvSet::random(3, 2, 2, 3, &mut rng).unwrap();
        let kv = QkvSet::random(1, 2, 2, 3, &mut rng).unwrap();
        let pq = PoseSet::random(3, 10.0, &mut rng);
        let pk = PoseSet::random(1, 10.0, &mut rng);
        let out = mhca(
            &q,
            &kv,
            &pq,
            &pk,
            EncodingVariant::DropeHeadByHead,
            &RotaryConfig::default(),
            None,
        )
        .unwrap();
        for i in 0..3 {
            for h in 0..2 {
                assert!(max_abs_diff(out.head(i, h), kv.value(0, h)) < 1e-15);
            }
        }
    }

    #[test]
    fn cross_width_mismatch_is_dimension_error() {
        let mut rng = seeded(12);
        let q = QkvSet::random(3, 2, 2, 3, &mut rng).unwrap();
        let kv = QkvSet::random(2, 2, 3, 3, &mut rng).unwrap();
        let err = mhca(
            &q,
            &kv,
            &PoseSet::identical(3),
            &PoseSet::identical(2),
            EncodingVariant::Plain,
            &RotaryConfig::default(),
            None,
        );
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    #[test]
    fn causal_rows_ignore_future_keys() {
        let mut rng = seeded(13);
        let qkv = QkvSet::random(4, 1, 2, 2, &mut rng).unwrap();
        let poses = PoseSet::identical(4);
        let engine = Engine::new(EncodingVariant::Plain).causal().keep_weights();
        let base = engine.self_attention(&qkv, &poses).unwrap();
        let mut perturbed = qkv.clone();
        for x in perturbed.k[3 * 4..]
            .iter_mut()
            .chain(perturbed.v[3 * 2..].iter_mut())
        {
            *x += 1.0;
        }
        let moved = engine.self_attention(&perturbed, &poses).unwrap();
        assert_eq!(base.values[..3 * 2], moved.values[..3 * 2]);
        assert_eq!(base.weight_row(0, 0).unwrap()[1..], [0.0, 0.0, 0.0]);
    }

    #[test]
    fn heading_shift_by_full_turn_is_invisible() {
        let mut rng = seeded(14);
        let qkv = QkvSet::random(5, 2, 3, 2, &mut rng).unwrap();
        let poses = PoseSet::random(5, 10.0, &mut rng);
        let rot = RotaryConfig::default();
        let a = mhsa_drope_hbh(&qkv, &poses, &rot).unwrap();
        let turned = poses.with_heading_shift(core::f64::consts::TAU).unwrap();
        let b = mhsa_drope_hbh(&qkv, &turned, &rot).unwrap();
        assert!(max_abs_diff(&a.values, &b.values) < 1e-12);
    }
}
