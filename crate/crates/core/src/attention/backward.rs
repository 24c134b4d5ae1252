//! Reverse-mode gradients of the merged attention output.
//!
//! With `s_ij = <Q^_i, K^_j> / sqrt(pairs)`, `a = softmax(s)` and
//! `O_i = sum_j a_ij V_j`, an upstream gradient `G` gives
//!
//! ```text
//! dV_j  = sum_i a_ij G_i
//! da_ij = <G_i, V_j>
//! ds_ij = a_ij (da_ij - sum_k a_ik da_ik)
//! dQ^_i = sum_j ds_ij K^_j / sqrt(pairs)      dK^_j = sum_i ds_ij Q^_i / sqrt(pairs)
//! ```
//!
//! The rotary embeddings are orthogonal and linear in the vector, so
//! `dQ = B^T dQ^` is the inverse rotation applied to `dQ^`.

use alloc::vec;
use alloc::vec::Vec;

use super::engine::score_scale;
use super::{AttentionOutput, EncodingVariant, Engine, PoseSet, QkvSet};
use crate::error::{config, ensure_finite, ensure_len, Error, Result};
use crate::rotary::dot;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGradients {
    /// Same layout as the query bank.
    pub dq: Vec<f64>,
    /// Same layout as the key bank.
    pub dk: Vec<f64>,
    pub dv: Vec<f64>,
}

impl Engine<'_> {
    /// Gradients of `sum(upstream * O_merged)` with respect to the banks.
    /// `forward` must come from the same engine with weights retained.
    pub fn self_attention_backward(
        &self,
        qkv: &QkvSet,
        poses: &PoseSet,
        forward: &AttentionOutput,
        upstream: &[f64],
    ) -> Result<AttentionGradients> {
        self.cross_attention_backward(qkv, qkv, poses, poses, forward, upstream)
    }

    /// `dq` refers to `queries.q`, `dk` and `dv` to `keysvals`.
    pub fn cross_attention_backward(
        &self,
        queries: &QkvSet,
        keysvals: &QkvSet,
        query_poses: &PoseSet,
        key_poses: &PoseSet,
        forward: &AttentionOutput,
        upstream: &[f64],
    ) -> Result<AttentionGradients> {
        if self.variant == EncodingVariant::Rpe {
            return Err(Error::NotImplemented("backward pass for the RPE variant"));
        }
        let dims = self.prepare(queries, keysvals, query_poses, key_poses)?;
        let weights = forward
            .weights
            .as_ref()
            .ok_or_else(|| config("backward needs a forward pass with retained weights"))?;
        ensure_len("forward output rows", dims.queries, forward.tokens)?;
        ensure_len("forward output keys", dims.keys, forward.key_tokens)?;
        ensure_len(
            "upstream gradient",
            dims.queries * dims.heads * dims.value_dim,
            upstream.len(),
        )?;
        ensure_finite("upstream gradient", upstream)?;

        let (heads, width, value_dim) = (dims.heads, dims.width(), dims.value_dim);
        let scale = score_scale(dims.pairs);
        let mut q_hat = queries.q.clone();
        let mut k_hat = keysvals.k.clone();
        self.embed(
            &mut q_hat,
            dims.queries,
            heads,
            dims.pairs,
            query_poses,
            1.0,
        );
        self.embed(&mut k_hat, dims.keys, heads, dims.pairs, key_poses, 1.0);

        let mut dq = vec![0.0; q_hat.len()];
        let mut dk = vec![0.0; k_hat.len()];
        let mut dv = vec![0.0; keysvals.v.len()];
        let mut d_alpha = vec![0.0; dims.keys];
        for i in 0..dims.queries {
            let limit = self.key_limit(i, dims.keys);
            for h in 0..heads {
                let alpha = &weights[(i * heads + h) * dims.keys..][..limit];
                let g = &upstream[(i * heads + h) * value_dim..][..value_dim];
                for (j, da) in d_alpha[..limit].iter_mut().enumerate() {
                    let at = (j * heads + h) * value_dim;
                    *da = dot(g, &keysvals.v[at..at + value_dim]);
                    for (d, gv) in dv[at..at + value_dim].iter_mut().zip(g) {
                        *d += alpha[j] * gv;
                    }
                }
                let mean: f64 = alpha
                    .iter()
                    .zip(&d_alpha[..limit])
                    .map(|(a, d)| a * d)
                    .sum();
                let qi_at = (i * heads + h) * width;
                for j in 0..limit {
                    let ds = alpha[j] * (d_alpha[j] - mean) * scale;
                    let kj_at = (j * heads + h) * width;
                    for c in 0..width {
                        dq[qi_at + c] += ds * k_hat[kj_at + c];
                        dk[kj_at + c] += ds * q_hat[qi_at + c];
                    }
                }
            }
        }
        self.embed(&mut dq, dims.queries, heads, dims.pairs, query_poses, -1.0);
        self.embed(&mut dk, dims.keys, heads, dims.pairs, key_poses, -1.0);
        Ok(AttentionGradients { dq, dk, dv })
    }
}
