use alloc::vec::Vec;
use rand::Rng;

use super::Pose;
use crate::error::{config, Result};
use crate::nn::Mlp;
use crate::rotary::relative_angle;

/// `(dx, dy, dtheta mod 2π)`.
pub const RPE_DESCRIPTOR_DIM: usize = 3;
pub const RPE_HIDDEN: usize = 32;

/// Relative descriptor of token `i` seen from token `j`.
pub fn relative_descriptor(i: &Pose, j: &Pose) -> [f64; RPE_DESCRIPTOR_DIM] {
    [
        i.x - j.x,
        i.y - j.y,
        relative_angle(i.heading, j.heading).radians(),
    ]
}

/// One key encoder and one value encoder per head.
#[derive(Debug, Clone, PartialEq)]
pub struct RpeEncoders {
    pub key: Vec<Mlp>,
    pub value: Vec<Mlp>,
}

impl RpeEncoders {
    pub fn zeros(heads: usize, pairs: usize, value_dim: usize) -> Self {
        Self::zeros_with_hidden(heads, pairs, value_dim, RPE_HIDDEN)
    }

    pub fn zeros_with_hidden(heads: usize, pairs: usize, value_dim: usize, hidden: usize) -> Self {
        Self {
            key: (0..heads)
                .map(|_| Mlp::zeros(RPE_DESCRIPTOR_DIM, hidden, 2 * pairs))
                .collect(),
            value: (0..heads)
                .map(|_| Mlp::zeros(RPE_DESCRIPTOR_DIM, hidden, value_dim))
                .collect(),
        }
    }

    pub fn random<R: Rng + ?Sized>(
        heads: usize,
        pairs: usize,
        value_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            key: (0..heads)
                .map(|_| Mlp::random(RPE_DESCRIPTOR_DIM, RPE_HIDDEN, 2 * pairs, rng))
                .collect(),
            value: (0..heads)
                .map(|_| Mlp::random(RPE_DESCRIPTOR_DIM, RPE_HIDDEN, value_dim, rng))
                .collect(),
        }
    }

    pub fn heads(&self) -> usize {
        self.key.len()
    }

    pub fn hidden(&self) -> usize {
        self.key.first().map_or(0, Mlp::hidden_dim)
    }

    pub(crate) fn check(&self, heads: usize, pairs: usize, value_dim: usize) -> Result<()> {
        let ok = self.key.len() == heads
            && self.value.len() == heads
            && self
                .key
                .iter()
                .all(|m| m.in_dim() == RPE_DESCRIPTOR_DIM && m.out_dim() == 2 * pairs)
            && self
                .value
                .iter()
                .all(|m| m.in_dim() == RPE_DESCRIPTOR_DIM && m.out_dim() == value_dim)
            && self
                .key
                .iter()
                .chain(&self.value)
                .all(|m| m.hidden_dim() == self.hidden());
        if ok {
            Ok(())
        } else {
            Err(config(
                "RPE encoder shapes do not match the attention banks",
            ))
        }
    }
}
