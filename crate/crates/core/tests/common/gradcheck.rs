//! Central finite differences against the analytic backward pass.
#![allow(dead_code, clippy::needless_range_loop)]

use drope_core::attention::{EncodingVariant, Engine, PoseSet, QkvSet, VariantKind};
use drope_core::rng::{seeded, uniform_vec};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor so coordinates with vanishing gradients compare absolutely.
pub const FLOOR: f64 = 1e-6;

pub const VARIANTS: [VariantKind; 4] = [
    VariantKind::Plain,
    VariantKind::Rope,
    VariantKind::DropeHeadByHead,
    VariantKind::DropeIntraHead,
];

fn loss(engine: &Engine, qkv: &QkvSet, poses: &PoseSet, g: &[f64]) -> f64 {
    let out = engine.self_attention(qkv, poses).unwrap();
    out.values.iter().zip(g).map(|(a, b)| a * b).sum()
}

fn bank(s: &mut QkvSet, which: usize) -> &mut Vec<f64> {
    match which {
        0 => &mut s.q,
        1 => &mut s.k,
        _ => &mut s.v,
    }
}

/// Worst relative error over every coordinate of Q, K and V for one seeded
/// config and variant. Returns `(coordinates, worst)`.
pub fn check(seed: u64, kind: VariantKind) -> (usize, f64) {
    let tokens = 1 + (seed % 4) as usize;
    let heads = 2;
    let pairs = 1 + (seed / 4 % 3) as usize;
    let value_dim = 1 + (seed / 12 % 3) as usize;
    let mut rng = seeded(seed);
    let qkv = QkvSet::random(tokens, heads, pairs, value_dim, &mut rng).unwrap();
    let poses = PoseSet::random(tokens, 10.0, &mut rng);
    let upstream = uniform_vec(&mut rng, tokens * heads * value_dim, 1.0);
    let engine = Engine::new(EncodingVariant::from_kind(kind, pairs)).keep_weights();
    let fwd = engine.self_attention(&qkv, &poses).unwrap();
    let grads = engine
        .self_attention_backward(&qkv, &poses, &fwd, &upstream)
        .unwrap();

    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (which, analytic) in [(0, &grads.dq), (1, &grads.dk), (2, &grads.dv)] {
        for c in 0..analytic.len() {
            let mut plus = qkv.clone();
            let mut minus = qkv.clone();
            bank(&mut plus, which)[c] += STEP;
            bank(&mut minus, which)[c] -= STEP;
            let fd = (loss(&engine, &plus, &poses, &upstream)
                - loss(&engine, &minus, &poses, &upstream))
                / (2.0 * STEP);
            let rel = (fd - analytic[c]).abs() / fd.abs().max(analytic[c].abs()).max(FLOOR);
            worst = worst.max(rel);
            count += 1;
        }
    }
    (count, worst)
}
