//! Slow scalar reference built from dense rotation matrices and plain loops.
//! Shares no kernels with the library; only the data layouts are common.
#![allow(dead_code, clippy::needless_range_loop)]

use drope_core::attention::{EncodingVariant, Pose, RpeEncoders};
use drope_core::nn::{Linear, Mlp};

pub const BASE: f64 = 10_000.0;

/// Dense block-diagonal rotation with one angle per 2x2 block.
pub fn block_rotation(angles: &[f64]) -> Vec<Vec<f64>> {
    let n = 2 * angles.len();
    let mut m = vec![vec![0.0; n]; n];
    for (l, a) in angles.iter().enumerate() {
        let (s, c) = (a.sin(), a.cos());
        m[2 * l][2 * l] = c;
        m[2 * l][2 * l + 1] = -s;
        m[2 * l + 1][2 * l] = s;
        m[2 * l + 1][2 * l + 1] = c;
    }
    m
}

pub fn matvec(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| {
            let mut acc = 0.0;
            for c in 0..x.len() {
                acc += row[c] * x[c];
            }
            acc
        })
        .collect()
}

/// Angles for a planar position over `pairs` pairs: the first `ceil(pairs/2)`
/// pairs follow x, the rest follow y, each half with `BASE^(-l/half)`.
pub fn planar_angles(pairs: usize, x: f64, y: f64) -> Vec<f64> {
    let half = pairs.div_ceil(2);
    (0..pairs)
        .map(|l| {
            if l < half {
                x * BASE.powf(-(l as f64) / half as f64)
            } else {
                y * BASE.powf(-((l - half) as f64) / half as f64)
            }
        })
        .collect()
}

pub fn head_angles(variant: EncodingVariant, head: usize, pairs: usize, pose: &Pose) -> Vec<f64> {
    let theta = pose.heading.radians();
    match variant {
        EncodingVariant::Plain | EncodingVariant::Rpe => vec![0.0; pairs],
        EncodingVariant::Rope => planar_angles(pairs, pose.x, pose.y),
        EncodingVariant::DropeHeadByHead => {
            if head.is_multiple_of(2) {
                planar_angles(pairs, pose.x, pose.y)
            } else {
                vec![theta; pairs]
            }
        }
        EncodingVariant::DropeIntraHead {
            pos_width,
            angle_width,
        } => {
            let mut a = planar_angles(pos_width / 2, pose.x, pose.y);
            a.extend(std::iter::repeat_n(theta, angle_width / 2));
            a
        }
    }
}

pub fn linear(l: &Linear, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; l.out_dim];
    for o in 0..l.out_dim {
        let mut acc = l.bias[o];
        for i in 0..l.in_dim {
            acc += l.weight[o * l.in_dim + i] * x[i];
        }
        out[o] = acc;
    }
    out
}

pub fn mlp(m: &Mlp, x: &[f64]) -> Vec<f64> {
    let h: Vec<f64> = linear(&m.hidden, x).into_iter().map(f64::tanh).collect();
    linear(&m.output, &h)
}

pub fn wrap(a: f64) -> f64 {
    let t = std::f64::consts::TAU;
    let r = a.rem_euclid(t);
    if r >= t {
        0.0
    } else {
        r
    }
}

/// Attention inputs in the library layout: `(i * heads + h) * width`.
pub struct Banks<'a> {
    pub q: &'a [f64],
    pub k: &'a [f64],
    pub v: &'a [f64],
    pub queries: usize,
    pub keys: usize,
    pub heads: usize,
    pub pairs: usize,
    pub value_dim: usize,
}

pub struct RefOutput {
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn attention(
    variant: EncodingVariant,
    b: &Banks,
    query_poses: &[Pose],
    key_poses: &[Pose],
    rpe: Option<&RpeEncoders>,
    causal: bool,
) -> RefOutput {
    let (h_count, w, dv) = (b.heads, 2 * b.pairs, b.value_dim);
    let scale = 1.0 / (b.pairs as f64).sqrt();
    let mut values = vec![0.0; b.queries * h_count * dv];
    let mut weights = vec![0.0; b.queries * h_count * b.keys];
    for i in 0..b.queries {
        for h in 0..h_count {
            let rq = block_rotation(&head_angles(variant, h, b.pairs, &query_poses[i]));
            let qi = matvec(&rq, &b.q[(i * h_count + h) * w..][..w]);
            let limit = if causal { i + 1 } else { b.keys };
            let mut scores = Vec::new();
            let mut vals = Vec::new();
            for j in 0..limit {
                let rk = block_rotation(&head_angles(variant, h, b.pairs, &key_poses[j]));
                let mut kj = matvec(&rk, &b.k[(j * h_count + h) * w..][..w]);
                let mut vj = b.v[(j * h_count + h) * dv..][..dv].to_vec();
                if let Some(enc) = rpe {
                    let (pi, pj) = (&query_poses[i], &key_poses[j]);
                    let rel = [
                        pi.x - pj.x,
                        pi.y - pj.y,
                        wrap(pi.heading.radians() - pj.heading.radians()),
                    ];
                    for (a, d) in kj.iter_mut().zip(mlp(&enc.key[h], &rel)) {
                        *a += d;
                    }
                    for (a, d) in vj.iter_mut().zip(mlp(&enc.value[h], &rel)) {
                        *a += d;
                    }
                }
                let mut s = 0.0;
                for c in 0..w {
                    s += qi[c] * kj[c];
                }
                scores.push(s * scale);
                vals.push(vj);
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for j in 0..limit {
                let a = exps[j] / z;
                weights[(i * h_count + h) * b.keys + j] = a;
                for c in 0..dv {
                    values[(i * h_count + h) * dv + c] += a * vals[j][c];
                }
            }
        }
    }
    RefOutput { values, weights }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Every variant against the reference on the seeded grid
/// `N <= 5, H <= 2, pairs <= 4, d_v <= 4`. Head-by-head needs two heads and
/// skips `H = 1`. Returns `(cases, max abs error)`.
pub fn oracle_grid(seed: u64) -> (usize, f64) {
    use drope_core::attention::{Engine, PoseSet, QkvSet, VariantKind};
    use drope_core::rng::seeded;

    let mut rng = seeded(seed);
    let mut cases = 0;
    let mut worst: f64 = 0.0;
    for n in 1..=5 {
        for heads in 1..=2 {
            for pairs in 1..=4 {
                for dv in 1..=4 {
                    let qkv = QkvSet::random(n, heads, pairs, dv, &mut rng).unwrap();
                    let poses = PoseSet::random(n, 20.0, &mut rng);
                    let enc = RpeEncoders::random(heads, pairs, dv, &mut rng);
                    for kind in VariantKind::ALL {
                        if kind == VariantKind::DropeHeadByHead && heads < 2 {
                            continue;
                        }
                        let variant = EncodingVariant::from_kind(kind, pairs);
                        let out = Engine::new(variant)
                            .with_rpe(&enc)
                            .keep_weights()
                            .self_attention(&qkv, &poses)
                            .unwrap();
                        let banks = Banks {
                            q: &qkv.q,
                            k: &qkv.k,
                            v: &qkv.v,
                            queries: n,
                            keys: n,
                            heads,
                            pairs,
                            value_dim: dv,
                        };
                        let rpe = (kind == VariantKind::Rpe).then_some(&enc);
                        let r = attention(variant, &banks, &poses.0, &poses.0, rpe, false);
                        worst = worst
                            .max(max_abs_diff(&out.values, &r.values))
                            .max(max_abs_diff(out.weights.as_ref().unwrap(), &r.weights));
                        cases += 1;
                    }
                }
            }
        }
    }
    (cases, worst)
}
