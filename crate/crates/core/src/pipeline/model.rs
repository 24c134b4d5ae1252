//! Interaction blocks, the temporal layer and the action head.
//!
//! Each attention sublayer is `y = x + W_o attn(W_q x, W_k c, W_v c)` followed
//! by `z = y + ffn(y)`, where `c` is the context (`x` itself for
//! self-attention). There is no normalization layer.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use super::kinematics::ActionGrid;
use super::tokens::{SceneTokens, TokenEncoder};
use crate::attention::{
    softmax_rows, EncodingVariant, Engine, PoseSet, QkvSet, RpeEncoders, VariantKind,
};
use crate::error::{config, ensure_finite, ensure_len, Result};
use crate::nn::{Linear, Mlp};
use crate::rng::seeded;
use crate::rotary::RotaryConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub pairs: usize,
    pub value_dim: usize,
    pub blocks: usize,
    pub ffn_hidden: usize,
    pub variant: VariantKind,
    pub rotary: RotaryConfig,
    pub grid: ActionGrid,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            pairs: 8,
            value_dim: 16,
            blocks: 2,
            ffn_hidden: 128,
            variant: VariantKind::DropeHeadByHead,
            rotary: RotaryConfig::default(),
            grid: ActionGrid::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || !self.d_model.is_multiple_of(2) {
            return Err(config("d_model must be positive and even"));
        }
        if self.heads == 0 || self.pairs == 0 || self.value_dim == 0 || self.ffn_hidden == 0 {
            return Err(config(
                "heads, pairs, value width and FFN width must be positive",
            ));
        }
        self.grid.validate()?;
        EncodingVariant::from_kind(self.variant, self.pairs).validate(self.heads, self.pairs)
    }

    fn encoding(&self) -> EncodingVariant {
        EncodingVariant::from_kind(self.variant, self.pairs)
    }
}

/// One attention sublayer plus its feed-forward sublayer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ffn: Mlp,
    pub rpe: Option<RpeEncoders>,
}

impl AttentionBlock {
    pub fn random<R: Rng + ?Sized>(cfg: &ModelConfig, with_rpe: bool, rng: &mut R) -> Self {
        let (d, h) = (cfg.d_model, cfg.heads);
        Self {
            wq: Linear::random(d, h * 2 * cfg.pairs, rng),
            wk: Linear::random(d, h * 2 * cfg.pairs, rng),
            wv: Linear::random(d, h * cfg.value_dim, rng),
            wo: Linear::random(h * cfg.value_dim, d, rng),
            ffn: Mlp::random(d, cfg.ffn_hidden, d, rng),
            rpe: with_rpe.then(|| RpeEncoders::random(h, cfg.pairs, cfg.value_dim, rng)),
        }
    }

    /// Zero output projection and zero FFN: the block maps tokens to themselves.
    pub fn identity(cfg: &ModelConfig, with_rpe: bool) -> Self {
        let (d, h) = (cfg.d_model, cfg.heads);
        let qk = h * 2 * cfg.pairs;
        let mut wq = Linear::zeros(d, qk);
        let mut wk = Linear::zeros(d, qk);
        for i in 0..d.min(qk) {
            wq.weight[i * d + i] = 1.0;
            wk.weight[i * d + i] = 1.0;
        }
        let mut wv = Linear::zeros(d, h * cfg.value_dim);
        for i in 0..d.min(h * cfg.value_dim) {
            wv.weight[i * d + i] = 1.0;
        }
        Self {
            wq,
            wk,
            wv,
            wo: Linear::zeros(h * cfg.value_dim, d),
            ffn: Mlp::zeros(d, cfg.ffn_hidden, d),
            rpe: with_rpe.then(|| RpeEncoders::zeros(h, cfg.pairs, cfg.value_dim)),
        }
    }

    /// `x` has `nq` rows and attends over `context` with `nk` rows.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        cfg: &ModelConfig,
        variant: EncodingVariant,
        causal: bool,
        x: &[f64],
        x_poses: &PoseSet,
        context: &[f64],
        context_poses: &PoseSet,
    ) -> Result<Vec<f64>> {
        let d = cfg.d_model;
        ensure_len("block input", 0, x.len() % d)?;
        ensure_len("block context", 0, context.len() % d)?;
        let (nq, nk) = (x.len() / d, context.len() / d);
        let (h, p, dv) = (cfg.heads, cfg.pairs, cfg.value_dim);

        let q = self.wq.forward_rows(x, nq);
        let queries = QkvSet::new(nq, h, p, dv, q.clone(), q, vec![0.0; nq * h * dv])?;
        let keysvals = QkvSet::new(
            nk,
            h,
            p,
            dv,
            vec![0.0; nk * h * 2 * p],
            self.wk.forward_rows(context, nk),
            self.wv.forward_rows(context, nk),
        )?;
        let mut engine = Engine::new(variant).with_rotary(cfg.rotary);
        if let Some(rpe) = &self.rpe {
            engine = engine.with_rpe(rpe);
        }
        engine.causal = causal;
        let attn = engine.cross_attention(&queries, &keysvals, x_poses, context_poses)?;

        let mut y = self.wo.forward_rows(attn.merged(), nq);
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += xi;
        }
        let f = self.ffn.forward_rows(&y, nq);
        for (yi, fi) in y.iter_mut().zip(&f) {
            *yi += fi;
        }
        Ok(y)
    }
}

/// Agent self-attention, map self-attention and agent-to-map cross-attention.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionBlock {
    pub agent_self: AttentionBlock,
    pub map_self: AttentionBlock,
    pub agent_map: AttentionBlock,
}

/// Logits over the action grid, one row per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub rows: usize,
    pub classes: usize,
    pub logits: Vec<f64>,
}

impl ActionDistribution {
    pub fn logits_row(&self, row: usize) -> &[f64] {
        &self.logits[row * self.classes..(row + 1) * self.classes]
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let mut p = self.logits.clone();
        softmax_rows(&mut p, self.classes);
        p
    }

    /// First maximal logit of a row.
    pub fn argmax(&self, row: usize) -> usize {
        let mut best = 0;
        for (i, v) in self.logits_row(row).iter().enumerate() {
            if *v > self.logits_row(row)[best] {
                best = i;
            }
        }
        best
    }
}

/// Standard sinusoidal encoding of a timestep index.
pub fn temporal_encoding(t: usize, d_model: usize) -> Vec<f64> {
    let mut pe = vec![0.0; d_model];
    for i in 0..d_model / 2 {
        let freq = libm::pow(10_000.0, -(2.0 * i as f64) / d_model as f64);
        pe[2 * i] = libm::sin(t as f64 * freq);
        pe[2 * i + 1] = libm::cos(t as f64 * freq);
    }
    pe
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryModel {
    pub config: ModelConfig,
    pub encoder: TokenEncoder,
    pub blocks: Vec<InteractionBlock>,
    pub temporal: AttentionBlock,
    pub decoder: Mlp,
}

impl TrajectoryModel {
    pub fn random(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed);
        let rpe = config.variant == VariantKind::Rpe;
        let encoder = TokenEncoder::random(config.d_model, &mut rng)?;
        let blocks = (0..config.blocks)
            .map(|_| InteractionBlock {
                agent_self: AttentionBlock::random(&config, rpe, &mut rng),
                map_self: AttentionBlock::random(&config, rpe, &mut rng),
                agent_map: AttentionBlock::random(&config, rpe, &mut rng),
            })
            .collect();
        let plain = ModelConfig {
            variant: VariantKind::Plain,
            ..config
        };
        let temporal = AttentionBlock::random(&plain, false, &mut rng);
        let decoder = Mlp::random(config.d_model, config.d_model, config.grid.len(), &mut rng);
        Ok(Self {
            config,
            encoder,
            blocks,
            temporal,
            decoder,
        })
    }

    /// Runs the interaction blocks; returns updated agent and map tokens.
    pub fn interaction_step(&self, tokens: &SceneTokens) -> Result<(Vec<f64>, Vec<f64>)> {
        let cfg = &self.config;
        let d = cfg.d_model;
        ensure_len("token width", d, tokens.d_model)?;
        let variant = cfg.encoding();
        let row = tokens.agents * d;
        let mut agents = tokens.agent.clone();
        let mut map = tokens.map.clone();
        for block in &self.blocks {
            for t in 0..tokens.steps {
                let poses = &tokens.agent_poses[t];
                let x = &agents[t * row..(t + 1) * row];
                let y = block
                    .agent_self
                    .forward(cfg, variant, false, x, poses, x, poses)?;
                agents[t * row..(t + 1) * row].copy_from_slice(&y);
            }
            if tokens.segments == 0 {
                continue;
            }
            let mp = &tokens.map_poses;
            map = block
                .map_self
                .forward(cfg, variant, false, &map, mp, &map, mp)?;
            for t in 0..tokens.steps {
                let poses = &tokens.agent_poses[t];
                let x = &agents[t * row..(t + 1) * row];
                let y = block
                    .agent_map
                    .forward(cfg, variant, false, x, poses, &map, mp)?;
                agents[t * row..(t + 1) * row].copy_from_slice(&y);
            }
        }
        Ok((agents, map))
    }

    /// Causal plain attention over each agent's timeline, temporal encoding
    /// added first. Layout is the same as [`SceneTokens::agent`].
    pub fn temporal_step(&self, agents: &[f64], steps: usize, count: usize) -> Result<Vec<f64>> {
        let d = self.config.d_model;
        ensure_len("temporal tokens", steps * count * d, agents.len())?;
        let poses = PoseSet::identical(steps);
        let mut out = vec![0.0; agents.len()];
        let mut seq = vec![0.0; steps * d];
        for a in 0..count {
            for t in 0..steps {
                let pe = temporal_encoding(t, d);
                let src = &agents[(t * count + a) * d..][..d];
                for ((s, x), e) in seq[t * d..(t + 1) * d].iter_mut().zip(src).zip(&pe) {
                    *s = x + e;
                }
            }
            let y = self.temporal.forward(
                &self.config,
                EncodingVariant::Plain,
                true,
                &seq,
                &poses,
                &seq,
                &poses,
            )?;
            for t in 0..steps {
                out[(t * count + a) * d..][..d].copy_from_slice(&y[t * d..(t + 1) * d]);
            }
        }
        Ok(out)
    }

    pub fn decode_actions(&self, tokens: &[f64]) -> Result<ActionDistribution> {
        let d = self.config.d_model;
        ensure_len("decoder input", 0, tokens.len() % d)?;
        ensure_finite("decoder input", tokens)?;
        let rows = tokens.len() / d;
        Ok(ActionDistribution {
            rows,
            classes: self.decoder.out_dim(),
            logits: self.decoder.forward_rows(tokens, rows),
        })
    }

    /// Action distribution at the last step of the window, one row per agent.
    pub fn forward(&self, tokens: &SceneTokens) -> Result<ActionDistribution> {
        let (agents, _) = self.interaction_step(tokens)?;
        let timeline = self.temporal_step(&agents, tokens.steps, tokens.agents)?;
        let last = (tokens.steps - 1) * tokens.agents * self.config.d_model;
        self.decode_actions(&timeline[last..])
    }
}
