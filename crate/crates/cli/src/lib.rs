//! `drope`: verification suite, cost sweeps and demo rollouts over
//! [`drope_core`].
//!
//! Exit codes: 0 when every check passes, 1 on a property violation, 2 on a
//! usage or config error and 3 on I/O or any other runtime failure.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use drope_core::attention::VariantKind;

pub mod commands;
pub mod config;
pub mod report;
pub mod scene_file;

use config::{FaultInject, PolicyKind, RunConfig, Variant};

pub const THREADS_ENV: &str = "DROPE_ATTN_THREADS";

/// Marks an error as caused by bad flags, config or scene parameters.
#[derive(Debug)]
pub struct UsageError(pub anyhow::Error);

impl UsageError {
    pub fn wrap(err: anyhow::Error) -> anyhow::Error {
        anyhow::Error::new(UsageError(err))
    }

    pub fn msg(msg: impl fmt::Display) -> anyhow::Error {
        Self::wrap(anyhow::anyhow!("{msg}"))
    }
}

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for UsageError {}

/// Result of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Violation,
}

pub const EXIT_PASS: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub fn exit_code(result: &anyhow::Result<Outcome>) -> i32 {
    match result {
        Ok(Outcome::Pass) => EXIT_PASS,
        Ok(Outcome::Violation) => EXIT_VIOLATION,
        Err(e) if is_usage(e) => EXIT_USAGE,
        Err(_) => EXIT_RUNTIME,
    }
}

pub fn is_usage(err: &anyhow::Error) -> bool {
    err.chain().any(|e| e.is::<UsageError>())
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse::<VariantKind>()
        .map(Variant)
        .map_err(|e| e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "drope",
    version,
    about = "Rotary attention verification, cost sweeps and rollouts"
)]
pub struct Cli {
    /// JSON run config; flags override its fields.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// plain, rpe, rope, drope-hbh or drope-ih.
    #[arg(long, global = true, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    /// Output directory (default `drope-out/<command>`).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Trials per property for `verify`.
    #[arg(long, global = true, value_name = "N")]
    pub trials: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub fault_inject: Option<FaultInject>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the invariance suite.
    Verify,
    /// Memory and FLOP sweep over a config grid.
    Profile {
        #[arg(long, value_delimiter = ',')]
        tokens: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        heads: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        pairs: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        value_dim: Vec<usize>,
    },
    /// Closed-loop rollout of a scene file (or a synthetic scene).
    Rollout {
        #[arg(long, value_name = "PATH")]
        scene: Option<PathBuf>,
        #[arg(long, value_enum)]
        policy: Option<PolicyKind>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Write a synthetic scene file.
    SynthScene {
        #[arg(long, default_value_t = 4)]
        agents: usize,
        #[arg(long, default_value_t = 4)]
        history: usize,
        #[arg(long, default_value_t = 16)]
        future: usize,
        /// Road curvature in 1/m; 0 gives a straight road.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        curvature: f64,
        #[arg(long)]
        no_stop_sign: bool,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Verify => "verify",
            Command::Profile { .. } => "profile",
            Command::Rollout { .. } => "rollout",
            Command::SynthScene { .. } => "synth-scene",
        }
    }
}

/// Config file plus flag overrides.
pub fn resolve_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    if let Some(trials) = cli.trials {
        cfg.verify.trials = trials;
    }
    if let Some(fault) = cli.fault_inject {
        cfg.fault_inject = Some(fault);
    }
    match &cli.command {
        Command::Profile {
            tokens,
            heads,
            pairs,
            value_dim,
        } => {
            let p = &mut cfg.profile;
            for (dst, src) in [
                (&mut p.tokens, tokens),
                (&mut p.heads, heads),
                (&mut p.pairs, pairs),
                (&mut p.value_dim, value_dim),
            ] {
                if !src.is_empty() {
                    *dst = src.clone();
                }
            }
            if let Some(v) = cli.variant {
                p.variants = vec![v];
            }
        }
        Command::Rollout {
            scene,
            policy,
            horizon,
            samples,
        } => {
            let r = &mut cfg.rollout;
            if let Some(v) = cli.variant {
                r.variant = v;
            }
            if let Some(s) = scene {
                r.scene = Some(s.clone());
            }
            if let Some(p) = policy {
                r.policy = *p;
            }
            if let Some(h) = horizon {
                r.horizon = *h;
            }
            if let Some(k) = samples {
                r.samples = *k;
            }
        }
        Command::Verify | Command::SynthScene { .. } => {
            if cli.variant.is_some() {
                log::warn!("--variant has no effect on {}", cli.command.name());
            }
        }
    }
    Ok(cfg)
}

pub fn output_dir(cfg: &RunConfig, command: &str) -> PathBuf {
    cfg.out
        .clone()
        .unwrap_or_else(|| Path::new("drope-out").join(command))
}

/// Caps the worker pool from `DROPE_ATTN_THREADS`. Only the first call in a
/// process takes effect.
pub fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        UsageError::msg(format!(
            "{THREADS_ENV} must be a positive integer, got {raw:?}"
        ))
    })?;
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
    {
        log::debug!("worker pool already configured: {e}");
    }
    Ok(())
}

pub fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    configure_threads()?;
    let cfg = resolve_config(cli)?;
    let out = output_dir(&cfg, cli.command.name());
    match &cli.command {
        Command::Verify => commands::verify(&cfg, &out),
        Command::Profile { .. } => commands::profile(&cfg, &out),
        Command::Rollout { .. } => commands::rollout(&cfg, &out),
        Command::SynthScene {
            agents,
            history,
            future,
            curvature,
            no_stop_sign,
        } => commands::synth_scene(
            &cfg,
            &out,
            &commands::SynthArgs {
                agents: *agents,
                history: *history,
                future: *future,
                curvature: *curvature,
                stop_sign: !no_stop_sign,
            },
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("drope").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_defaults() {
        let cli = parse(&[
            "--seed",
            "7",
            "--trials",
            "3",
            "profile",
            "--pairs",
            "8,16",
            "--variant",
            "rope",
        ]);
        let cfg = resolve_config(&cli).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.verify.trials, 3);
        assert_eq!(cfg.profile.pairs, vec![8, 16]);
        assert_eq!(cfg.profile.variants, vec![Variant(VariantKind::Rope)]);
        assert_eq!(cfg.profile.tokens, vec![64]);
    }

    #[test]
    fn bad_variant_is_a_parse_error() {
        let err = Cli::try_parse_from(["drope", "--variant", "alibi", "verify"]).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_USAGE);
    }

    #[test]
    fn usage_errors_survive_context() {
        use anyhow::Context;
        let e: anyhow::Result<()> = Err(UsageError::msg("bad"));
        let e = e.context("outer").unwrap_err();
        assert!(is_usage(&e));
        assert_eq!(exit_code(&Err(e)), EXIT_USAGE);
        assert_eq!(exit_code(&Err(anyhow::anyhow!("io"))), EXIT_RUNTIME);
        assert_eq!(exit_code(&Ok(Outcome::Violation)), EXIT_VIOLATION);
    }

    #[test]
    fn default_output_dir_is_per_command() {
        let cfg = RunConfig::default();
        assert_eq!(output_dir(&cfg, "verify"), Path::new("drope-out/verify"));
    }
}
