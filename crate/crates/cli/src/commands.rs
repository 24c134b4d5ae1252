//! Subcommand bodies. Each writes into its own output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use drope_core::attention::{VariantKind, RPE_HIDDEN};
use drope_core::pipeline::{
    exceeds_soft_horizon, rollout as run_rollout, scene_min_ade, synthetic_scene, ModelConfig,
    Policy, RoadShape, Rollout, Scene, SyntheticConfig, TrajectoryModel,
};
use drope_core::profiler::{
    sweep, trend_checks, SweepConfig, SweepRow, FLOP_CONVENTION, WIDTH_CONVENTION,
};
use drope_core::rotary::RotaryConfig;
use drope_core::verify::{run_suite, Comparison, VerifyConfig};
use rayon::prelude::*;

use crate::config::{PolicyKind, RunConfig};
use crate::report::{
    write_json, Conventions, Header, ProfileDocument, RolloutDocument, SweepRecord, TrendRecord,
    VerifyDocument, PROFILE_SCHEMA, ROLLOUT_SCHEMA, SWEEP_HEADER,
};
use crate::scene_file::SceneFile;
use crate::{Outcome, UsageError};

fn usage(e: drope_core::Error) -> anyhow::Error {
    UsageError::wrap(e.into())
}

fn prepare_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))
}

fn rotary(cfg: &RunConfig) -> RotaryConfig {
    match cfg.fault_inject {
        Some(_) => RotaryConfig::default().with_fault(),
        None => RotaryConfig::default(),
    }
}

pub fn verify_config(cfg: &RunConfig) -> anyhow::Result<VerifyConfig> {
    let v = &cfg.verify;
    let vc = VerifyConfig {
        trials: v.trials,
        seed: cfg.seed,
        rotary: rotary(cfg),
        pair_counts: v.pair_counts.clone(),
        counterexample_pairs: v.counterexample_pairs.clone(),
        counterexample_seeds: v.counterexample_seeds,
        engine_trials: v.engine_trials,
    };
    vc.validate().map_err(usage)?;
    Ok(vc)
}

pub fn verify(cfg: &RunConfig, out: &Path) -> anyhow::Result<Outcome> {
    let vc = verify_config(cfg)?;
    let report = run_suite(&vc).map_err(usage)?;
    let doc = VerifyDocument::new(&report);

    let mut table = format!(
        "{:<34} {:>7} {:>12} {:>3} {:>10}  result\n",
        "property", "trials", "observed", "", "threshold"
    );
    for r in &report.results {
        let op = match r.comparison {
            Comparison::Below => "<",
            Comparison::Above => ">",
        };
        let verdict = if r.passed { "pass" } else { "FAIL" };
        let _ = writeln!(
            table,
            "{:<34} {:>7} {:>12.3e} {:>3} {:>10.1e}  {verdict}",
            r.name, r.trials, r.observed, op, r.threshold
        );
    }
    print!("{table}");

    prepare_dir(out)?;
    write_json(&out.join("verify.json"), &doc)?;
    if doc.passed {
        Ok(Outcome::Pass)
    } else {
        for r in report.results.iter().filter(|r| !r.passed) {
            log::error!(
                "{} violated in {} of {} trials",
                r.name,
                r.violations,
                r.trials
            );
        }
        Ok(Outcome::Violation)
    }
}

/// Cartesian product of the profile grid, sorted and deduplicated.
pub fn profile_grid(cfg: &RunConfig) -> anyhow::Result<(Vec<SweepConfig>, Vec<VariantKind>)> {
    let p = &cfg.profile;
    let axes = [
        ("tokens", &p.tokens),
        ("heads", &p.heads),
        ("pairs", &p.pairs),
        ("value_dim", &p.value_dim),
    ];
    for (name, axis) in axes {
        if axis.is_empty() {
            return Err(UsageError::msg(format!(
                "profile grid axis `{name}` is empty"
            )));
        }
        if axis.contains(&0) {
            return Err(UsageError::msg(format!(
                "profile grid axis `{name}` contains 0"
            )));
        }
    }
    if p.variants.is_empty() {
        return Err(UsageError::msg("profile variant list is empty"));
    }
    let mut configs = Vec::new();
    for &tokens in &p.tokens {
        for &heads in &p.heads {
            for &pairs in &p.pairs {
                for &value_dim in &p.value_dim {
                    configs.push(SweepConfig {
                        tokens,
                        heads,
                        pairs,
                        value_dim,
                    });
                }
            }
        }
    }
    configs.sort_unstable();
    configs.dedup();
    let mut variants: Vec<VariantKind> = Vec::new();
    for v in &p.variants {
        if !variants.contains(&v.0) {
            variants.push(v.0);
        }
    }
    Ok((configs, variants))
}

/// Sweep rows in grid order. Head-by-head cells with a single head are
/// skipped since that variant needs a heading head.
pub fn profile_rows(
    configs: &[SweepConfig],
    variants: &[VariantKind],
) -> anyhow::Result<Vec<SweepRow>> {
    let chunks = configs
        .par_iter()
        .map(|c| {
            let usable: Vec<VariantKind> = variants
                .iter()
                .copied()
                .filter(|v| !(*v == VariantKind::DropeHeadByHead && c.heads < 2))
                .collect();
            if usable.len() < variants.len() {
                log::warn!(
                    "skipping drope-hbh at heads={}: it needs at least two heads",
                    c.heads
                );
            }
            if usable.is_empty() {
                return Ok(Vec::new());
            }
            sweep(std::slice::from_ref(c), &usable)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(usage)?;
    let rows: Vec<SweepRow> = chunks.into_iter().flatten().collect();
    if rows.is_empty() {
        return Err(UsageError::msg(
            "no valid (config, variant) cell in the profile grid",
        ));
    }
    Ok(rows)
}

/// Gnuplot data blocks, one per `(tokens, heads, value_dim)`, separated by
/// two blank lines so `index` selects them.
pub fn curve_data(
    rows: &[SweepRow],
    variants: &[VariantKind],
    what: &str,
    value: impl Fn(&SweepRow) -> u64,
) -> String {
    let mut text = format!("# {what} against rotary pairs per head\n");
    let mut groups: Vec<(usize, usize, usize)> = rows
        .iter()
        .map(|r| (r.config.tokens, r.config.heads, r.config.value_dim))
        .collect();
    groups.dedup();
    for (g, &(tokens, heads, value_dim)) in groups.iter().enumerate() {
        if g > 0 {
            text.push_str("\n\n");
        }
        let _ = writeln!(
            text,
            "# tokens={tokens} heads={heads} value_dim={value_dim}"
        );
        text.push_str("# pairs");
        for v in variants {
            let _ = write!(text, " {}", v.name());
        }
        text.push('\n');
        let mut pairs: Vec<usize> = rows
            .iter()
            .filter(|r| {
                (r.config.tokens, r.config.heads, r.config.value_dim) == (tokens, heads, value_dim)
            })
            .map(|r| r.config.pairs)
            .collect();
        pairs.dedup();
        for p in pairs {
            let _ = write!(text, "{p}");
            for v in variants {
                let row = rows.iter().find(|r| {
                    r.memory.variant == *v
                        && r.config
                            == SweepConfig {
                                tokens,
                                heads,
                                pairs: p,
                                value_dim,
                            }
                });
                match row {
                    Some(r) => {
                        let _ = write!(text, " {}", value(r));
                    }
                    None => text.push_str(" NaN"),
                }
            }
            text.push('\n');
        }
    }
    text
}

pub fn profile(cfg: &RunConfig, out: &Path) -> anyhow::Result<Outcome> {
    let (configs, variants) = profile_grid(cfg)?;
    let rows = profile_rows(&configs, &variants)?;
    let checks = trend_checks(&rows);

    prepare_dir(out)?;
    let csv_path = out.join("sweep.csv");
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(&csv_path)
        .with_context(|| format!("writing {}", csv_path.display()))?;
    w.write_record(SWEEP_HEADER)?;
    for r in &rows {
        w.serialize(SweepRecord::from(r))?;
    }
    w.flush()?;

    let doc = ProfileDocument {
        header: Header::new(PROFILE_SCHEMA),
        conventions: Conventions {
            width: WIDTH_CONVENTION,
            flops: FLOP_CONVENTION,
            rpe_encoder_hidden: RPE_HIDDEN,
        },
        rows: rows.iter().map(SweepRecord::from).collect(),
        trend_checks: checks.iter().map(TrendRecord::from).collect(),
    };
    write_json(&out.join("sweep.json"), &doc)?;
    for (file, what, f) in [
        (
            "memory_vs_pairs.dat",
            "in-place scalar count",
            (|r: &SweepRow| r.memory.total_scalars) as fn(&SweepRow) -> u64,
        ),
        ("flops_vs_pairs.dat", "total FLOPs", |r: &SweepRow| {
            r.flops.total
        }),
    ] {
        let path = out.join(file);
        std::fs::write(&path, curve_data(&rows, &variants, what, f))
            .with_context(|| format!("writing {}", path.display()))?;
    }

    println!(
        "{:<10} {:>6} {:>5} {:>6} {:>5} {:>16} {:>16} {:>18}",
        "variant", "tokens", "heads", "pairs", "d_v", "pairwise", "total_scalars", "flops"
    );
    for r in &rows {
        println!(
            "{:<10} {:>6} {:>5} {:>6} {:>5} {:>16} {:>16} {:>18}",
            r.memory.variant.name(),
            r.config.tokens,
            r.config.heads,
            r.config.pairs,
            r.config.value_dim,
            r.memory.pairwise_scalars,
            r.memory.total_scalars,
            r.flops.total
        );
    }
    for c in checks.iter().filter(|c| c.comparisons > 0) {
        if c.passed {
            log::info!("trend {}: {}", c.name, c.detail);
        } else {
            log::warn!("trend {} does not hold: {}", c.name, c.detail);
        }
    }
    Ok(Outcome::Pass)
}

pub fn model_config(cfg: &RunConfig) -> anyhow::Result<ModelConfig> {
    let r = &cfg.rollout;
    let mc = ModelConfig {
        d_model: r.d_model,
        heads: r.heads,
        pairs: r.pairs,
        value_dim: r.value_dim,
        blocks: r.blocks,
        variant: r.variant.0,
        rotary: rotary(cfg),
        ..ModelConfig::default()
    };
    mc.validate().map_err(usage)?;
    Ok(mc)
}

/// Scene from the configured file, or the default synthetic scene for the
/// run seed.
pub fn load_scene(cfg: &RunConfig) -> anyhow::Result<(String, Scene)> {
    match &cfg.rollout.scene {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading scene {}", path.display()))?;
            let file: SceneFile = serde_json::from_str(&text)
                .with_context(|| format!("parsing scene {}", path.display()))
                .map_err(UsageError::wrap)?;
            let scene = file
                .to_scene()
                .with_context(|| format!("invalid scene {}", path.display()))
                .map_err(UsageError::wrap)?;
            Ok((file.scene_id, scene))
        }
        None => {
            let scene = synthetic_scene(&SyntheticConfig {
                seed: cfg.seed,
                ..SyntheticConfig::default()
            })
            .map_err(usage)?;
            Ok((format!("synthetic-{}", cfg.seed), scene))
        }
    }
}

fn policy_name(p: PolicyKind) -> &'static str {
    match p {
        PolicyKind::Greedy => "greedy",
        PolicyKind::Sample => "sample",
        PolicyKind::ConstantVelocity => "constant-velocity",
        PolicyKind::Zero => "zero",
    }
}

fn write_trajectories(path: &Path, scene_id: &str, ids: &[u64], r: &Rollout) -> anyhow::Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["scene_id", "agent_id", "t", "x", "y", "yaw", "v"])?;
    for (a, id) in ids.iter().enumerate() {
        let states = std::iter::once(&r.start[a]).chain(&r.states[a]);
        for (t, s) in states.enumerate() {
            w.serialize((scene_id, id, t, s.x, s.y, s.yaw.radians(), s.v))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn rollout(cfg: &RunConfig, out: &Path) -> anyhow::Result<Outcome> {
    let r = &cfg.rollout;
    if r.horizon == 0 || r.samples == 0 {
        return Err(UsageError::msg(
            "rollout horizon and samples must be positive",
        ));
    }
    let mc = model_config(cfg)?;
    let (scene_id, scene) = load_scene(cfg)?;
    if exceeds_soft_horizon(r.horizon, scene.dt) {
        log::warn!(
            "horizon of {} steps at dt={} exceeds the 8 s closed-loop window; continuing",
            r.horizon,
            scene.dt
        );
    }
    let samples = match r.policy {
        PolicyKind::Sample => r.samples,
        _ => {
            if r.samples > 1 {
                log::warn!("only the sample policy draws more than one rollout; using 1");
            }
            1
        }
    };
    let model = TrajectoryModel::random(mc, cfg.seed).map_err(usage)?;
    let rollouts = (0..samples)
        .into_par_iter()
        .map(|k| {
            let policy = match r.policy {
                PolicyKind::Greedy => Policy::Greedy,
                PolicyKind::Sample => Policy::Sample {
                    seed: cfg.seed.wrapping_add(k as u64),
                },
                PolicyKind::ConstantVelocity => Policy::ConstantVelocity,
                PolicyKind::Zero => Policy::ForcedBin(mc.grid.zero_index()),
            };
            run_rollout(&model, &scene, &policy, r.horizon)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(usage)?;

    let min_ade = if scene.future() >= r.horizon {
        Some(scene_min_ade(&rollouts, &scene).map_err(usage)?)
    } else {
        log::warn!(
            "scene has {} ground-truth steps, fewer than the horizon {}; minADE skipped",
            scene.future(),
            r.horizon
        );
        None
    };

    prepare_dir(out)?;
    let ids: Vec<u64> = match &r.scene {
        Some(path) => SceneFile::read(path)?.agent_ids(),
        None => (0..scene.agents.len() as u64).collect(),
    };
    let mut files = Vec::new();
    for (k, ro) in rollouts.iter().enumerate() {
        let name = if samples == 1 {
            "trajectories.csv".to_string()
        } else {
            format!("trajectories_sample{k}.csv")
        };
        write_trajectories(&out.join(&name), &scene_id, &ids, ro)?;
        files.push(name);
    }
    let doc = RolloutDocument {
        header: Header::new(ROLLOUT_SCHEMA),
        scene_id,
        seed: cfg.seed,
        variant: mc.variant.name(),
        policy: policy_name(r.policy),
        horizon: r.horizon,
        dt: scene.dt,
        samples,
        agents: scene.agents.len(),
        min_ade,
        trajectory_files: files,
    };
    write_json(&out.join("summary.json"), &doc)?;
    match min_ade {
        Some(m) => println!("{}: {} rollout(s), minADE {m:.6} m", doc.scene_id, samples),
        None => println!(
            "{}: {} rollout(s), no ground truth for minADE",
            doc.scene_id, samples
        ),
    }
    Ok(Outcome::Pass)
}

#[derive(Debug, Clone, Copy)]
pub struct SynthArgs {
    pub agents: usize,
    pub history: usize,
    pub future: usize,
    pub curvature: f64,
    pub stop_sign: bool,
}

pub fn synth_scene(cfg: &RunConfig, out: &Path, args: &SynthArgs) -> anyhow::Result<Outcome> {
    let sc = SyntheticConfig {
        agents: args.agents,
        history: args.history,
        future: args.future,
        road: if args.curvature == 0.0 {
            RoadShape::Straight
        } else {
            RoadShape::Arc {
                curvature: args.curvature,
            }
        },
        stop_sign: args.stop_sign,
        seed: cfg.seed,
        ..SyntheticConfig::default()
    };
    let scene = synthetic_scene(&sc).map_err(usage)?;
    prepare_dir(out)?;
    let path: PathBuf = out.join("scene.json");
    SceneFile::from_scene(format!("synthetic-{}", cfg.seed), &scene).write(&path)?;
    println!("{}", path.display());
    Ok(Outcome::Pass)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_grid_axis_is_usage_error() {
        let mut cfg = RunConfig::default();
        cfg.profile.pairs.clear();
        assert!(crate::is_usage(&profile_grid(&cfg).unwrap_err()));
        let mut cfg = RunConfig::default();
        cfg.profile.variants.clear();
        assert!(crate::is_usage(&profile_grid(&cfg).unwrap_err()));
    }

    #[test]
    fn parallel_rows_follow_sequential_order() {
        let cfg = RunConfig::default();
        let (configs, variants) = profile_grid(&cfg).unwrap();
        assert_eq!(
            profile_rows(&configs, &variants).unwrap(),
            sweep(&configs, &variants).unwrap()
        );
    }

    #[test]
    fn single_head_grid_skips_head_by_head() {
        let cfg = RunConfig::default();
        let mut configs = profile_grid(&cfg).unwrap().0;
        configs.iter_mut().for_each(|c| c.heads = 1);
        let rows = profile_rows(&configs[..1], &VariantKind::ALL).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows
            .iter()
            .all(|r| r.memory.variant != VariantKind::DropeHeadByHead));
        assert!(profile_rows(&configs[..1], &[VariantKind::DropeHeadByHead]).is_err());
    }

    #[test]
    fn curve_data_has_one_line_per_pair_count() {
        let cfg = RunConfig::default();
        let (configs, variants) = profile_grid(&cfg).unwrap();
        let rows = profile_rows(&configs, &variants).unwrap();
        let text = curve_data(&rows, &variants, "x", |r| r.flops.total);
        let data: Vec<&str> = text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.is_empty())
            .collect();
        assert_eq!(data.len(), 4);
        assert!(data
            .iter()
            .all(|l| l.split(' ').count() == 1 + variants.len()));
    }

    #[test]
    fn zero_trials_rejected_as_usage() {
        let mut cfg = RunConfig::default();
        cfg.verify.trials = 0;
        assert!(crate::is_usage(&verify_config(&cfg).unwrap_err()));
    }

    #[test]
    fn fault_flag_switches_heading_schedule() {
        let cfg = RunConfig {
            fault_inject: Some(crate::config::FaultInject::RopeFreqsInFangle),
            ..RunConfig::default()
        };
        assert_ne!(verify_config(&cfg).unwrap().rotary, RotaryConfig::default());
    }
}
