//! Command-line front end: single runs, axis sweeps, and training.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use aov_sim::agents::BaselinePolicy;
use aov_sim::config::{load_config, RunManifest, SimulationConfig};
use aov_sim::engine::{
    run_episode, BaselineController, LearnedController, RunMetrics, Scenario, Trainer,
};

/// Environment variable that prefixes relative `--out` paths.
const OUT_ROOT_ENV: &str = "AOV_SIM_OUT";

#[derive(Parser)]
#[command(
    name = "aov-sim",
    about = "Vehicular sensing/uploading simulator with Age-of-View scoring",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seeded episode and write the metrics CSV and manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Policy::Random)]
        policy: Policy,
        #[arg(long, default_value = "out/run")]
        out: PathBuf,
        /// Checkpoint directory for the learned policies.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Sweep one experiment axis over a policy set with replications.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated axis values (Hz for rsu-bandwidth, multiplier
        /// for view-size).
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, value_enum, value_delimiter = ',', required = true)]
        policies: Vec<Policy>,
        #[arg(long, default_value_t = 1)]
        replications: u32,
        /// Parallel sweep cells.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "out/sweep")]
        out: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train the per-vehicle agents; checkpoints at a cadence, resumable.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        episodes: u32,
        #[arg(long, default_value = "out/train")]
        out: PathBuf,
        /// Continue from the checkpoint in --out.
        #[arg(long, default_value_t = false)]
        resume: bool,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Policy {
    Random,
    Static,
    GreedySensing,
    MdrGba,
    MacGba,
}

impl Policy {
    fn name(&self) -> &'static str {
        match self {
            Policy::Random => "random",
            Policy::Static => "static",
            Policy::GreedySensing => "greedy-sensing",
            Policy::MdrGba => "mdr-gba",
            Policy::MacGba => "mac-gba",
        }
    }

    fn baseline(&self) -> Option<BaselinePolicy> {
        match self {
            Policy::Random => Some(BaselinePolicy::Random),
            Policy::Static => Some(BaselinePolicy::Static),
            Policy::GreedySensing => Some(BaselinePolicy::GreedySensing),
            Policy::MdrGba | Policy::MacGba => None,
        }
    }

    fn reward_mode(&self) -> Option<&'static str> {
        match self {
            Policy::MdrGba => Some("difference"),
            Policy::MacGba => Some("shared"),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Axis {
    RsuBandwidth,
    ViewSize,
}

impl Axis {
    fn name(&self) -> &'static str {
        match self {
            Axis::RsuBandwidth => "rsu-bandwidth",
            Axis::ViewSize => "view-size",
        }
    }

    fn apply(&self, config: &SimulationConfig, value: f64) -> SimulationConfig {
        let mut c = config.clone();
        match self {
            Axis::RsuBandwidth => c.rsu.bandwidth_hz = value,
            Axis::ViewSize => c.views.target_mean_size_bits *= value,
        }
        c
    }
}

fn resolve_out(out: &Path) -> PathBuf {
    if out.is_absolute() {
        return out.to_path_buf();
    }
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) => PathBuf::from(root).join(out),
        None => out.to_path_buf(),
    }
}

fn main() {
    if let Err(e) = dispatch(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            policy,
            out,
            checkpoint,
        } => cmd_run(&config, seed, policy, &resolve_out(&out), checkpoint.as_deref()),
        Command::Sweep {
            config,
            seed,
            axis,
            values,
            policies,
            replications,
            jobs,
            out,
            checkpoint,
        } => cmd_sweep(
            &config,
            seed,
            axis,
            &values,
            &policies,
            replications,
            jobs,
            &resolve_out(&out),
            checkpoint.as_deref(),
        ),
        Command::Train {
            config,
            seed,
            episodes,
            out,
            resume,
        } => cmd_train(&config, seed, episodes, &resolve_out(&out), resume),
    }
}

/// Runs one episode of `policy` on the scenario derived from
/// (config, seed) and returns the metrics.
fn run_cell(
    config: &SimulationConfig,
    seed: u64,
    policy: Policy,
    tag: &str,
    checkpoint: Option<&Path>,
) -> anyhow::Result<(RunMetrics, aov_sim::engine::EpisodeRecord)> {
    let mut config = config.clone();
    if let Some(mode) = policy.reward_mode() {
        config.agents.reward_mode = mode.to_string();
    }
    let scenario = Scenario::build(&config, seed, tag)?;
    let result = match policy.baseline() {
        Some(kind) => {
            let mut controller = BaselineController::new(kind, &scenario);
            run_episode(&scenario, &mut controller)?
        }
        None => {
            let trainer = match checkpoint {
                Some(dir) => Trainer::load_checkpoint(&config, seed, dir)
                    .with_context(|| format!("loading checkpoint from {}", dir.display()))?,
                None => Trainer::new(&config, seed)?,
            };
            let mut controller = LearnedController::new(&trainer.agents, 0.0, &scenario);
            run_episode(&scenario, &mut controller)?
        }
    };
    Ok(result)
}

fn cmd_run(
    config_path: &Path,
    seed: u64,
    policy: Policy,
    out: &Path,
    checkpoint: Option<&Path>,
) -> anyhow::Result<()> {
    let config = load_config(config_path)?;
    std::fs::create_dir_all(out)?;
    RunManifest::new(&config, seed, policy.name()).write(out)?;
    let (metrics, record) = run_cell(&config, seed, policy, "run", checkpoint)?;
    record.write_metrics_csv(out.join("metrics.csv"))?;
    if config.allocation.debug_csv {
        record.write_alloc_csv(out.join("allocation.csv"))?;
    }
    let scenario = Scenario::build(&config, seed, "run")?;
    aov_sim::views::export_views_csv(out.join("views.csv"), &scenario.views)?;
    println!(
        "policy {} seed {seed}: CR {:.6} CAR ({:.4}, {:.4}, {:.4}) AQT {:.6}s SR {:.4}",
        policy.name(),
        metrics.cr,
        metrics.car[0],
        metrics.car[1],
        metrics.car[2],
        metrics.aqt_s,
        metrics.sr
    );
    Ok(())
}

struct SweepCell {
    axis_idx: usize,
    axis_value: f64,
    policy: Policy,
    replication: u32,
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    config_path: &Path,
    seed: u64,
    axis: Axis,
    values: &[f64],
    policies: &[Policy],
    replications: u32,
    jobs: usize,
    out: &Path,
    checkpoint: Option<&Path>,
) -> anyhow::Result<()> {
    if values.is_empty() {
        bail!("sweep axis has no values");
    }
    if values.iter().any(|v| *v <= 0.0) {
        bail!("axis values must be positive");
    }
    if replications == 0 {
        bail!("need at least one replication");
    }
    let base = load_config(config_path)?;
    std::fs::create_dir_all(out)?;
    RunManifest::new(&base, seed, "sweep").write(out)?;

    let mut cells = Vec::new();
    for (axis_idx, &axis_value) in values.iter().enumerate() {
        for &policy in policies {
            for replication in 0..replications {
                cells.push(SweepCell {
                    axis_idx,
                    axis_value,
                    policy,
                    replication,
                });
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("building sweep worker pool")?;
    let results: Vec<(usize, Result<RunMetrics, String>)> = pool.install(|| {
        cells
            .par_iter()
            .enumerate()
            .map(|(idx, cell)| {
                let config = axis.apply(&base, cell.axis_value);
                // One tag per (axis, replication): every policy sees the
                // same environment draw, so comparisons are paired.
                let tag = format!("sweep-ax{}-rep{}", cell.axis_idx, cell.replication);
                let outcome = run_cell(&config, seed, cell.policy, &tag, checkpoint)
                    .map(|(m, _)| m)
                    .map_err(|e| format!("{e:#}"));
                (idx, outcome)
            })
            .collect()
    });
    let mut ordered = results;
    ordered.sort_by_key(|(idx, _)| *idx);

    let path = out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "kind",
        "axis",
        "axis_value",
        "policy",
        "replication",
        "cr",
        "car_timeliness",
        "car_completeness",
        "car_consistency",
        "aqt_s",
        "sr",
        "error",
    ])?;
    for (idx, outcome) in &ordered {
        let cell = &cells[*idx];
        match outcome {
            Ok(m) => w.write_record([
                "result".into(),
                axis.name().to_string(),
                cell.axis_value.to_string(),
                cell.policy.name().to_string(),
                cell.replication.to_string(),
                m.cr.to_string(),
                m.car[0].to_string(),
                m.car[1].to_string(),
                m.car[2].to_string(),
                m.aqt_s.to_string(),
                m.sr.to_string(),
                String::new(),
            ])?,
            Err(e) => w.write_record([
                "result".into(),
                axis.name().to_string(),
                cell.axis_value.to_string(),
                cell.policy.name().to_string(),
                cell.replication.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                e.clone(),
            ])?,
        }
    }

    // Mean and sample-stddev summaries per (axis value, policy).
    for (axis_idx, &axis_value) in values.iter().enumerate() {
        for &policy in policies {
            let metrics: Vec<&RunMetrics> = ordered
                .iter()
                .filter_map(|(idx, outcome)| {
                    let cell = &cells[*idx];
                    (cell.axis_idx == axis_idx && cell.policy == policy)
                        .then(|| outcome.as_ref().ok())
                        .flatten()
                })
                .collect();
            if metrics.is_empty() {
                continue;
            }
            let columns: Vec<Vec<f64>> = vec![
                metrics.iter().map(|m| m.cr).collect(),
                metrics.iter().map(|m| m.car[0]).collect(),
                metrics.iter().map(|m| m.car[1]).collect(),
                metrics.iter().map(|m| m.car[2]).collect(),
                metrics.iter().map(|m| m.aqt_s).collect(),
                metrics.iter().map(|m| m.sr).collect(),
            ];
            let means: Vec<f64> = columns.iter().map(|c| mean(c)).collect();
            let stds: Vec<f64> = columns.iter().map(|c| sample_std(c)).collect();
            for (kind, stats) in [("mean", &means), ("stddev", &stds)] {
                let mut record = vec![
                    kind.to_string(),
                    axis.name().to_string(),
                    axis_value.to_string(),
                    policy.name().to_string(),
                    String::new(),
                ];
                record.extend(stats.iter().map(|v| v.to_string()));
                record.push(String::new());
                w.write_record(&record)?;
            }
        }
    }
    w.flush()?;
    println!("sweep complete: {} cells -> {}", cells.len(), path.display());
    Ok(())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() as f64 - 1.0)).sqrt()
}

fn cmd_train(
    config_path: &Path,
    seed: u64,
    episodes: u32,
    out: &Path,
    resume: bool,
) -> anyhow::Result<()> {
    let config = load_config(config_path)?;
    std::fs::create_dir_all(out)?;
    RunManifest::new(&config, seed, "train").write(out)?;
    let mut trainer = if resume {
        let dir = out.join("checkpoints").join("latest");
        Trainer::load_checkpoint(&config, seed, &dir)
            .with_context(|| format!("resuming from {}", dir.display()))?
    } else {
        Trainer::new(&config, seed)?
    };
    if episodes == 0 {
        println!("0 episodes requested; nothing to train");
        return Ok(());
    }
    let start = trainer.episodes_done;
    trainer.train(episodes, Some(out))?;
    println!(
        "trained episodes {start}..{} -> {}",
        trainer.episodes_done,
        out.display()
    );
    Ok(())
}
