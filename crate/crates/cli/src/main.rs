//! Command-line driver for the training toolkit.
//!
//! Environment overrides: `EVOSEED_OUT` replaces the output directory when
//! `--out` is absent; `EVOSEED_WORKER_PORT` replaces the port of
//! `serve-worker --connect`.

use std::env;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use evoseed::dqn::eval_seeds;
use evoseed::envs::evaluate_policy;
use evoseed::harness::{
    compare_report, load_runs, run_experiment, write_report, Algo, ExperimentConfig,
};
use evoseed::nn::checkpoint::{load_checkpoint, save_checkpoint};
use evoseed::nn::MlpSpec;
use evoseed::protocol::serve_worker;
use evoseed::transfer::{warm_start_dqn, TransferMode};

#[derive(Parser)]
#[command(
    name = "evoseed",
    version,
    about = "Train and compare seed-deterministic policy optimizers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Replace the config's run seeds (repeatable).
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Replace the config's rollout worker count.
    #[arg(long)]
    workers: Option<usize>,
    /// Replace the config's output directory (or set EVOSEED_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CliTransferMode {
    /// Copy every layer (specs must match exactly).
    Full,
    /// Copy hidden layers; redraw the output layer from the seed.
    HiddenOnly,
}

impl From<CliTransferMode> for TransferMode {
    fn from(mode: CliTransferMode) -> Self {
        match mode {
            CliTransferMode::Full => TransferMode::Full,
            CliTransferMode::HiddenOnly => TransferMode::HiddenOnly,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the evolutionary optimizer.
    TrainEs(TrainArgs),
    /// Train the value learner from scratch.
    TrainDqn(TrainArgs),
    /// Combined pipeline: evolutionary pretraining, then a warm-started
    /// value learner on shared cumulative axes.
    Pretrain(TrainArgs),
    /// Evaluate a checkpoint with greedy rollouts on held-out episodes.
    Eval {
        /// Policy checkpoint to evaluate.
        checkpoint: PathBuf,
        /// Experiment config naming the environment.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        /// Seed selecting the held-out episode set.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build the comparison table (CSV) and plot (SVG) from finished runs.
    Report {
        /// Directory holding run subdirectories.
        dir: PathBuf,
        /// Trailing smoothing window applied before thresholds.
        #[arg(long, default_value_t = 20)]
        window: usize,
        /// Where to write report.csv / report.svg (default: the runs dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve rollout tasks to a coordinator over TCP until it shuts down.
    ServeWorker {
        /// Coordinator address, host:port (port may come from
        /// EVOSEED_WORKER_PORT).
        #[arg(long)]
        connect: String,
        /// Experiment config naming the environment to roll out.
        #[arg(long)]
        config: PathBuf,
    },
    /// Turn a pretrained checkpoint into a warm-started online/target pair
    /// ready for value learning.
    Transfer {
        /// Source policy checkpoint (the pretrained network).
        checkpoint: PathBuf,
        /// Directory receiving online.evsd and target.evsd.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = CliTransferMode::HiddenOnly)]
        mode: CliTransferMode,
        /// Seed for the output-layer redraw (hidden-only mode).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Width of the new output layer (hidden-only mode; defaults to the
        /// source network's).
        #[arg(long)]
        output_dim: Option<usize>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::TrainEs(args) => train(args, Algo::Es),
        Command::TrainDqn(args) => train(args, Algo::Dqn),
        Command::Pretrain(args) => train(args, Algo::EsThenDqn),
        Command::Eval {
            checkpoint,
            config,
            episodes,
            seed,
        } => eval_checkpoint(&checkpoint, &config, episodes, seed),
        Command::Report { dir, window, out } => report(&dir, window, out),
        Command::ServeWorker { connect, config } => worker(&connect, &config),
        Command::Transfer {
            checkpoint,
            out,
            mode,
            seed,
            output_dim,
        } => transfer(&checkpoint, &out, mode.into(), seed, output_dim),
    }
}

/// `EVOSEED_OUT`, when set and non-empty, replaces the config's output
/// directory unless `--out` was given explicitly.
fn resolve_out_dir(flag: Option<PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| {
        env::var("EVOSEED_OUT")
            .ok()
            .filter(|s| !s.is_empty())
            .map(PathBuf::from)
    })
}

/// `EVOSEED_WORKER_PORT`, when set and non-empty, replaces the port part of
/// the coordinator address (an address without a port gains one).
fn resolve_worker_addr(connect: &str) -> String {
    match env::var("EVOSEED_WORKER_PORT") {
        Ok(port) if !port.is_empty() => {
            let host = connect.rsplit_once(':').map_or(connect, |(h, _)| h);
            format!("{host}:{port}")
        }
        _ => connect.to_string(),
    }
}

fn train(args: TrainArgs, algo: Algo) -> Result<()> {
    let mut config = ExperimentConfig::load(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    config.algo = algo;
    if !args.seeds.is_empty() {
        config.seeds = args.seeds;
    }
    if let Some(workers) = args.workers {
        config.workers = workers;
    }
    if let Some(out) = resolve_out_dir(args.out) {
        config.output_dir = out;
    }

    let summaries = run_experiment(&config)?;
    for summary in &summaries {
        let last = summary
            .curve
            .rows()
            .last()
            .context("runs always log at least one evaluation")?;
        println!(
            "{} seed {}: reward {:.3} +- {:.3} after {} env steps, {:.1}s training -> {}",
            summary.algo.label(),
            summary.seed,
            last.mean_reward,
            last.std_reward,
            last.env_steps_cum,
            last.wall_clock_s,
            summary.dir.display()
        );
    }
    Ok(())
}

fn eval_checkpoint(checkpoint: &PathBuf, config: &PathBuf, episodes: usize, seed: u64) -> Result<()> {
    if episodes == 0 {
        bail!("--episodes must be at least 1");
    }
    let config = ExperimentConfig::load(config)?;
    let policy = load_checkpoint(checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    let spec = policy.spec();
    if spec.input_dim != config.env.observation_dim()
        || spec.output_dim != config.env.num_actions()
    {
        bail!(
            "checkpoint expects {} observations / {} actions but the env provides {} / {}",
            spec.input_dim,
            spec.output_dim,
            config.env.observation_dim(),
            config.env.num_actions()
        );
    }
    let mut env = config.env.make_env()?;
    let seeds = eval_seeds(seed, episodes);
    let (mean, std, steps) = evaluate_policy(env.as_mut(), &policy, &seeds)?;
    println!(
        "{}: reward {mean:.3} +- {std:.3} over {episodes} episodes ({steps} env steps)",
        checkpoint.display()
    );
    Ok(())
}

fn report(dir: &PathBuf, window: usize, out: Option<PathBuf>) -> Result<()> {
    if window == 0 {
        bail!("--window must be at least 1");
    }
    let runs = load_runs(dir)?;
    let report = compare_report(&runs, window)?;
    let out_dir = resolve_out_dir(out).unwrap_or_else(|| dir.clone());
    write_report(&out_dir, &report)?;
    print!("{}", report.csv);
    eprintln!(
        "compared {} runs (reference reward {:.3}) -> {}",
        report.rows.len(),
        report.reference_reward,
        out_dir.join("report.{csv,svg}").display()
    );
    Ok(())
}

fn worker(connect: &str, config: &PathBuf) -> Result<()> {
    let config = ExperimentConfig::load(config)?;
    let addr = resolve_worker_addr(connect);
    let served = serve_worker(&addr, &config.env)
        .with_context(|| format!("serving rollouts to {addr}"))?;
    eprintln!("coordinator closed the session; {served} tasks served");
    Ok(())
}

fn transfer(
    checkpoint: &PathBuf,
    out: &PathBuf,
    mode: TransferMode,
    seed: u64,
    output_dim: Option<usize>,
) -> Result<()> {
    let source = load_checkpoint(checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    let spec = source.spec();
    let target_spec = match output_dim {
        None => spec.clone(),
        Some(dim) => MlpSpec::new(
            spec.input_dim,
            spec.hidden_dims.clone(),
            dim,
            spec.activation,
        )?,
    };
    let (online, target) = warm_start_dqn(&source, &target_spec, mode, seed)?;
    std::fs::create_dir_all(out)?;
    let online_path = out.join("online.evsd");
    let target_path = out.join("target.evsd");
    save_checkpoint(&online, &online_path)?;
    save_checkpoint(&target, &target_path)?;
    println!(
        "wrote {} and {} ({:?} transfer, redraw seed {seed})",
        online_path.display(),
        target_path.display(),
        mode
    );
    Ok(())
}
