//! `strictfair`: train supernets, search them, and measure how well they rank.

mod commands;
mod output;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use strictfair::experiment::ExperimentConfig;
use strictfair::fairness::Sampler;
use strictfair::search_space::Architecture;
use strictfair::supernet::TrainMode;

use commands::Session;
use output::RunDir;

#[derive(Parser)]
#[command(name = "strictfair", version, about = "Strictly fair weight-sharing architecture search")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML). Defaults to the built-in spirals experiment.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output root; each command writes to `<root>/<command>`.
    #[arg(long, global = true, env = "STRICTFAIR_OUT")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerArg {
    Strict,
    Uniform,
}

#[derive(Subcommand)]
enum Command {
    /// Train a supernet; writes per-epoch statistics and a checkpoint.
    TrainSupernet {
        /// strict_fair, ef_uniform, spos or ef_krepeat(k).
        #[arg(long)]
        mode: Option<TrainMode>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train one architecture from scratch.
    TrainStandalone {
        /// Comma-separated choice indices; all zeros by default.
        #[arg(long)]
        arch: Option<Architecture>,
    },
    /// Evolutionary multi-objective search with inherited weights.
    Search {
        /// Supernet checkpoint to search; trains one when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare how well supernets trained in different ways rank architectures.
    Rank {
        /// Only compute Kendall tau of a CSV with `oneshot` and `standalone` columns.
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Cosine similarity between the choice blocks of one layer.
    Similarity {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        layer: Option<usize>,
    },
    /// Probability that uniform sampling gives every choice equal counts.
    LemmaCurve {
        #[arg(long, default_value_t = 2)]
        m: u64,
        #[arg(long, default_value_t = 200)]
        n_max: u64,
        /// Largest n for which the exact rational value is computed.
        #[arg(long, default_value_t = 5000)]
        exact_max: u64,
    },
    /// Simulate update counters without training.
    FairnessSim {
        #[arg(long, value_enum, default_value_t = SamplerArg::Strict)]
        mode: SamplerArg,
        #[arg(long, default_value_t = 6)]
        m: usize,
        #[arg(long, default_value_t = 19)]
        layers: usize,
        /// Back-propagations per run.
        #[arg(long, default_value_t = 100_000)]
        bps: u64,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
    /// Parameter and multiply-add counts of the search space.
    Profile {
        #[arg(long)]
        arch: Option<Architecture>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::TrainSupernet { .. } => "train-supernet",
            Command::TrainStandalone { .. } => "train-standalone",
            Command::Search { .. } => "search",
            Command::Rank { .. } => "rank",
            Command::Similarity { .. } => "similarity",
            Command::LemmaCurve { .. } => "lemma-curve",
            Command::FairnessSim { .. } => "fairness-sim",
            Command::Profile { .. } => "profile",
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut config = match &cli.common.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => ExperimentConfig::toy(0),
    };
    if let Some(seed) = cli.common.seed {
        config = config.with_seed(seed);
    }
    let root = cli
        .common
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    let name = cli.command.name();
    let run = RunDir::create(root.join(name), name, config.content_hash(), config.seed)?;
    let mut session = Session { config, run };
    let s = &mut session;
    match cli.command {
        Command::TrainSupernet { mode, epochs } => commands::train_supernet_cmd(s, mode, epochs)?,
        Command::TrainStandalone { arch } => commands::train_standalone_cmd(s, arch)?,
        Command::Search { checkpoint } => commands::search_cmd(s, checkpoint.as_deref())?,
        Command::Rank { pairs: Some(pairs) } => commands::rank_pairs_cmd(s, &pairs)?,
        Command::Rank { pairs: None } => commands::rank_cmd(s)?,
        Command::Similarity { checkpoint, layer } => commands::similarity_cmd(s, checkpoint.as_deref(), layer)?,
        Command::LemmaCurve { m, n_max, exact_max } => commands::lemma_curve_cmd(s, m, n_max, exact_max)?,
        Command::FairnessSim {
            mode,
            m,
            layers,
            bps,
            seeds,
        } => {
            let sampler = match mode {
                SamplerArg::Strict => Sampler::Strict,
                SamplerArg::Uniform => Sampler::Uniform,
            };
            commands::fairness_sim_cmd(s, sampler, m, layers, bps, seeds)?
        }
        Command::Profile { arch } => commands::profile_cmd(s, arch)?,
    }
    let dir = session.run.dir().to_path_buf();
    session.run.finish()?;
    eprintln!("outputs in {}", dir.display());
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
