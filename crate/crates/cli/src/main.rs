//! `acnn`: feature extraction, adaptation, training, evaluation and the
//! experiment drivers, all driven by one declarative config file.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "acnn",
    version,
    about = "Convolutional acoustic models trained with SGD or Hessian-free optimization"
)]
#[command(after_help = "Every verb reads an experiment config (TOML). Flags only override the seed and paths.\n\
Each run writes config.resolved.toml next to its outputs; rerunning it reproduces the run.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every verb.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment config file.
    #[arg(long, short)]
    pub config: PathBuf,
    /// Override the experiment seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Root directory for all outputs.
    #[arg(long, env = "ACNN_OUTPUT_ROOT", default_value = "acnn-out")]
    pub output_root: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Log-mel feature extraction and normalization.
    #[command(subcommand)]
    Features(FeaturesCmd),
    /// GMM, STC and per-speaker fMLLR estimation, and applying the chain.
    #[command(subcommand)]
    Adapt(AdaptCmd),
    /// Network inspection.
    #[command(subcommand)]
    Net(NetCmd),
    /// Train the configured network.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Evaluate a trained run on the configured evaluation split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Run directory holding the final checkpoint. Defaults to the run
        /// directory of the config.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Run a family of related configs and tabulate them.
    #[command(subcommand)]
    Experiment(ExperimentCmd),
}

#[derive(Debug, Subcommand)]
enum FeaturesCmd {
    /// Write per-utterance features (log-mel, warp, deltas, energy as
    /// configured) and a manifest of speakers and splits.
    Extract {
        #[command(flatten)]
        common: Common,
    },
    /// Normalize extracted features with training-split statistics.
    Normalize {
        #[command(flatten)]
        common: Common,
        /// Directory written by `features extract`. Defaults to the one
        /// for this config.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum AdaptCmd {
    /// Train the diagonal GMM on training-split log-mel frames.
    TrainGmm {
        #[command(flatten)]
        common: Common,
    },
    /// Estimate the semi-tied covariance transform from the GMM.
    EstimateStc {
        #[command(flatten)]
        common: Common,
        /// Directory holding gmm.txt. Defaults to the adaptation directory
        /// for this config.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Estimate one fMLLR transform per speaker in STC space.
    EstimateFmllr {
        #[command(flatten)]
        common: Common,
        /// Directory holding stc.txt. Defaults to the adaptation directory
        /// for this config.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Apply STC and fMLLR transforms to extracted features.
    Apply {
        #[command(flatten)]
        common: Common,
        /// Directory written by `features extract`. Defaults to the one for
        /// this config.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Directory holding stc.txt and fmllr/. Defaults to the adaptation
        /// directory for this config.
        #[arg(long)]
        transforms: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum NetCmd {
    /// Validate the network and print per-layer shapes and parameter counts.
    Describe {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Subcommand)]
enum TrainCmd {
    /// Cross-entropy training with minibatch SGD (optimizer.kind = "sgd").
    Ce {
        #[command(flatten)]
        common: Common,
    },
    /// Cross-entropy training with Hessian-free optimization
    /// (optimizer.kind = "hf").
    Hf {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Subcommand)]
enum ExperimentCmd {
    /// Input feature ablation: mel, +warp, +fMLLR, +deltas, +energy.
    Table1 {
        #[command(flatten)]
        common: Common,
    },
    /// Zero to three convolutional layers at a matched parameter count.
    Table2 {
        #[command(flatten)]
        common: Common,
    },
    /// HF held-out loss with fixed versus per-CG-iteration dropout masks.
    Figure1 {
        #[command(flatten)]
        common: Common,
    },
    /// Pooling variants: none, max, lp, stochastic, overlap, time pooling.
    Poolsweep {
        #[command(flatten)]
        common: Common,
    },
    /// Limited versus full weight sharing.
    LwsVsFws {
        #[command(flatten)]
        common: Common,
    },
}

fn dispatch(command: Command) -> acnn::Result<()> {
    use acnn::harness::Driver;
    match command {
        Command::Features(FeaturesCmd::Extract { common }) => commands::features_extract(&common),
        Command::Features(FeaturesCmd::Normalize { common, input }) => commands::features_normalize(&common, input),
        Command::Adapt(AdaptCmd::TrainGmm { common }) => commands::adapt_train_gmm(&common),
        Command::Adapt(AdaptCmd::EstimateStc { common, input }) => commands::adapt_estimate_stc(&common, input),
        Command::Adapt(AdaptCmd::EstimateFmllr { common, input }) => commands::adapt_estimate_fmllr(&common, input),
        Command::Adapt(AdaptCmd::Apply { common, input, transforms }) => {
            commands::adapt_apply(&common, input, transforms)
        }
        Command::Net(NetCmd::Describe { common }) => commands::net_describe(&common),
        Command::Train(TrainCmd::Ce { common }) => commands::train(&common, "sgd"),
        Command::Train(TrainCmd::Hf { common }) => commands::train(&common, "hf"),
        Command::Eval { common, run } => commands::eval(&common, run),
        Command::Experiment(e) => {
            let (driver, common) = match e {
                ExperimentCmd::Table1 { common } => (Driver::Table1, common),
                ExperimentCmd::Table2 { common } => (Driver::Table2, common),
                ExperimentCmd::Figure1 { common } => (Driver::Figure1, common),
                ExperimentCmd::Poolsweep { common } => (Driver::PoolSweep, common),
                ExperimentCmd::LwsVsFws { common } => (Driver::LwsVsFws, common),
            };
            commands::experiment(&common, driver)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
