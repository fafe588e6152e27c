use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use thinner::cli::{cmd_compare, cmd_eval, cmd_inspect, cmd_prune, cmd_train, Overrides};
use thinner::pruning::Scheme;
use thinner::scoring::Metric;

#[derive(Parser)]
#[command(
    name = "thinner",
    version,
    about = "Train, prune and inspect small convolutional networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from scratch and save it with a training log.
    Train {
        /// Run configuration file (JSON).
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Iteratively remove the least important neurons from a trained model.
    Prune {
        /// Run configuration file (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Model file produced by `train`.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Report a model's accuracy on the whole configured dataset.
    Eval {
        /// Run configuration file (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Model file to evaluate.
        #[arg(long)]
        model: PathBuf,
        /// Override the master seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Prune with the global and layerwise schemes side by side and
    /// tabulate accuracy against remaining neurons for both.
    Compare {
        /// Run configuration file (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Model file produced by `train`.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Print a saved model's layers, widths and parameter counts.
    Inspect {
        /// Model file to inspect.
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Args)]
struct OverrideArgs {
    /// Override the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Importance metric: mean, std or aaws.
    #[arg(long)]
    metric: Option<Metric>,
    /// Pruning scheme: global, layerwise or sequential.
    #[arg(long)]
    scheme: Option<Scheme>,
    /// Fraction of neurons removed per round.
    #[arg(long)]
    ratio: Option<f64>,
    /// Stop pruning once validation accuracy falls below this.
    #[arg(long)]
    target: Option<f64>,
    /// Maximum number of pruning rounds.
    #[arg(long = "max-rounds")]
    max_rounds: Option<usize>,
}

impl From<OverrideArgs> for Overrides {
    fn from(args: OverrideArgs) -> Overrides {
        Overrides {
            seed: args.seed,
            out: args.out,
            metric: args.metric,
            scheme: args.scheme,
            ratio: args.ratio,
            target: args.target,
            max_rounds: args.max_rounds,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, overrides } => cmd_train(&config, &overrides.into()),
        Command::Prune {
            config,
            model,
            overrides,
        } => cmd_prune(&config, &model, &overrides.into()),
        Command::Eval {
            config,
            model,
            seed,
        } => cmd_eval(&config, &model, seed),
        Command::Compare {
            config,
            model,
            overrides,
        } => cmd_compare(&config, &model, &overrides.into()),
        Command::Inspect { model } => cmd_inspect(&model),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
