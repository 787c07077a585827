//! `chromalign`: simulate, detect, featurise, train, align, evaluate and
//! benchmark from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{describe, ConfigError, RunConfig, Section};

#[derive(Parser)]
#[command(name = "chromalign", version, about = "Siamese-network peak alignment for GC-MS chromatograms")]
struct Cli {
    /// Run configuration file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable, wins over the file.
    #[arg(short = 's', long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic matrices (OUT/matrices/*.csv) and OUT/truth.csv.
    #[command(after_help = describe(&[Section::Simulation]))]
    Simulate {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Baseline-correct and detect peaks in every matrix of a directory.
    #[command(after_help = describe(&[Section::Detection]))]
    Detect {
        #[arg(long, value_name = "DIR")]
        matrices: PathBuf,
        /// Peak table to write.
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
        /// Truth CSV or labeled peak table used to label the peaks.
        #[arg(long, value_name = "CSV")]
        truth: Option<PathBuf>,
    },
    /// Build the network inputs of every peak in a peak table.
    #[command(after_help = describe(&[Section::Features]))]
    Features {
        #[arg(long, value_name = "DIR")]
        matrices: PathBuf,
        #[arg(long, value_name = "CSV")]
        peaks: PathBuf,
        /// Feature bundle directory to write.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train a model on the labeled peaks of a feature bundle.
    #[command(after_help = describe(&[Section::Training]))]
    Train {
        #[arg(long, value_name = "DIR")]
        features: PathBuf,
        /// Weights JSON to write.
        #[arg(long, value_name = "JSON")]
        out: PathBuf,
        /// Per-epoch loss and accuracy CSV to write.
        #[arg(long, value_name = "CSV")]
        history: PathBuf,
    },
    /// Score peak pairs with a trained model and group them.
    #[command(after_help = describe(&[Section::Alignment]))]
    Align {
        #[arg(long, value_name = "JSON")]
        weights: PathBuf,
        #[arg(long, value_name = "DIR")]
        features: PathBuf,
        /// Alignment report to write.
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
        /// Pair probabilities (`i,j,probability`, report row indices) to write.
        #[arg(long, value_name = "CSV")]
        scores: Option<PathBuf>,
        /// Plot data `sample_index,rt,group` to write.
        #[arg(long, value_name = "CSV")]
        scatter: Option<PathBuf>,
    },
    /// Compare an alignment report with the truth.
    #[command(after_help = describe(&[Section::Evaluation, Section::Detection]))]
    Evaluate {
        #[arg(long, value_name = "CSV")]
        report: PathBuf,
        /// Truth CSV or labeled peak table.
        #[arg(long, value_name = "CSV")]
        truth: PathBuf,
        /// Pair probabilities from `align --scores`; enables AUC and ROC.
        #[arg(long, value_name = "CSV")]
        scores: Option<PathBuf>,
        /// Metrics JSON to write.
        #[arg(long, value_name = "JSON")]
        out: PathBuf,
        /// ROC points to write (default: roc.csv beside the metrics).
        #[arg(long, value_name = "CSV")]
        roc: Option<PathBuf>,
    },
    /// Time pair prediction on feature sets of increasing size.
    #[command(after_help = describe(&[Section::Benchmark, Section::Alignment]))]
    Benchmark {
        #[arg(long, value_name = "JSON")]
        weights: PathBuf,
        #[arg(long, value_name = "DIR")]
        features: PathBuf,
        /// Timing CSV `combinations,seconds` to write.
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
        /// Linear fit summary JSON to write.
        #[arg(long, value_name = "JSON")]
        fit: Option<PathBuf>,
    },
    /// Align a peak table with the three-stage rule-based method.
    #[command(name = "rule-align", after_help = describe(&[Section::Rules]))]
    RuleAlign {
        #[arg(long, value_name = "CSV")]
        peaks: PathBuf,
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.set)?;
    match cli.command {
        Command::Simulate { out } => commands::simulate(&cfg, &out),
        Command::Detect { matrices, out, truth } => commands::detect(&cfg, &matrices, &out, truth.as_deref()),
        Command::Features { matrices, peaks, out } => commands::features(&cfg, &matrices, &peaks, &out),
        Command::Train { features, out, history } => commands::train_cmd(&cfg, &features, &out, &history),
        Command::Align {
            weights,
            features,
            out,
            scores,
            scatter,
        } => commands::align(&cfg, &weights, &features, &out, scores.as_deref(), scatter.as_deref()),
        Command::Evaluate {
            report,
            truth,
            scores,
            out,
            roc,
        } => commands::evaluate(&cfg, &report, &truth, scores.as_deref(), &out, roc.as_deref()),
        Command::Benchmark {
            weights,
            features,
            out,
            fit,
        } => commands::benchmark(&cfg, &weights, &features, &out, fit.as_deref()),
        Command::RuleAlign { peaks, out } => commands::rule_align_cmd(&cfg, &peaks, &out),
    }
}

/// 2 for bad configuration or input, 1 for failures while running.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<chromalign::Error>() {
        Some(
            chromalign::Error::Training { .. }
            | chromalign::Error::Numeric(_)
            | chromalign::Error::UndefinedMetric(_)
            | chromalign::Error::Io(_),
        ) => 1,
        Some(_) => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
