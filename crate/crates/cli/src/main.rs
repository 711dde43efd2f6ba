//! Command-line harness for the relay dialogue runtime.

mod commands;
mod plotting;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use relay_core::config::{load_config_file, ConfigFile, ResolvedProfile};

const BUILTIN_CONFIG: &str = include_str!("../../../config/default.toml");

#[derive(Parser)]
#[command(
    name = "relay",
    about = "Hybrid fast/slow-path spoken dialogue runtime: deterministic session \
             simulation, prefix-gate training, corpus generation, and scoring."
)]
struct Cli {
    /// Config file with named profiles (env: RELAY_CONFIG). Defaults to the
    /// built-in profiles.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Profile name inside the config file.
    #[arg(long, global = true, default_value = "default")]
    profile: String,

    /// Seed override (env: RELAY_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay scripts through the full session driver and emit a report.
    Run(RunArgs),
    /// Run one session per (threshold, prefix length) cell.
    Sweep(SweepArgs),
    /// Generate a script corpus with injected duplex phenomena.
    GenCorpus(GenCorpusArgs),
    /// Build an out-of-fold dataset and train the prefix gate.
    TrainVerifier(TrainArgs),
    /// Score a trained gate on a dataset file.
    EvalVerifier(EvalArgs),
    /// Score predicted turn-taking events against a reference.
    ScoreEvents(ScoreArgs),
    /// Render latency and sweep plots (SVG + CSV) from report files.
    Plot(PlotArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Directory of .script files; defaults to the profile's scripts_dir or
    /// an in-memory generated corpus.
    #[arg(long)]
    scripts: Option<PathBuf>,
    /// Write the full JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75")]
    thresholds: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "5")]
    prefix_lens: Vec<usize>,
    #[arg(long)]
    scripts: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenCorpusArgs {
    /// Output directory for .script files and the manifest.
    #[arg(long)]
    out_dir: PathBuf,
    /// Override the profile's script count.
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Where to write the trained weights.
    #[arg(long)]
    out: PathBuf,
    /// Train from an existing dataset file instead of generating one.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Scripts to draft over when generating a dataset.
    #[arg(long, default_value_t = 400)]
    count: usize,
    /// Out-of-fold split count.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 12)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    /// Also write the generated dataset here.
    #[arg(long)]
    save_dataset: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75")]
    thresholds: Vec<f64>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Predicted events, one `tick | [TOKEN]` per line.
    #[arg(long)]
    predicted: PathBuf,
    /// Reference events in the same format.
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, default_value_t = 1)]
    tolerance: u64,
}

#[derive(Args)]
struct PlotArgs {
    /// Session report JSON produced by `run`.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Sweep table JSON produced by `sweep`.
    #[arg(long)]
    sweep: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn load_profile(cli: &Cli) -> Result<ResolvedProfile> {
    let seed = match cli.seed {
        Some(s) => Some(s),
        None => std::env::var("RELAY_SEED")
            .ok()
            .map(|s| s.parse().context("RELAY_SEED must be an integer"))
            .transpose()?,
    };
    let config_path = cli
        .config
        .clone()
        .or_else(|| std::env::var("RELAY_CONFIG").ok().map(PathBuf::from));
    let (file, base): (ConfigFile, PathBuf) = match config_path {
        Some(path) => {
            let file = load_config_file(&path)
                .with_context(|| format!("loading {}", path.display()))?;
            let base = path.parent().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
            (file, base)
        }
        None => (
            toml::from_str(BUILTIN_CONFIG).context("built-in config is malformed")?,
            std::env::current_dir()?,
        ),
    };
    Ok(file.resolve(&cli.profile, &base, seed)?)
}

fn main() {
    let cli = Cli::parse();
    if let Err(error) = dispatch(&cli) {
        eprintln!("error: {error:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run(args) => {
            let profile = load_profile(cli)?;
            commands::run(&profile, args.scripts.as_deref(), args.out.as_deref())
        }
        Command::Sweep(args) => {
            let profile = load_profile(cli)?;
            commands::sweep(
                &profile,
                args.scripts.as_deref(),
                &args.thresholds,
                &args.prefix_lens,
                args.out.as_deref(),
            )
        }
        Command::GenCorpus(args) => {
            let profile = load_profile(cli)?;
            commands::gen_corpus(&profile, &args.out_dir, args.count)
        }
        Command::TrainVerifier(args) => {
            let profile = load_profile(cli)?;
            commands::train_verifier(
                &profile,
                &args.out,
                args.dataset.as_deref(),
                args.count,
                args.folds,
                args.epochs,
                args.learning_rate,
                args.save_dataset.as_deref(),
            )
        }
        Command::EvalVerifier(args) => {
            commands::eval_verifier(&args.weights, &args.dataset, &args.thresholds)
        }
        Command::ScoreEvents(args) => {
            commands::score_events(&args.predicted, &args.reference, args.tolerance)
        }
        Command::Plot(args) => {
            commands::plot(args.report.as_deref(), args.sweep.as_deref(), &args.out_dir)
        }
    }
}
