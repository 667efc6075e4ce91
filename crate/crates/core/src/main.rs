//! Thin experiment CLI over the library; the examples/ directory is the
//! primary guided interface.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use alignsim::error::Error;
use alignsim::harness::{
    compare_settings, csv_string, fit_rate, parse_csv, run_sweep_with_workers, ExperimentConfig,
    Mode,
};

#[derive(Parser)]
#[command(name = "alignsim", version, about = "Offline alignment simulator with private and corrupted labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Bound the worker pool; defaults to all cores.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by the config as-is.
    Sweep(#[command(flatten)] SweepArgs),
    /// Run the sweep with the mode forced to `estimate`.
    Estimate(#[command(flatten)] SweepArgs),
    /// Run the sweep with the mode forced to `rlhf`.
    Rlhf(#[command(flatten)] SweepArgs),
    /// Run the sweep with the mode forced to `dpo`.
    Dpo(#[command(flatten)] SweepArgs),
    /// Run the sweep with the mode forced to `kappa`.
    Kappa(#[command(flatten)] SweepArgs),
    /// Fit a log-log rate from a sweep CSV.
    Rates {
        /// Input CSV produced by `sweep`.
        #[arg(long = "in")]
        input: PathBuf,
        /// Field on the x axis (e.g. n).
        #[arg(long)]
        x: String,
        /// Field on the y axis (e.g. est_err_l2).
        #[arg(long)]
        y: String,
    },
    /// Paired ctl/ltc comparison from a sweep CSV.
    Compare {
        #[arg(long = "in")]
        input: PathBuf,
        /// Metric field to compare (e.g. est_err_l2).
        #[arg(long)]
        metric: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Sweep(args) => sweep(args, None),
        Command::Estimate(args) => sweep(args, Some(Mode::Estimate)),
        Command::Rlhf(args) => sweep(args, Some(Mode::Rlhf)),
        Command::Dpo(args) => sweep(args, Some(Mode::Dpo)),
        Command::Kappa(args) => sweep(args, Some(Mode::Kappa)),
        Command::Rates { input, x, y } => rates(input, &x, &y),
        Command::Compare { input, metric } => compare(input, &metric),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config(_) | Error::Json(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn sweep(args: SweepArgs, mode_override: Option<Mode>) -> Result<ExitCode, Error> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(mode) = mode_override {
        cfg.mode = mode;
    }
    let result = run_sweep_with_workers(&cfg, args.workers)?;
    std::fs::write(&args.out, csv_string(&result.records))?;
    println!(
        "wrote {} rows to {} ({} failed)",
        result.records.len(),
        args.out.display(),
        result.failures
    );
    Ok(if result.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn rates(input: PathBuf, x: &str, y: &str) -> Result<ExitCode, Error> {
    let records = parse_csv(&std::fs::read_to_string(&input)?)?;
    let slope = fit_rate(&records, x, y)?;
    println!("slope log({y}) / log({x}) = {slope:.6}");
    Ok(ExitCode::SUCCESS)
}

fn compare(input: PathBuf, metric: &str) -> Result<ExitCode, Error> {
    let records = parse_csv(&std::fs::read_to_string(&input)?)?;
    let summary = compare_settings(&records, metric)?;
    println!(
        "pairs={} ties={} mean_ctl={:.6} mean_ltc={:.6} ratio={:.4} win_fraction={:.4}",
        summary.pairs,
        summary.ties,
        summary.mean_ctl,
        summary.mean_ltc,
        summary.ratio,
        summary.win_fraction
    );
    Ok(ExitCode::SUCCESS)
}
