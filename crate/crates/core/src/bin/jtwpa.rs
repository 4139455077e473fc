use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use jtwpa::config::RunConfig;
use jtwpa::tasks::{self, Command, RunOptions};
use jtwpa::{Convention, Preset};

#[derive(Parser)]
#[command(
    name = "jtwpa",
    version,
    about = "JTWPA gain, transient, fitting and noise recipes"
)]
struct Cli {
    /// INI run config; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    #[arg(long, global = true, value_enum)]
    convention: Option<ConventionArg>,
    #[arg(long, global = true, value_enum)]
    preset: Option<PresetArg>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Closed-form gain profiles over a pump-frequency list.
    Gain,
    /// Transient ladder simulation: gain, transmission, compression or raw record.
    Timedomain,
    /// Dispersion fit of circuit parameters from VNA traces.
    Fit,
    /// Y-factor calibration and added-noise extraction.
    Noise,
    /// Flux and pump-power scan for an operating point.
    Matchpoint,
}

#[derive(ValueEnum, Clone, Copy)]
enum ConventionArg {
    Corrected,
    AsPrinted,
}

#[derive(ValueEnum, Clone, Copy)]
enum PresetArg {
    JtwpaA,
    JtwpaB,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path),
        None => RunConfig::parse("", std::env::current_dir().unwrap_or_default()),
    };
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let opts = RunOptions {
        out_dir: cli.out,
        workers: cli.workers,
        convention: cli.convention.map(|c| match c {
            ConventionArg::Corrected => Convention::Corrected,
            ConventionArg::AsPrinted => Convention::AsPrinted,
        }),
        preset: cli.preset.map(|p| match p {
            PresetArg::JtwpaA => Preset::JtwpaA,
            PresetArg::JtwpaB => Preset::JtwpaB,
        }),
    };
    let cmd = match cli.command {
        Cmd::Gain => Command::Gain,
        Cmd::Timedomain => Command::Timedomain,
        Cmd::Fit => Command::Fit,
        Cmd::Noise => Command::Noise,
        Cmd::Matchpoint => Command::Matchpoint,
    };
    match tasks::run(cmd, &cfg, &opts) {
        Ok(outcome) => {
            for f in &outcome.failures {
                eprintln!("failed: {}: {}", f.task, f.error);
            }
            eprintln!(
                "wrote {} files to {}",
                outcome.files.len(),
                opts.out_dir.display()
            );
            if outcome.succeeded() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
