//! `mscanet` — synthesis, training, evaluation, ROC sweeps and the
//! cumulative ablation protocol from one binary.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 runtime numeric failure.

mod commands;
mod config;
mod overlay;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mscanet_core::Error;

#[derive(Parser)]
#[command(name = "mscanet", version, about = "Infrared small-target segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic small-target dataset
    Synth {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train a model per the experiment config
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint directory
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset directory
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Centroid matching distance in pixels
        #[arg(long, default_value_t = 3.0)]
        dist_px: f64,
        /// Output directory for report.json (and overlays)
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Also write per-image prediction overlays
        #[arg(long)]
        overlays: bool,
        /// Debug: feed ground truth as the prediction
        #[arg(long)]
        oracle: bool,
    },
    /// Threshold sweep: writes roc.csv and roc.png
    Roc {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Number of evenly spaced thresholds in (0, 1)
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 3.0)]
        dist_px: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Four-row cumulative ablation: baseline, +MSEDA, +PCBAM, +CAB
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Run the four rows concurrently
        #[arg(long)]
        parallel: bool,
    },
}

fn main() -> ExitCode {
    if let Err(e) = check_device() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> mscanet_core::Result<()> {
    match cli.cmd {
        Cmd::Synth { config } => commands::synth::run(&config),
        Cmd::Train { config, resume } => commands::train::run(&config, resume.as_deref()),
        Cmd::Eval {
            ckpt,
            data,
            threshold,
            dist_px,
            out,
            overlays,
            oracle,
        } => commands::eval::run(&ckpt, &data, threshold, dist_px, &out, overlays, oracle),
        Cmd::Roc {
            ckpt,
            data,
            steps,
            dist_px,
            out,
        } => commands::roc::run(&ckpt, &data, steps, dist_px, &out),
        Cmd::Ablate { config, parallel } => commands::ablate::run(&config, parallel),
    }
}

/// Runtime numeric failures exit 3; everything else is a usage/config error.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric { .. } | Error::NonFinite { .. } => 3,
        _ => 2,
    }
}

fn check_device() -> mscanet_core::Result<()> {
    match std::env::var("MSCANET_DEVICE") {
        Err(_) => Ok(()),
        Ok(v) if v.is_empty() || v.eq_ignore_ascii_case("cpu") => Ok(()),
        Ok(v) => Err(Error::Config(format!(
            "unsupported MSCANET_DEVICE '{v}': this build runs on cpu only"
        ))),
    }
}
