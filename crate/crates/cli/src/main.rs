//! Command-line workflows: build models, run float or quantized inference,
//! calibrate and quantize, re-execute through the streaming simulator,
//! score predictions, derive energy metrics, and extract Pareto fronts.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use crackseg::Error;

#[derive(Parser)]
#[command(name = "crackseg", version, about = "Channel-scaled U-Net tooling for edge deployment studies", max_term_width = 100)]
struct Cli {
    /// Optional key=value configuration file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a model, write its weight container, and report its stats.
    Build {
        /// Channel scale: one of 2, 4, 8, 16, 32.
        #[arg(long)]
        c: Option<usize>,
        /// Decoder upsampling: "tconv" or "nearest".
        #[arg(long)]
        upsample: Option<String>,
        /// Parameter initialization seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output container path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run float inference and write argmax masks.
    Infer {
        /// Float weight container.
        #[arg(long)]
        model: Option<PathBuf>,
        /// One image file, or a directory of .ppm/.pgm images.
        #[arg(long)]
        images: Option<PathBuf>,
        /// Directory for predicted masks.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Also dump raw logits (little-endian f32) here.
        #[arg(long)]
        logits_dir: Option<PathBuf>,
    },
    /// Fold batch norm, calibrate activations, quantize the weights.
    Quantize {
        /// Float weight container.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Directory of calibration images.
        #[arg(long)]
        calib_dir: Option<PathBuf>,
        /// Weight precision: 8 or 4 (activations stay int8).
        #[arg(long)]
        weight_bits: Option<u8>,
        /// Output container path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-execute a quantized model through the streaming simulator.
    Simulate {
        /// Quantized weight container.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Input image.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Skip placement: "on_chip" or "off_chip".
        #[arg(long)]
        skip: Option<String>,
        /// Clock frequency in MHz.
        #[arg(long)]
        clock_mhz: Option<f64>,
        /// Stream the same image this many times (steady-state measurement).
        #[arg(long)]
        frames: Option<usize>,
        /// Write the simulation report as CSV here.
        #[arg(long)]
        report_csv: Option<PathBuf>,
        /// Write the stage plan dump here.
        #[arg(long)]
        plan_dump: Option<PathBuf>,
        /// Cross-check simulator logits against the integer engine.
        #[arg(long)]
        verify: bool,
    },
    /// Score predicted masks against ground truth, or derive energy
    /// efficiency columns from a measurement table.
    Metrics {
        /// Directory of predicted masks (with --gt-dir).
        #[arg(long)]
        pred_dir: Option<PathBuf>,
        /// Directory of ground-truth masks.
        #[arg(long)]
        gt_dir: Option<PathBuf>,
        /// Measurement CSV (alternative mode).
        #[arg(long)]
        measurements: Option<PathBuf>,
        /// Output CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the Pareto front of a design-point table.
    Pareto {
        /// Measurement CSV of candidate points.
        #[arg(long)]
        points: Option<PathBuf>,
        /// Output CSV for the front.
        #[arg(long)]
        front_out: Option<PathBuf>,
        /// Optional SVG scatter rendering.
        #[arg(long)]
        svg_out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (class, code) = classify(&e);
            eprintln!("error[{class}]: {e}");
            ExitCode::from(code)
        }
    }
}

/// Exit codes: 0 ok, 2 usage/config, 3 data, 4 verification.
fn classify(e: &Error) -> (&'static str, u8) {
    match e {
        Error::Config(_) => ("config", 2),
        Error::Verification(_) => ("verify", 4),
        _ => ("data", 3),
    }
}

fn run(cli: Cli) -> crackseg::Result<()> {
    let config_path = cli.config.as_deref();
    match cli.command {
        Command::Build { c, upsample, seed, out } => {
            commands::build(config_path, c, upsample, seed, out)
        }
        Command::Infer { model, images, out_dir, logits_dir } => {
            commands::infer(config_path, model, images, out_dir, logits_dir)
        }
        Command::Quantize { model, calib_dir, weight_bits, out } => {
            commands::quantize(config_path, model, calib_dir, weight_bits, out)
        }
        Command::Simulate { model, input, skip, clock_mhz, frames, report_csv, plan_dump, verify } => {
            commands::simulate(
                config_path, model, input, skip, clock_mhz, frames, report_csv, plan_dump, verify,
            )
        }
        Command::Metrics { pred_dir, gt_dir, measurements, out } => {
            commands::metrics(config_path, pred_dir, gt_dir, measurements, out)
        }
        Command::Pareto { points, front_out, svg_out } => {
            commands::pareto(config_path, points, front_out, svg_out)
        }
    }
}
