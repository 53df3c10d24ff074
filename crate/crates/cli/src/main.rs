mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  internal error
  2  invalid command line
  3  file missing or unreadable (kind=io)
  4  malformed input file (kind=parse, format, bad-magic, truncated, unsupported-dtype,
     duplicate-name, shape-mismatch, missing-tensor)
  5  infeasible configuration or data (kind=config, contract, dimension)
  6  unknown device (kind=unknown-device)
  7  training diverged (kind=non-finite)

Errors are printed to stderr as one line: error: kind=<kind> code=<n> <message>
GAZE_ENGINE_THREADS sets the worker count (default 1).";

#[derive(Parser)]
#[command(name = "gazetrack", version, about = "Synthetic gaze data, training, calibration and evaluation", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    SynthGen {
        #[arg(long)]
        subjects: u32,
        #[arg(long)]
        dots: u32,
        #[arg(long)]
        frames: u32,
        #[arg(long)]
        device: String,
        #[arg(long, default_value = "portrait")]
        orientation: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Id of the first subject, to keep several generated corpora disjoint.
        #[arg(long, default_value_t = 0)]
        first_subject: u32,
        /// Add to an existing dataset instead of requiring an empty directory.
        #[arg(long)]
        append: bool,
        /// Crop resolution: desk (32 px) or full (224 px).
        #[arg(long, default_value = "desk")]
        scale: String,
        /// Device table to look the device up in (defaults to the built-in table).
        #[arg(long)]
        devices: Option<PathBuf>,
    },
    /// Train a network from scratch.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        augment_train: bool,
        #[arg(long, value_parser = ["eyes", "face", "facegrid"])]
        ablate: Option<String>,
    },
    /// Continue training on one device and orientation.
    Finetune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        device: String,
        #[arg(long)]
        orientation: String,
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Schedule for the fine-tuning run (defaults to the desk schedule).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score a model on a dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test_augment: bool,
        #[arg(long)]
        report: PathBuf,
    },
    /// Score per-subject calibrated predictions.
    Calibrate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_parser = ["0", "4", "5", "9", "13"])]
        k: String,
        #[arg(long)]
        report: PathBuf,
        /// Ridge penalty (defaults to the model's training configuration).
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Train a small student against a trained teacher.
    Distill {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Error as a function of subject count and samples per subject.
    Study {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        budgets: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Training schedule for every budget (defaults to the desk schedule).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        /// Fraction of subjects held out for testing.
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
    },
}

fn exit_code(e: &anyhow::Error) -> (u8, &'static str) {
    if let Some(g) = e.downcast_ref::<gazetrack::Error>() {
        let kind = g.kind();
        let code = match kind {
            "io" => 3,
            "parse" | "format" | "bad-magic" | "truncated" | "unsupported-dtype" | "duplicate-name"
            | "shape-mismatch" | "missing-tensor" => 4,
            "config" | "contract" | "dimension" => 5,
            "unknown-device" => 6,
            "non-finite" => 7,
            _ => 1,
        };
        return (code, kind);
    }
    if e.downcast_ref::<std::io::Error>().is_some() {
        return (3, "io");
    }
    (1, "internal")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::init_threads().and_then(|_| commands::run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, kind) = exit_code(&e);
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: kind={kind} code={code} {msg}");
            ExitCode::from(code)
        }
    }
}
