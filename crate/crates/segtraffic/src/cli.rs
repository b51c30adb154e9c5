//! Batch command-line interface: `run`, `train`, `eval`, `synth`.
//!
//! Results are printed to stdout as JSON; diagnostics go to stderr. Exit
//! codes: 0 success, 1 runtime error, 2 usage error. Log verbosity comes
//! from the `SEGTRAFFIC_LOG` environment variable (error, info, debug).

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::PipelineConfig;
use crate::error::Result;
use crate::imageio::{
    frame_file_name, gen_synthetic_sequence, ground_truth_jsonl, write_pgm, SceneConfig,
};

#[derive(Parser)]
#[command(
    name = "segtraffic",
    version,
    about = "Vehicle segmentation pipeline for frame directories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the four-stage pipeline over a frame directory.
    Run {
        /// Directory of frame_%06d.pgm files.
        #[arg(long)]
        frames: PathBuf,
        /// JSON config file with flat dotted keys.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (masks/, meshes/, detections.jsonl, summary.json).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the detection subnet against ground truth.
    Train {
        #[arg(long)]
        frames: PathBuf,
        /// Ground-truth JSON-lines file.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Where to write the TDET1 model blob.
        #[arg(long = "out-model")]
        out_model: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate predictions against ground truth (per-class AP and mAP).
    Eval {
        /// Predictions JSON-lines file.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// IoU threshold for a match.
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Optional CSV dump of the PR points.
        #[arg(long = "pr-csv")]
        pr_csv: Option<PathBuf>,
    },
    /// Render a synthetic scene into frames plus ground truth.
    Synth {
        /// Scene description JSON file.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
    },
}

fn run_command(command: Command) -> Result<()> {
    match command {
        Command::Run {
            frames,
            config,
            out,
            seed,
        } => {
            let config = PipelineConfig::from_file(&config)?;
            let summary = crate::pipeline::run_pipeline(&frames, &config, &out, seed)?;
            println!("{}", serde_json::to_string(&summary).expect("serializable"));
        }
        Command::Train {
            frames,
            gt,
            config,
            out_model,
            seed,
        } => {
            let config = PipelineConfig::from_file(&config)?;
            let log = crate::pipeline::train_detector(&frames, &gt, &config, &out_model, seed)?;
            println!("{}", serde_json::to_string(&log).expect("serializable"));
        }
        Command::Eval {
            pred,
            gt,
            iou,
            pr_csv,
        } => {
            let report = crate::eval::evaluate(&pred, &gt, iou)?;
            if let Some(path) = pr_csv {
                std::fs::write(&path, crate::eval::pr_points_csv(&report))?;
            }
            println!("{}", serde_json::to_string(&report).expect("serializable"));
        }
        Command::Synth { config, out, seed } => {
            let scene: SceneConfig = serde_json::from_str(&std::fs::read_to_string(&config)?)
                .map_err(|e| crate::error::Error::Config(format!("bad scene config: {e}")))?;
            let (frames, gt) = gen_synthetic_sequence(&scene, seed)?;
            std::fs::create_dir_all(&out)?;
            for (i, frame) in frames.iter().enumerate() {
                std::fs::write(out.join(frame_file_name(i + 1)), write_pgm(frame))?;
            }
            std::fs::write(out.join("gt.jsonl"), ground_truth_jsonl(&gt))?;
            let boxes: usize = gt.iter().map(|g| g.len()).sum();
            println!(
                "{}",
                serde_json::json!({
                    "frames": frames.len(),
                    "ground_truth_boxes": boxes,
                    "out": out,
                })
            );
        }
    }
    Ok(())
}

/// Parses `argv` (including the program name) and executes one subcommand.
/// Returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ =
        env_logger::Builder::from_env(env_logger::Env::new().filter_or("SEGTRAFFIC_LOG", "error"))
            .try_init();

    match Cli::try_parse_from(argv) {
        Ok(cli) => match run_command(cli.command) {
            Ok(()) => 0,
            Err(err) => {
                eprintln!("error: {err}");
                1
            }
        },
        Err(parse_err) => {
            // help/version print to stdout and exit 0; usage errors print
            // to stderr and exit 2
            let _ = parse_err.print();
            parse_err.exit_code()
        }
    }
}
