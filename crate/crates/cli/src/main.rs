use std::path::PathBuf;
use std::process::ExitCode;

use affseg_cli::commands::{self, InferArgs, SynthArgs, DEFAULT_SPLIT_RATIO};
use affseg_cli::config::{parse_override, RunConfig};
use affseg_cli::{CliError, EXIT_USAGE};
use clap::{Parser, Subcommand};

/// Spatio-temporal affordance segmentation from RGB-D interaction sequences.
///
/// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
/// 3 numeric divergence. Runs are written under $AFFSEG_RUN_ROOT (default ./runs).
#[derive(Parser)]
#[command(name = "affseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset split into train/ and val/.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fraction of sequences in the training split.
        #[arg(long, default_value_t = DEFAULT_SPLIT_RATIO)]
        split_ratio: f64,
        #[arg(long, default_value_t = 12)]
        frames: usize,
        /// Square frame size in pixels.
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Precompute colorized scene flow for every sequence of a dataset.
    Flow {
        dataset: PathBuf,
        /// Recompute flow that is already cached.
        #[arg(long)]
        force: bool,
        #[arg(long, default_value_t = 10)]
        target_fps: u32,
    },
    /// Train a model; writes config.json, history.csv and checkpoint.bin.
    Train {
        /// JSON run configuration; every key is optional.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a field by dotted path, e.g. --set train.learning_rate=1e-4.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Ablation variant: rgb, rgb-attn, rgb-attn-2dflow, rgbd, rgbd-attn, rgbd-attn-3dflow.
        #[arg(long)]
        variant: Option<String>,
        /// Dataset root (shorthand for --set data.root=...).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Run directory name (shorthand for --set run_name=...).
        #[arg(long)]
        name: Option<String>,
        /// Continue from a checkpoint written with the same configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "val")]
        split: String,
        /// video: full sequences; static: last frame with zero-motion flow.
        #[arg(long, default_value = "video")]
        mode: String,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        target_fps: u32,
    },
    /// Predict affordances for an image or a sequence directory.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// PNG image (center-cropped and resized) or a sequence directory.
        #[arg(long)]
        input: PathBuf,
        /// 16-bit depth PNG matching --input, for RGB-D checkpoints.
        #[arg(long)]
        depth: Option<PathBuf>,
        /// Pixels whose confidence does not exceed this are left unlabeled.
        #[arg(long, default_value_t = 0.75)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        target_fps: u32,
    },
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth {
            count,
            out,
            seed,
            split_ratio,
            frames,
            size,
        } => {
            let (train, val) = commands::synth(&SynthArgs {
                count,
                out: out.clone(),
                seed,
                split_ratio,
                frames,
                size,
            })?;
            println!("wrote {train} train and {val} val sequences to {}", out.display());
        }
        Command::Flow {
            dataset,
            force,
            target_fps,
        } => {
            let s = commands::flow(&dataset, target_fps, force)?;
            for (dir, err) in &s.failed {
                eprintln!("error: {}: {err}", dir.display());
            }
            println!("flow: {} written, {} up to date, {} failed", s.written, s.skipped, s.failed.len());
            if !s.failed.is_empty() {
                return Err(CliError::Data(format!("{} sequences failed", s.failed.len())));
            }
        }
        Command::Train {
            config,
            overrides,
            variant,
            data,
            name,
            resume,
        } => {
            let mut sets = overrides.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>()?;
            if let Some(v) = variant {
                sets.push(("variant".into(), v.into()));
            }
            if let Some(d) = data {
                sets.push(("data.root".into(), d.to_string_lossy().into_owned().into()));
            }
            if let Some(n) = name {
                sets.push(("run_name".into(), n.into()));
            }
            let config = RunConfig::resolve(config.as_deref(), &sets)?;
            let out = commands::train(&config, resume.as_deref(), |line| println!("{line}"))?;
            println!("run written to {}", out.run_dir.display());
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            mode,
            json,
            target_fps,
        } => {
            let mode = commands::parse_mode(&mode)?;
            let report = commands::eval(&checkpoint, &data, &split, mode, target_fps)?;
            print!("{}", report.to_table());
            if let Some(path) = json {
                let text = serde_json::to_string_pretty(&report).expect("report serializes");
                std::fs::write(&path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            }
        }
        Command::Infer {
            checkpoint,
            input,
            depth,
            threshold,
            out,
            target_fps,
        } => {
            let (labels, overlay, label_png) = commands::infer(&InferArgs {
                checkpoint: &checkpoint,
                input: &input,
                depth: depth.as_deref(),
                threshold,
                out: &out,
                target_fps,
            })?;
            let labelled = labels.iter().filter(|&&l| l > 0).count();
            println!(
                "{labelled} of {} pixels labeled; wrote {} and {}",
                labels.len(),
                overlay.display(),
                label_png.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
