//! Run configuration and the subcommands of the `mprvit` binary.
//!
//! Each subcommand is a library function in [`commands`]; [`run`] only maps
//! parsed flags onto them and prints. Errors map to distinct exit codes via
//! [`exit_code`].

pub mod commands;
pub mod config;

use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{Baseline, CountOutput, EvalOutput, SynthOutput, TrainArgs, TrainSummary};
pub use config::{Profile, RunConfig, DEFAULT_SPLIT};

use crate::data::{nifti_write, Modalities, Modality, PhantomConfig, Split};
use crate::error::{Error, Result};
use crate::train::checkpoint_load;

#[derive(Debug, Parser)]
#[command(
    name = "mprvit",
    version,
    about = "Structural MR to ADC synthesis: data, training, inference, metrics, complexity"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a deterministic synthetic phantom dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 12)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// X,Y,Z voxels; in-plane extents must be multiples of 4.
        #[arg(long, default_value = "64,64,8")]
        size: String,
        /// Train,val,test fractions.
        #[arg(long, default_value = "0.5,0.2,0.3")]
        split: String,
    },
    /// Train a generator on a dataset directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// t1w,flair | t1w | flair
        #[arg(long)]
        modalities: Option<String>,
        /// Extra `key=value` overrides, applied after the config file.
        #[arg(long = "set")]
        set: Vec<String>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Predict an ADC volume for one case directory.
    Synth {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions (`<id>.nii` in [-1, 1]) against a dataset.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// train | val | test | all
        #[arg(long, default_value = "test")]
        split: String,
        /// Directory of baseline predictions for paired t-tests.
        #[arg(long, conflicts_with = "baseline_modality")]
        baseline: Option<PathBuf>,
        /// Score an input modality as the baseline prediction.
        #[arg(long)]
        baseline_modality: Option<String>,
        #[arg(long, default_value = "paper_literal")]
        ssim_constants: String,
        /// Defaults to the prediction directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print parameter and batch-32 FLOP counts, or the residual-depth sweep.
    Count {
        /// Defaults to the full profile.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        sweep: bool,
        #[arg(long)]
        csv: bool,
    },
}

/// 2 config, 3 I/O and file format, 4 pairing, 5 numeric fault, 1 anything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Io(_) | Error::Format { .. } | Error::Unsupported(_) => 3,
        Error::Pairing(_) => 4,
        Error::Numeric(_) => 5,
        _ => 1,
    }
}

fn read_config(path: &std::path::Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    RunConfig::parse(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            out,
            cases,
            seed,
            size,
            split,
        } => {
            let cfg = PhantomConfig {
                cases,
                extents: commands::parse_size(&size)?,
                seed,
            };
            let ds = commands::gen_data(&out, &cfg, config::parse_split(&split)?)?;
            let (a, b, c) = ds.splits.sizes();
            println!(
                "wrote {} cases to {} (train {a}, val {b}, test {c})",
                ds.cases.len(),
                out.display()
            );
        }
        Command::Train {
            config,
            data,
            out,
            modalities,
            set,
            resume,
        } => {
            let mut run = read_config(&config)?;
            if let Some(m) = modalities {
                run.modalities = m.parse::<Modalities>()?;
            }
            run.data = data.or(run.data);
            run.out = out.or(run.out);
            run.apply_overrides(set.iter().map(String::as_str))?;
            let mut progress = |line: &str| println!("{line}");
            let s = commands::train(TrainArgs {
                run,
                resume: resume.as_deref(),
                progress: &mut progress,
            })?;
            if let Some(init) = s.initial_val {
                println!("initial val L1 {init:.6}");
            }
            println!(
                "{} epochs, best val L1 {:.6} at epoch {}{}",
                s.epochs,
                s.best_val,
                s.best_epoch,
                if s.stopped_early { " (early stop)" } else { "" }
            );
        }
        Command::Synth {
            checkpoint,
            case,
            out,
        } => {
            let ck = checkpoint_load(&checkpoint)?;
            let inputs = commands::read_case_dir(&case)?;
            let s = commands::synthesize(&ck, &inputs)?;
            if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            nifti_write(&out, &s.volume)?;
            println!(
                "{} slices, mean inference {:.4} s per slice, wrote {}",
                s.slices.len(),
                s.mean_slice_seconds,
                out.display()
            );
        }
        Command::Eval {
            pred,
            gt,
            split,
            baseline,
            baseline_modality,
            ssim_constants,
            out,
        } => {
            let split = if split == "all" {
                None
            } else {
                Some(split.parse::<Split>()?)
            };
            let base = match (&baseline, baseline_modality) {
                (Some(dir), _) => Baseline::Predictions(dir),
                (None, Some(m)) => Baseline::Modality(m.parse::<Modality>()?),
                (None, None) => Baseline::None,
            };
            let e = commands::eval(&pred, &gt, split, base, ssim_constants.parse()?)?;
            commands::write_eval(&commands::out_or(out, &pred), &e)?;
            if let Some(b) = &e.baseline {
                print!("{}", b.summary_text());
            }
            print!("{}", e.report.summary_text());
        }
        Command::Count { config, sweep, csv } => {
            let model = match config {
                Some(p) => read_config(&p)?.model,
                None => RunConfig::from_profile(Profile::Full).model,
            };
            print!("{}", commands::count(&model, sweep)?.render(csv));
        }
    }
    Ok(())
}
