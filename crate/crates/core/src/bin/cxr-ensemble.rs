use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cxr_ensemble::pipeline::{self, CutoffSet, PipelineConfig};
use cxr_ensemble::Result;

/// Multi-sized CNN ensemble for binary radiograph classification.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and its manifest.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Config override, `section.key=value`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Stratified train/validation/test split of a manifest.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Output directory [default: `split` beside the manifest's directory]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every branch and write the ensemble bundle.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Train branches on separate threads (same weights as sequential).
        #[arg(long)]
        parallel_branches: bool,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Score the test split, choose the cut-off and write the report.
    Eval {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long, default_value = "validation")]
        cutoff_set: CutoffSet,
        /// Output directory [default: `eval` beside the bundle]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score and classify images with a trained bundle.
    Predict {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        images: Vec<PathBuf>,
    },
    /// Re-render a stored results file.
    Report {
        #[arg(long)]
        results: PathBuf,
    },
    /// Write augmented copies of one image for inspection.
    AugmentPreview {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn sibling(p: &std::path::Path, name: &str) -> PathBuf {
    p.parent().map_or_else(|| PathBuf::from(name), |d| d.join(name))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            config,
            seed,
            mut overrides,
        } => {
            if let Some(s) = seed {
                overrides.push(format!("seed={s}"));
            }
            let cfg = PipelineConfig::load(config.as_deref(), &overrides)?;
            println!("{}", pipeline::run_synth(&cfg)?);
        }
        Command::Split {
            manifest,
            seed,
            out,
        } => {
            let out = out.unwrap_or_else(|| pipeline::default_split_dir(&manifest));
            let split = pipeline::run_split(&manifest, seed, &out)?;
            println!(
                "train {} / validation {} / test {} written to {}",
                split.train.len(),
                split.validation.len(),
                split.test.len(),
                out.display()
            );
        }
        Command::Train {
            config,
            parallel_branches,
            overrides,
        } => {
            let cfg = PipelineConfig::load(config.as_deref(), &overrides)?;
            let model = pipeline::run_train(&cfg, parallel_branches, |l| eprintln!("{l}"))?;
            print!("{}", pipeline::train_summary(&model));
            println!("bundle written to {}", cfg.paths.bundle.display());
        }
        Command::Eval {
            bundle,
            split,
            cutoff_set,
            out,
        } => {
            let out = out.unwrap_or_else(|| sibling(&bundle, "eval"));
            pipeline::run_eval(&bundle, &split, cutoff_set, &out)?;
            print!("{}", pipeline::run_report(&out.join(pipeline::RESULTS_JSON))?);
        }
        Command::Predict { bundle, images } => {
            print!(
                "{}",
                pipeline::format_predictions(&pipeline::run_predict(&bundle, &images)?)
            );
        }
        Command::Report { results } => print!("{}", pipeline::run_report(&results)?),
        Command::AugmentPreview {
            image,
            config,
            seed,
            count,
            out,
            overrides,
        } => {
            let cfg = PipelineConfig::load(config.as_deref(), &overrides)?;
            pipeline::augment_preview(&image, &cfg.augment, seed, count, &out)?;
            println!("{count} augmented images written to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
