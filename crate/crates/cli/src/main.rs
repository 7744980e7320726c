use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use wdffu_core::config::SEED_ENV;
use wdffu_core::train::{self, SplitName};
use wdffu_core::{build_model, selftest, Checkpoint, DataSource, Error, TrainConfig};

#[derive(Parser)]
#[command(
    name = "wdffu",
    version,
    about = "Breast-ultrasound lesion segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and keep the best checkpoint by validation Dice.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset root with benign/ and malignant/ subdirectories.
        #[arg(long, conflicts_with = "synth")]
        data: Option<PathBuf>,
        /// Synthetic data, e.g. `n=8,size=64`.
        #[arg(long)]
        synth: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on one split of a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        report: PathBuf,
    },
    /// Segment a single image.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the probability map.
        #[arg(long)]
        probs: Option<PathBuf>,
    },
    /// Run built-in gradient, wavelet, scan and HD95 checks.
    Selftest,
    /// Print the per-module parameter report.
    Params {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            TrainConfig::from_text(&text).with_context(|| format!("reading {}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    cfg.apply_seed_override(std::env::var(SEED_ENV).ok().as_deref())?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            data,
            synth,
            out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(d) = data {
                cfg.data = Some(DataSource::Dir(d));
            }
            if let Some(s) = synth {
                cfg.data = Some(DataSource::parse_synth(&s)?);
            }
            let outcome = train::train(&cfg, Some(&out))?;
            println!(
                "best val dice {:.4} at epoch {} ({} epochs, {} steps)",
                outcome.best.best_val_dice,
                outcome.best.epoch,
                outcome.log.len(),
                outcome.last.step
            );
            println!("checkpoint: {}", out.join(train::BEST_CKPT).display());
        }
        Command::Eval {
            ckpt,
            data,
            split,
            report,
        } => {
            let which = SplitName::parse(&split)?;
            let ck = Checkpoint::load(&ckpt)?;
            let rep = train::evaluate_split(&ck, DataSource::Dir(data), which)?;
            fs::write(&report, rep.to_csv()).map_err(|e| Error::Io {
                path: report.clone(),
                source: e,
            })?;
            let agg = rep.aggregate();
            println!(
                "{} images: dice {:.4}±{:.4}, hd95 {:.3}±{:.3}",
                rep.len(),
                agg[0].mean,
                agg[0].std,
                agg[5].mean,
                agg[5].std
            );
        }
        Command::Predict {
            ckpt,
            image,
            out,
            probs,
        } => {
            let ck = Checkpoint::load(&ckpt)?;
            let mask = train::predict(&ck, &image, &out, probs.as_deref())?;
            println!("{}: {} foreground pixels", out.display(), mask.count());
        }
        Command::Selftest => {
            let seed = std::env::var(SEED_ENV)
                .ok()
                .and_then(|s| s.parse().ok())
                .unwrap_or(0);
            let results = selftest::run_all(seed)?;
            let mut failed = 0;
            for r in &results {
                println!(
                    "{} {}: {}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.detail
                );
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                return Err(Error::Numeric(format!("{failed} self-checks failed")).into());
            }
        }
        Command::Params { config } => {
            let cfg = load_config(config.as_deref())?;
            let model = build_model::<f64>(&cfg.model)?;
            println!("{}", model.param_report());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            let validation = e.downcast_ref::<Error>().is_some_and(Error::is_validation);
            ExitCode::from(if validation { 1 } else { 2 })
        }
    }
}
