use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use edgefbg::checkpoint::Checkpoint;
use edgefbg::config::{load_space, RunConfig};
use edgefbg::dataset::Dataset;
use edgefbg::pairs::{DEFAULT_BAND, DEFAULT_PAIR_BUDGET};
use edgefbg::run::{self, SplitChoice};
use edgefbg::simulator::GeneratorConfig;
use edgefbg::{Error, Result};

const USAGE_EXIT: u8 = 2;

#[derive(Parser)]
#[command(
    name = "edgefbg",
    version,
    about = "Edge-FBG shape sensing: simulate, train, tune and evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset of spectra and marker chains.
    Generate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Run config whose `generator` section sets sampler, layout and noise.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the configured model and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_checkpoint: PathBuf,
        /// Per-epoch CSV; defaults to the checkpoint path plus `.history.csv`.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Hyperband search; appends every round to the ledger and prints the ranking.
    Tune {
        #[arg(long)]
        config: PathBuf,
        /// `layers`, `training`, `siamese` or a path to a space file.
        #[arg(long)]
        space: Option<String>,
        #[arg(long)]
        out_ledger: PathBuf,
    },
    /// Per-sample shape errors of a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pair RMSE thresholds and label counts for a dataset.
    Pairs {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PAIR_BUDGET)]
        budget: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_BAND)]
        band: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate { n, seed, out, config } => {
            let generator = match config {
                Some(p) => RunConfig::read(&p)?.generator,
                None => GeneratorConfig::default(),
            };
            let (_, sidecar) = run::generate(n, seed, &generator, &out)?;
            println!("{}", serde_json::to_string(&sidecar)?);
        }
        Command::Train {
            config,
            out_checkpoint,
            history,
        } => {
            let cfg = RunConfig::read(&config)?;
            let result = run::train(&cfg)?;
            result.checkpoint.write(&out_checkpoint)?;
            let history_path = history.unwrap_or_else(|| {
                let mut p = out_checkpoint.clone().into_os_string();
                p.push(".history.csv");
                p.into()
            });
            write_text(&history_path, &result.history.to_csv())?;
            println!(
                "{}",
                serde_json::json!({
                    "checkpoint": out_checkpoint,
                    "history": history_path,
                    "epochs": result.history.epochs.len(),
                    "best_epoch": result.history.best_epoch,
                    "best_val_rmse": result.history.best_val_rmse,
                    "stopped_early": result.history.stopped_early,
                })
            );
        }
        Command::Tune {
            config,
            space,
            out_ledger,
        } => {
            let cfg = RunConfig::read(&config)?;
            let name = space
                .or_else(|| cfg.hyperband.space.clone())
                .ok_or_else(|| Error::Config("no search space given (--space or hyperband.space)".into()))?;
            let ds = Dataset::read(cfg.dataset_path()?)?;
            let report = run::tune(&cfg, &ds, load_space(&name)?, Some(out_ledger))?;
            println!("{}", serde_json::to_string_pretty(&report.ranking)?);
        }
        Command::Eval {
            checkpoint,
            dataset,
            split,
            out,
        } => {
            let which: SplitChoice = split.parse()?;
            let mut ck = Checkpoint::read(&checkpoint)?;
            let ds = Dataset::read(&dataset)?;
            let report = run::evaluate(&mut ck, &ds, which)?;
            log::info!(
                "{} samples: median tip error {:.4} mm, median RMSE {:.4} mm",
                report.samples.len(),
                report.tip_error.median,
                report.rmse.median
            );
            emit(out.as_deref(), &report.to_csv())?;
        }
        Command::Pairs {
            dataset,
            budget,
            seed,
            band,
            out,
        } => {
            let ds = Dataset::read(&dataset)?;
            let report = run::pairs_report(&ds, budget, seed, band)?;
            emit(out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))?;
        }
    }
    Ok(())
}

fn fail(kind: &str, code: u8, msg: &str) -> ExitCode {
    let msg = msg.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error kind={kind} code={code} msg={}", serde_json::Value::from(msg));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", USAGE_EXIT, &e.to_string()),
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), e.exit_code() as u8, &e.to_string()),
    }
}
