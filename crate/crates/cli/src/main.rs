//! `wdmatch`: train, evaluate and diagnose Wasserstein-regularized matchers.

mod commands;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wdmatch::models::Task;
use wdmatch::{Error, ErrorClass};

use crate::commands::{DiagnoseArgs, TrainArgs, TrainSource};
use crate::run_config::Overrides;

#[derive(Parser)]
#[command(name = "wdmatch", version, about = "Wasserstein-regularized text matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a matcher from a JSON run config.
    Train(TrainCmd),
    /// Score a checkpoint on a labeled dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// `classification` or `ranking`; must match the checkpoint.
        #[arg(long)]
        task: Option<String>,
        /// Defaults to vocab.txt next to the checkpoint.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Defaults to schema.json next to the checkpoint.
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Compare the Wasserstein estimates of two checkpoints on one dataset.
    DiagnoseWd {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "wd_diff.csv")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a synthetic shifted-domain dataset.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write projected features of every pair as CSV.
    DumpFeatures {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Run the built-in gradient, clipping, objective and metric checks.
    Selftest {
        #[arg(long, hide = true)]
        inject_gradient_fault: bool,
    },
    /// Convert SNLI, SciTail or WikiQA files into the pair TSV format.
    Convert {
        /// `snli`, `scitail` or `wikiqa`.
        #[arg(long)]
        format: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct TrainCmd {
    #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
    config: Option<PathBuf>,
    /// Repeat a run from its manifest.json; inputs must be unchanged.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Continue from a checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Defaults to $WDMATCH_OUT (or `runs`) / <config stem>-seed<seed>.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n1: Option<usize>,
    #[arg(long)]
    n2: Option<usize>,
    #[arg(long)]
    lr_critic: Option<f64>,
    #[arg(long)]
    lr_match: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train the plain matcher without critic.
    #[arg(long)]
    no_regularizer: bool,
}

fn parse_task(s: &str) -> Result<Task, Error> {
    match s {
        "ranking" => Ok(Task::Ranking),
        // Class count comes from the checkpoint; only the kind is compared.
        "classification" => Ok(Task::Classification { classes: 0 }),
        other => Err(Error::config("task", format!("unknown task `{other}`"))),
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Train(t) => {
            let source = match (t.config, t.manifest) {
                (Some(c), _) => TrainSource::Config(c),
                (None, Some(m)) => TrainSource::Manifest(m),
                (None, None) => return Err(Error::config("config", "either --config or --manifest is required")),
            };
            commands::train(TrainArgs {
                source,
                overrides: Overrides {
                    lambda: t.lambda,
                    clip: t.clip,
                    k: t.k,
                    n1: t.n1,
                    n2: t.n2,
                    lr_critic: t.lr_critic,
                    lr_match: t.lr_match,
                    epochs: t.epochs,
                    seed: t.seed,
                    no_regularizer: t.no_regularizer,
                },
                out_dir: t.out_dir,
                resume: t.resume,
            })?
        }
        Command::Eval {
            checkpoint,
            data,
            task,
            vocab,
            schema,
        } => {
            let task = task.as_deref().map(parse_task).transpose()?;
            commands::eval(&checkpoint, &data, task, vocab.as_deref(), schema.as_deref())?
        }
        Command::DiagnoseWd { a, b, data, out, seed } => commands::diagnose_wd(DiagnoseArgs {
            a: &a,
            b: &b,
            data: &data,
            out: &out,
            seed,
        })?,
        Command::Synth { spec, out_dir, seed } => commands::synth(&spec, &out_dir, seed)?,
        Command::DumpFeatures {
            checkpoint,
            data,
            out,
            vocab,
            schema,
        } => commands::dump(&checkpoint, &data, &out, vocab.as_deref(), schema.as_deref())?,
        Command::Selftest { inject_gradient_fault } => {
            return Ok(if commands::selftest(inject_gradient_fault) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            });
        }
        Command::Convert { format, input, output } => commands::convert_cmd(&format, &input, &output)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
