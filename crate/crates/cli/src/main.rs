//! `fedembed`: one binary driving the whole pipeline — corpus generation,
//! training in five strategy modes, retrieval evaluation, text evaluation
//! and report comparison.
//!
//! Exit codes: 0 success, 2 configuration, 3 I/O, 4 numeric/crypto,
//! 5 data integrity. Logging via `FEDEMBED_LOG={error,warn,info,debug}`.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedembed_core::error::Error;
use fedembed_core::fed::Mode;

use commands::{EvalRetrievalArgs, TrainOverrides};

#[derive(Parser)]
#[command(name = "fedembed", version, about = "Federated embedding learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse::<Mode>().map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic training/eval corpus
    Gen {
        /// Run config JSON (defaults apply when omitted)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Override the corpus seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model in one of the strategy modes
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory holding train_client_*.jsonl
        #[arg(long)]
        data: PathBuf,
        /// central | independent | vanilla | fedavg | fede4rag
        #[arg(long, value_parser = parse_mode)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
        /// Override the run seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of communication rounds
        #[arg(long)]
        rounds: Option<usize>,
        /// Force encrypted aggregation on (fede4rag only)
        #[arg(long, conflicts_with = "no_he")]
        he: bool,
        /// Force encrypted aggregation off
        #[arg(long = "no-he")]
        no_he: bool,
        /// Client to train in independent mode
        #[arg(long)]
        client_id: Option<u64>,
    },
    /// Evaluate a checkpoint on held-out retrieval queries
    EvalRetrieval {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Model params JSON (final.json or round_<t>.json)
        #[arg(long)]
        checkpoint: PathBuf,
        /// Eval queries JSONL
        #[arg(long)]
        eval: PathBuf,
        /// Retrieval corpus JSONL
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Scale reported values by 100
        #[arg(long)]
        percent: bool,
        /// Similarity threshold for accuracy@k
        #[arg(long)]
        acc_theta: Option<f64>,
        /// threshold | label
        #[arg(long)]
        acc_mode: Option<String>,
        /// Run name for the CSV column (defaults to the checkpoint stem)
        #[arg(long)]
        run_name: Option<String>,
    },
    /// Score generated answers against references
    EvalText {
        /// Answers JSONL: {"query_id","candidate","reference"}
        #[arg(long)]
        answers: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Join metric reports into a side-by-side CSV
    Compare {
        /// Two or more report.json paths
        reports: Vec<PathBuf>,
        /// CSV output path (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } => 2,
        Error::Io { .. } => 3,
        Error::Dimension { .. }
        | Error::Degenerate { .. }
        | Error::Overflow { .. }
        | Error::Crypto(_) => 4,
        Error::MissingGolden(_) => 5,
        Error::Round { source, .. } => exit_code(source),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Gen { config, out, seed } => commands::cmd_gen(config.as_deref(), &out, seed),
        Command::Train {
            config,
            data,
            mode,
            out,
            seed,
            rounds,
            he,
            no_he,
            client_id,
        } => {
            let he_flag = if he {
                Some(true)
            } else if no_he {
                Some(false)
            } else {
                None
            };
            commands::cmd_train(
                config.as_deref(),
                &data,
                mode,
                &out,
                TrainOverrides {
                    seed,
                    rounds,
                    he: he_flag,
                    client_id,
                },
            )
        }
        Command::EvalRetrieval {
            config,
            checkpoint,
            eval,
            corpus,
            out,
            percent,
            acc_theta,
            acc_mode,
            run_name,
        } => commands::cmd_eval_retrieval(
            config.as_deref(),
            &checkpoint,
            &eval,
            &corpus,
            &out,
            EvalRetrievalArgs {
                percent,
                acc_theta,
                acc_mode,
                run_name,
            },
        ),
        Command::EvalText { answers, out } => commands::cmd_eval_text(&answers, &out),
        Command::Compare { reports, out } => commands::cmd_compare(&reports, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FEDEMBED_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
