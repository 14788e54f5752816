use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use serde::Serialize;

use mdpf::exec::{init_threads, Exec};
use mdpf_cli::commands;
use mdpf_cli::config::ExperimentConfig;
use mdpf_cli::Result;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Verb {
    Generate,
    Train,
    Eval,
    Diagnose,
}

/// Differentiable particle filter experiments.
#[derive(Debug, Parser)]
#[command(name = "mdpf", version)]
struct Args {
    verb: Verb,
    /// Experiment file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Replace the file's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Replace the file's output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Continue training from the output directory's checkpoint.
    #[arg(long)]
    resume: bool,
    /// Checkpoint directory to evaluate.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn print<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(args: Args) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    cfg.apply_overrides(args.seed, args.out_dir);
    if let Some(t) = args.threads {
        init_threads(t);
    }
    let exec = Exec::available();
    match args.verb {
        Verb::Generate => print(&commands::generate(&cfg, exec)?),
        Verb::Train => print(&commands::train(&cfg, exec, args.resume)?.summary),
        Verb::Eval => print(&commands::eval(&cfg, exec, args.checkpoint.as_deref())?),
        Verb::Diagnose => {
            let (report, runtime) = commands::diagnose(&cfg, exec)?;
            print(&report)?;
            if let Some(rt) = runtime {
                print(&rt)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = serde_json::json!({ "error": "usage", "message": e.to_string() });
            eprintln!("{err}");
            return ExitCode::from(2);
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}

