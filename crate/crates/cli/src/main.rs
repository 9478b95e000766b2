//! `belief`: dataset generation, training, evaluation, memory inspection and
//! invariant gates for the belief-memory agent.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use belief_core::config::RunConfig;
use belief_core::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "belief", version, about = "Belief-aware retrieval memory agent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Shared {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (JSON lines).
    GenData {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        sessions: Option<usize>,
    },
    /// Train a model; writes model.bmp, bank.bmb, metrics.jsonl and config.txt.
    Train {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        data: PathBuf,
        /// Passes over the training sessions.
        #[arg(long)]
        epochs: Option<usize>,
        /// Replace every belief vector with zeros.
        #[arg(long)]
        no_belief: bool,
        /// Keep policy and value gradients out of the backbone.
        #[arg(long)]
        freeze_backbone: bool,
        /// Start from this checkpoint instead of a fresh initialization.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint; writes a JSON report.
    Eval {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        no_belief: bool,
        /// Sample answers instead of taking the argmax.
        #[arg(long)]
        sampled: bool,
        /// Answering head: policy or answer.
        #[arg(long)]
        head: Option<String>,
        /// Score the dataset labels themselves (harness check).
        #[arg(long, hide = true)]
        oracle: bool,
    },
    /// Print a bank file and run a query against it.
    InspectMemory {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        bank: PathBuf,
        /// Comma-separated query vector; defaults to the first stored key.
        #[arg(long)]
        query: Option<String>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Entries to print.
        #[arg(long, default_value_t = 20)]
        limit: usize,
    },
    /// Run the invariant gates.
    Verify {
        #[command(flatten)]
        shared: Shared,
        /// Run only these gates.
        #[arg(long = "gate")]
        gates: Vec<String>,
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

fn resolve(shared: &Shared, extra: &[(&str, String)]) -> belief_core::Result<RunConfig> {
    let mut cfg = match &shared.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for kv in &shared.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = shared.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    for (k, v) in extra {
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Shape { .. } | Error::Format { .. } | Error::Parse { .. } => 2,
        Error::Numeric(_) => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> belief_core::Result<bool> {
    match cli.command {
        Command::GenData { shared, sessions } => {
            let extra: Vec<_> = sessions.map(|n| ("sessions", n.to_string())).into_iter().collect();
            let cfg = resolve(&shared, &extra)?;
            commands::gen_data(&cfg, &shared).map(|_| true)
        }
        Command::Train {
            shared,
            data,
            epochs,
            no_belief,
            freeze_backbone,
            checkpoint,
        } => {
            let mut extra = Vec::new();
            if let Some(n) = epochs {
                extra.push(("epochs", n.to_string()));
            }
            if no_belief {
                extra.push(("belief", "false".to_string()));
            }
            if freeze_backbone {
                extra.push(("freeze_backbone", "true".to_string()));
            }
            let cfg = resolve(&shared, &extra)?;
            commands::train(&cfg, &shared, &data, checkpoint.as_deref()).map(|_| true)
        }
        Command::Eval {
            shared,
            data,
            checkpoint,
            no_belief,
            sampled,
            head,
            oracle,
        } => {
            let mut extra = Vec::new();
            if no_belief {
                extra.push(("belief", "false".to_string()));
            }
            if sampled {
                extra.push(("inference", "sampled".to_string()));
            }
            if let Some(h) = head {
                extra.push(("answer_head", h));
            }
            let cfg = resolve(&shared, &extra)?;
            commands::eval(&cfg, &shared, &data, &checkpoint, oracle).map(|_| true)
        }
        Command::InspectMemory {
            shared,
            bank,
            query,
            k,
            limit,
        } => commands::inspect_memory(&shared, &bank, query.as_deref(), k, limit).map(|_| true),
        Command::Verify {
            shared,
            gates,
            inject_fault,
        } => {
            let cfg = resolve(&shared, &[])?;
            commands::verify(&cfg, &shared, &gates, inject_fault.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
