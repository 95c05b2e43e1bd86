//! Thin command-line wrapper over [`shotplan::commands`]. All behavior
//! lives in the library; this binary only parses arguments, applies flag
//! overrides, and maps errors to exit codes.

use std::error::Error;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use shotplan::commands::{
    cmd_allocate, cmd_eval, cmd_report, cmd_synth, cmd_train, parse_policy, parse_stage,
    CommandError,
};
use shotplan::config::RunConfig;

#[derive(Parser)]
#[command(name = "shotplan", version, about = "Per-input shot planning under a token budget")]
struct Cli {
    /// Run configuration file.
    #[arg(long, global = true, default_value = "shotplan.toml")]
    config: PathBuf,

    /// Override every stage seed (synthesis, training, evaluation).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the artifact output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Label every sample with its minimal sufficient shot count.
    Synth,
    /// Train the shot-count controller.
    Train {
        /// Training stage: "mle" fits synthesized labels, "rl" fine-tunes.
        stage: String,
        /// Start "rl" from fresh weights instead of the checkpoint.
        #[arg(long)]
        from_scratch: bool,
    },
    /// Write a per-sample shot plan under the configured budget.
    Allocate {
        /// uniform, random, dynamic, or oracle.
        policy: String,
    },
    /// Run the configured policies and write reports and a trade-off curve.
    Eval {
        /// Comma-separated total-token budgets for a sweep, overriding the
        /// configuration's list.
        #[arg(long, value_delimiter = ',')]
        budgets: Vec<u64>,
    },
    /// Summarize artifacts already present in the output directory.
    Report,
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CommandError> {
    let mut config = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.override_seed(seed);
    }
    if let Some(out) = cli.out {
        config.override_out_dir(out);
    }
    match cli.command {
        Command::Synth => cmd_synth(&config),
        Command::Train { stage, from_scratch } => {
            cmd_train(&config, parse_stage(&stage)?, from_scratch)
        }
        Command::Allocate { policy } => cmd_allocate(&config, parse_policy(&policy)?),
        Command::Eval { budgets } => {
            if !budgets.is_empty() {
                config.eval.budgets = budgets;
            }
            cmd_eval(&config)
        }
        Command::Report => cmd_report(&config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(paths) => {
            for path in paths {
                println!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = err.source();
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
