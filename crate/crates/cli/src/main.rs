//! `metaadapt`: collect trajectories, meta-train, evaluate controllers, report.
//!
//! Exit codes: 0 success, 2 configuration error, 3 simulation divergence,
//! 4 checkpoint or data incompatibility, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use metaadapt::pipeline::{self, EvalOptions, TrainOptions};
use metaadapt::scenario::Scenario;
use metaadapt::Error;

#[derive(Debug, Parser)]
#[command(name = "metaadapt", version, about = "Meta-learned adaptive control experiments")]
struct Cli {
    /// Scenario TOML; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed, overrides the scenario's.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output root.
    #[arg(long, global = true, env = "METAADAPT_OUT", default_value = "runs")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fly the nominal PD controller on random references and log the data.
    Collect,
    /// Meta-train a network on the collected data.
    Train {
        /// Plain regression without the inner adaptation step.
        #[arg(long)]
        vanilla: bool,
        #[arg(long)]
        epochs: Option<usize>,
        /// Exact meta-gradient through the inner step.
        #[arg(long)]
        second_order: bool,
    },
    /// Closed-loop evaluation on the scenario's reference.
    Evaluate {
        /// Comma-separated controller names.
        #[arg(long, value_delimiter = ',')]
        controllers: Option<Vec<String>>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Print the table for the last evaluation.
    Report,
}

fn load_scenario(cli: &Cli) -> metaadapt::Result<Scenario> {
    let mut sc = match &cli.config {
        Some(path) => Scenario::load(path)?,
        None => Scenario::default(),
    };
    if let Some(seed) = cli.seed {
        sc.seed = seed;
    }
    Ok(sc)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let sc = load_scenario(&cli)?;
    let root = &cli.out;
    match cli.command {
        Command::Collect => {
            for path in pipeline::collect(&sc, root)? {
                println!("{}", path.display());
            }
        }
        Command::Train {
            vanilla,
            epochs,
            second_order,
        } => {
            let opts = TrainOptions {
                vanilla,
                epochs,
                second_order,
            };
            let s = pipeline::train(&sc, root, &opts)?;
            println!("tasks {} (skipped trajectories {})", s.tasks, s.skipped);
            if let Some(last) = s.history.last() {
                println!(
                    "epoch {}: meta {:.6} post-adapt {:.6} direct {:.6}",
                    last.epoch, last.meta_loss, last.post_adapt_loss, last.direct_loss
                );
            }
            println!("{}", s.checkpoint.display());
        }
        Command::Evaluate { controllers, repeats } => {
            let metrics = pipeline::evaluate(&sc, root, &EvalOptions { controllers, repeats })?;
            print!("{}", pipeline::report_table(&metrics));
        }
        Command::Report => {
            let table = pipeline::report(&sc, root).context("no evaluation to report; run `evaluate` first")?;
            print!("{table}");
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        Some(Error::Divergence { .. }) => 3,
        Some(Error::Incompatible(_)) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
