use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sew_core::commands::{self, CommandError, Options, Summary};
use sew_core::config::RunConfig;

/// Self-evolving multi-agent workflows for code generation.
///
/// Exit codes: 0 ok, 2 config, 3 backend, 4 invalid workflow, 5 sandbox.
#[derive(Parser)]
#[command(name = "sew", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate default workflows from the template, one per scheme.
    Generate(Common),
    /// Evolve a workflow and its agents.
    Evolve(Common),
    /// Evaluate a workflow with pass@k.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Evaluate the single-agent baseline instead of the configured workflow.
        #[arg(long)]
        baseline: bool,
    },
    /// Sweep schemes x mutation prompts x methods and keep the best.
    Search(Common),
}

fn run(cli: Cli) -> Result<Summary, CommandError> {
    let (common, baseline) = match &cli.command {
        Command::Generate(c) | Command::Evolve(c) | Command::Search(c) => (c, false),
        Command::Eval { common, baseline } => (common, *baseline),
    };
    let config = RunConfig::load(&common.config)?;
    let opts = Options {
        out_dir: common.out.clone(),
        seed: common.seed,
        baseline,
    };
    match cli.command {
        Command::Generate(_) => commands::cmd_generate(config, &opts),
        Command::Evolve(_) => commands::cmd_evolve(config, &opts),
        Command::Eval { .. } => commands::cmd_eval(config, &opts),
        Command::Search(_) => commands::cmd_search(config, &opts),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            for f in &summary.files {
                println!("wrote {}", f.display());
            }
            for note in &summary.notes {
                println!("{note}");
            }
            println!(
                "{}: {} backend calls, {} tokens",
                summary.command, summary.calls, summary.tokens.total
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
