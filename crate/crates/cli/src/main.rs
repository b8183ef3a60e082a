mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use agmt_core::eval::EvalMode;
use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::commands::{Theorem, TheoryOptions};
use crate::run::RunDir;

/// A configuration or precondition problem; exits with status 2.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Parser)]
#[command(name = "agmt", version, about = "Agreement-based multilingual translation experiments on synthetic language families")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a run directory with a config snapshot and synthetic corpora.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Override a config key, e.g. `--set train.gamma=0.1`.
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        set: Vec<String>,
        /// Replace an existing run directory.
        #[arg(long)]
        force: bool,
    },
    /// Train a run, writing step-tagged checkpoints and metrics.jsonl.
    Train {
        /// Run name (under the runs root) or run directory.
        run: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        set: Vec<String>,
        /// Continue from the latest checkpoint.
        #[arg(long)]
        resume: bool,
        /// Stop after this many completed steps (at most train.max_steps).
        #[arg(long)]
        until: Option<usize>,
    },
    /// Evaluate the best parameters of the latest checkpoint on the test split.
    Eval {
        run: String,
        /// Comma-separated: basic, pivot.
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<EvalMode>>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Check the consistency bounds on exact tabular systems.
    VerifyTheory {
        #[arg(long, value_enum, default_value = "agreement")]
        theorem: Theorem,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Keep systems with xi at most this (agreement bound).
        #[arg(long, default_value_t = 0.6)]
        max_xi: f64,
        /// Keep systems with C at most this (pivoting bound).
        #[arg(long, default_value_t = 5.0)]
        max_c: f64,
        /// One system with BASE,M,MAX_LEN instead of the harness.
        #[arg(long, value_parser = parse_dims)]
        single: Option<(usize, usize, usize)>,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Collect eval reports of several runs into a CSV and an SVG.
    Plot {
        #[arg(required = true)]
        runs: Vec<String>,
        /// Output directory; defaults to <runs root>/plots.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_dims(s: &str) -> Result<(usize, usize, usize), String> {
    let v: Vec<usize> = s.split(',').map(|x| x.trim().parse().map_err(|_| format!("`{x}` is not a count"))).collect::<Result<_, _>>()?;
    match v[..] {
        [b, m, l] => Ok((b, m, l)),
        _ => Err("expected BASE,M,MAX_LEN".into()),
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, set, force } => {
            let cfg = config::load(&config, &set)?;
            commands::gen_data(&cfg, force)?;
        }
        Command::Train { run, config, set, resume, until } => {
            let (dir, cfg) = commands::resolve_run(run.as_deref(), config.as_deref(), &set)?;
            commands::train(&dir, &cfg, resume, until)?;
        }
        Command::Eval { run, modes, checkpoint } => {
            commands::eval(&RunDir::locate(&run)?, modes, checkpoint.as_deref())?;
        }
        Command::VerifyTheory { theorem, count, seed, max_xi, max_c, single, out } => {
            let o = TheoryOptions { theorem, count, seed, max_xi, max_c, single, out };
            let (doc, violations) = commands::verify_theory(&o)?;
            commands::write_json(&doc, o.out.as_deref())?;
            if violations > 0 {
                anyhow::bail!("{violations} bound violations");
            }
        }
        Command::Plot { runs, out } => {
            let dirs = runs.iter().map(|r| RunDir::locate(r)).collect::<Result<Vec<_>>>()?;
            let out = out.unwrap_or_else(|| config::runs_root(None).join("plots"));
            commands::plot(&dirs, &out)?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use agmt_core::Error as E;
    for cause in err.chain() {
        if cause.is::<Invalid>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            if matches!(e, E::Validation(_) | E::UnknownLanguage(_) | E::NoPath { .. } | E::TooLarge { .. } | E::BoundUndefined { .. }) {
                return 2;
            }
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
