// SPDX-License-Identifier: Apache-2.0

//! `pvtsize`: train, evaluate and inspect corner-robust sizing agents.

use std::fs::File;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use pvtsize_core::envsim::bowl::QuadBowl;
use pvtsize_core::envsim::external;
use pvtsize_core::envsim::tsa::TwoStageAmp;
use pvtsize_core::events::{self, LogError};
use pvtsize_core::trainer::{self, RunOutputs};
use pvtsize_core::{Agent, Checkpoint, CircuitModel, ConfigDocument, DesignState, Error, RunConfig};

/// Environment variable that overrides `--seed`.
const SEED_ENV: &str = "PPAAS_SEED";

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_ENV_FAULT: u8 = 3;

#[derive(Parser)]
#[command(name = "pvtsize", version, about = "Corner-robust analog sizing with goal-conditioned SAC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write events, metrics and checkpoints.
    Train {
        /// JSON run configuration.
        config: PathBuf,
        /// Master seed; `PPAAS_SEED` takes precedence.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Parallel simulator workers.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Evaluate a checkpoint deterministically and print a JSON report.
    Eval {
        checkpoint: PathBuf,
        config: PathBuf,
        /// Number of evaluation goals; defaults to the configured count.
        #[arg(long)]
        goals: Option<usize>,
        /// Goal-set seed; defaults to the checkpoint's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarize the event log of a run directory.
    Inspect { run: PathBuf },
    /// Serve a built-in model over the external simulator protocol on stdio.
    Serve {
        #[arg(long, value_enum)]
        env: ServeEnv,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Bowl parameter count.
        #[arg(long, default_value_t = 2)]
        l: usize,
        /// Bowl metric count.
        #[arg(long, default_value_t = 2)]
        m: usize,
    },
    /// Print the default configuration.
    Defaults,
}

#[derive(Clone, Copy, ValueEnum)]
enum ServeEnv {
    QuadBowl,
    Tsa,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(err) = e.downcast_ref::<Error>() {
        return match err {
            Error::Config(_) | Error::Schema(_) | Error::Dimension { .. } | Error::Contract(_) | Error::Checkpoint(_) => {
                EXIT_USAGE
            }
            Error::Simulator(_) => EXIT_ENV_FAULT,
            _ => EXIT_FAILURE,
        };
    }
    if e.downcast_ref::<LogError>().is_some() || e.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    EXIT_FAILURE
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn resolve_seed(flag: Option<u64>) -> anyhow::Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| UsageError(format!("{SEED_ENV}: not an unsigned integer: {v:?}")).into()),
        Err(_) => Ok(flag),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            workers,
        } => train(&config, resolve_seed(seed)?, &out, workers),
        Command::Eval {
            checkpoint,
            config,
            goals,
            seed,
        } => eval(&checkpoint, &config, goals, resolve_seed(seed)?),
        Command::Inspect { run } => inspect(&run),
        Command::Serve { env, seed, l, m } => serve(env, seed, l, m),
        Command::Defaults => {
            println!("{}", serde_json::to_string_pretty(&ConfigDocument::default())?);
            Ok(())
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>, workers: Option<usize>) -> anyhow::Result<RunConfig> {
    let base = RunConfig::load(path)?;
    if seed.is_none() && workers.is_none() {
        return Ok(base);
    }
    let mut doc = base.to_document();
    if let Some(s) = seed {
        doc.trainer.seed = s;
    }
    if let Some(w) = workers {
        doc.trainer.workers = w;
    }
    Ok(RunConfig::from_document(doc)?)
}

fn train(config: &Path, seed: Option<u64>, out: &Path, workers: Option<usize>) -> anyhow::Result<()> {
    let cfg = load_config(config, seed, workers)?;
    let model = cfg.build_model()?;
    let mut outputs = RunOutputs::to_dir(out, &cfg.logging)?;
    std::fs::write(out.join("config.json"), cfg.to_json())
        .with_context(|| format!("writing {}", out.join("config.json").display()))?;
    let outcome = trainer::train(&cfg, model, &mut outputs)?;
    let summary = serde_json::json!({
        "out": out.display().to_string(),
        "steps": outcome.steps,
        "episodes": outcome.episodes,
        "train_sims": outcome.train_sims,
        "reset_sims": outcome.reset_sims,
        "eval_sims": outcome.eval_sims,
        "updates": outcome.updates,
        "failed_steps": outcome.failed_steps,
        "best": outcome.best_report.as_ref().map(|r| serde_json::json!({
            "sr": r.sr, "s_sim": r.s_sim, "s_dev": r.s_dev, "sim_count": r.sim_count,
        })),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn eval(checkpoint: &Path, config: &Path, goals: Option<usize>, seed: Option<u64>) -> anyhow::Result<()> {
    let cfg = load_config(config, None, None)?;
    let ck = Checkpoint::load(checkpoint)?;
    let model = cfg.build_model()?;
    let schema = cfg.effective_schema(model.as_ref())?;
    if ck.dim_state != model.dim_params() {
        return Err(Error::Dimension {
            what: "checkpoint design parameters",
            expected: model.dim_params(),
            got: ck.dim_state,
        }
        .into());
    }
    if ck.schema.names() != schema.names() {
        bail!(UsageError(format!(
            "checkpoint metrics {:?} do not match the configured model {:?}",
            ck.schema.names(),
            schema.names()
        )));
    }
    let n = goals.unwrap_or(cfg.trainer.n_eval);
    if n == 0 {
        bail!(UsageError("--goals must be at least 1".into()));
    }
    let agent = Agent::from_checkpoint(&ck)?;
    let goal_set = trainer::eval_goal_set(&schema, n, seed.unwrap_or(ck.seed));
    let report = trainer::evaluate(
        &agent,
        model.as_ref(),
        &cfg.corners,
        &schema,
        &DesignState::new(ck.s0.clone()),
        &goal_set,
        cfg.trainer.horizon,
        &cfg.reward,
        ck.train_sims,
    )?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn inspect(run: &Path) -> anyhow::Result<()> {
    let path = run.join("events.jsonl");
    let file = File::open(&path).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    let summary = events::summarize(BufReader::new(file)).with_context(|| path.display().to_string())?;
    if summary.truncated_tail {
        eprintln!("warning: {}: final record is truncated and was skipped", path.display());
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn serve(env: ServeEnv, seed: u64, l: usize, m: usize) -> anyhow::Result<()> {
    let model: Box<dyn CircuitModel> = match env {
        ServeEnv::QuadBowl => Box::new(QuadBowl::new(l, m, seed)?),
        ServeEnv::Tsa => Box::new(TwoStageAmp::new(seed)),
    };
    let stdin = io::stdin();
    external::serve(model.as_ref(), stdin.lock(), io::stdout().lock())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_class() {
        let cfg: anyhow::Error = Error::Config(vec!["x".into()]).into();
        assert_eq!(exit_code(&cfg), EXIT_USAGE);
        let sim: anyhow::Error = Error::Simulator("down".into()).into();
        assert_eq!(exit_code(&sim), EXIT_ENV_FAULT);
        let div: anyhow::Error = Error::Diverged("nan".into()).into();
        assert_eq!(exit_code(&div), EXIT_FAILURE);
        let usage: anyhow::Error = UsageError("bad".into()).into();
        assert_eq!(exit_code(&usage), EXIT_USAGE);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn env_config_default_is_bowl() {
        use pvtsize_core::config::EnvConfig;
        assert!(matches!(ConfigDocument::default().env, EnvConfig::QuadBowl { .. }));
    }
}
