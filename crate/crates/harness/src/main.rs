use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use super_core::trainer::{env_seed, Trainer};
use super_core::types::SelectionStrategy;
use super_harness::plot::plot_files;
use super_harness::run::{run, checkpoint_dir, CONFIG_FILE};
use super_harness::sweep::run_sweep;
use super_harness::{ExperimentConfig, HarnessError, Result, RunOptions};

/// Multi-agent DQN training with selective experience relay.
///
/// Log verbosity follows RUST_LOG (for example RUST_LOG=info).
#[derive(Parser)]
#[command(name = "super-marl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a configuration and write per-seed and summary CSVs.
    Train {
        /// Experiment TOML file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Train only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Seeds trained in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Skip writing final checkpoints.
        #[arg(long)]
        no_checkpoint: bool,
    },
    /// Train a grid of strategies and bandwidths plus the dqn and share-all rows.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated target bandwidths in [0, 1].
        #[arg(long, value_delimiter = ',', required = true)]
        betas: Vec<f64>,
        /// Comma-separated strategies: quantile, gaussian, stochastic, uniform_random.
        #[arg(long, value_delimiter = ',', required = true)]
        strategies: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Smooth team-return curves from per-seed or summary CSVs into an SVG.
    Plot {
        /// CSV files sharing one schema.
        #[arg(long = "in", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        /// Smoothing factor in (0, 1]; 1 disables smoothing.
        #[arg(long, default_value_t = super_harness::config::DEFAULT_SMOOTHING_ALPHA)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy evaluation of a saved checkpoint.
    Eval {
        /// A `seed_<n>/checkpoint` directory written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Train {
            config,
            out,
            seed,
            jobs,
            no_checkpoint,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            let outcome = run(
                &cfg,
                &out,
                &RunOptions {
                    checkpoint: !no_checkpoint,
                    jobs,
                },
            )?;
            for s in &outcome.seeds {
                println!(
                    "seed {}: final team return {:.4}, realized bandwidth {:.4}",
                    s.seed,
                    s.final_team_return(),
                    s.realized_bandwidth()
                );
                if !no_checkpoint {
                    println!("  checkpoint {}", checkpoint_dir(&out, s.seed).display());
                }
            }
            println!("summary {}", outcome.summary.display());
        }
        Command::Sweep {
            config,
            betas,
            strategies,
            out,
            jobs,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let strategies = strategies
                .iter()
                .map(|s| s.parse::<SelectionStrategy>())
                .collect::<Result<Vec<_>, _>>()?;
            let (path, results) = run_sweep(
                &cfg,
                &strategies,
                &betas,
                &out,
                &RunOptions {
                    checkpoint: false,
                    jobs,
                },
            )?;
            for r in &results {
                println!(
                    "{:<24} final {:.4} (std {:.4}) bandwidth {:.4}",
                    r.cell.label, r.final_team_return_mean, r.final_team_return_std, r.realized_bandwidth_mean
                );
            }
            println!("sweep {}", path.display());
        }
        Command::Plot { inputs, alpha, out } => {
            plot_files(&inputs, alpha, &out)?;
            println!("plot {}", out.display());
        }
        Command::Eval { checkpoint, episodes } => eval(&checkpoint, episodes)?,
    }
    Ok(())
}

fn eval(dir: &Path, episodes: usize) -> Result<()> {
    let cfg = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
    let seed = cfg.seeds[0];
    let env = super_harness::run::make_env(&cfg, seed)?;
    let trainer = Trainer::resume(dir, env)?;
    // a separate environment stream so evaluation leaves training state alone
    let mut eval_env = super_core::env::Pursuit::new(cfg.environment.clone(), env_seed(seed) ^ 0xE7A1)?;
    let result = trainer.evaluate(&mut eval_env, episodes)?;
    let json = serde_json::json!({
        "checkpoint": dir.display().to_string(),
        "env_steps": trainer.env_steps(),
        "episodes": result.episodes,
        "agent_returns": result.agent_returns,
        "team_return": result.team_return,
    });
    println!("{}", serde_json::to_string_pretty(&json).map_err(|e| HarnessError::Config(e.to_string()))?);
    Ok(())
}
