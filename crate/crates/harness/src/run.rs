//! Seeded training runs and their output directory.
//!
//! ```text
//! <out>/config.toml          fully expanded configuration
//! <out>/seed_<n>.csv         per-seed metrics
//! <out>/summary.csv          cross-seed mean and std per interval
//! <out>/seed_<n>/checkpoint  final trainer checkpoint (when enabled)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use super_core::env::Pursuit;
use super_core::trainer::{env_seed, Trainer};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::metrics::{summarize, MetricsRow, SeedCsv, Table};

/// File name of the configuration copy stored next to results and inside
/// checkpoints.
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Save a checkpoint after the last iteration of each seed.
    pub checkpoint: bool,
    /// Seeds trained concurrently; each worker stays deterministic.
    pub jobs: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            checkpoint: true,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub csv: PathBuf,
    pub last_row: MetricsRow,
}

impl SeedOutcome {
    pub fn final_team_return(&self) -> f64 {
        self.last_row.team_return
    }

    pub fn realized_bandwidth(&self) -> f64 {
        self.last_row.actual_bandwidth
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seeds: Vec<SeedOutcome>,
    pub summary: PathBuf,
}

pub fn seed_csv_path(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("seed_{seed}.csv"))
}

pub fn checkpoint_dir(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("seed_{seed}")).join("checkpoint")
}

pub fn make_env(cfg: &ExperimentConfig, seed: u64) -> Result<Pursuit> {
    Ok(Pursuit::new(cfg.environment.clone(), env_seed(seed))?)
}

/// Trains one seed for `total_env_steps`, writing a row each time the step
/// count enters a new report interval and once more at the end.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, out_dir: &Path, opts: &RunOptions) -> Result<SeedOutcome> {
    fs::create_dir_all(out_dir).map_err(HarnessError::io(format!("creating {}", out_dir.display())))?;
    let env = make_env(cfg, seed)?;
    let agents = cfg.environment.num_pursuers;
    let mut trainer = Trainer::new(cfg.trainer_for_seed(seed), cfg.mode, env)?;
    let path = seed_csv_path(out_dir, seed);
    let file = fs::File::create(&path).map_err(HarnessError::io(format!("creating {}", path.display())))?;
    let mut csv = SeedCsv::new(file, agents)?;
    let interval = cfg.report_interval_steps;
    let mut last_interval = 0;
    let mut last_row = None;
    while trainer.env_steps() < cfg.total_env_steps {
        trainer.train_iteration()?;
        let steps = trainer.env_steps();
        let current = steps / interval;
        if current > last_interval || steps >= cfg.total_env_steps {
            last_interval = current;
            let row = MetricsRow::from_report(&trainer.take_report(), interval);
            csv.write(&row)?;
            info!(
                "seed {seed} step {steps}: team return {:.3}, bandwidth {:.4}",
                row.team_return, row.actual_bandwidth
            );
            last_row = Some(row);
        }
    }
    if opts.checkpoint {
        let dir = checkpoint_dir(out_dir, seed);
        trainer.save_checkpoint(&dir)?;
        let single = ExperimentConfig {
            seeds: vec![seed],
            ..cfg.clone()
        };
        write_config(&dir, &single)?;
    }
    Ok(SeedOutcome {
        seed,
        csv: path,
        last_row: last_row.expect("total_env_steps is positive"),
    })
}

pub fn write_config(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, cfg.to_toml_string()?).map_err(HarnessError::io(format!("writing {}", path.display())))
}

/// Trains every seed, then writes the cross-seed summary.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(HarnessError::io(format!("creating {}", out_dir.display())))?;
    write_config(out_dir, cfg)?;
    let seeds = run_seeds(cfg, out_dir, opts)?;
    let tables = seeds.iter().map(|s| Table::read(&s.csv)).collect::<Result<Vec<_>>>()?;
    let summary = out_dir.join("summary.csv");
    let file = fs::File::create(&summary).map_err(HarnessError::io(format!("creating {}", summary.display())))?;
    summarize(&tables)?.write(file)?;
    Ok(RunOutcome { seeds, summary })
}

fn run_seeds(cfg: &ExperimentConfig, out_dir: &Path, opts: &RunOptions) -> Result<Vec<SeedOutcome>> {
    if opts.jobs <= 1 || cfg.seeds.len() == 1 {
        return cfg.seeds.iter().map(|&s| run_seed(cfg, s, out_dir, opts)).collect();
    }
    let mut results: Vec<Option<Result<SeedOutcome>>> = (0..cfg.seeds.len()).map(|_| None).collect();
    for chunk in cfg.seeds.iter().enumerate().collect::<Vec<_>>().chunks(opts.jobs) {
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&(i, &seed)| (i, scope.spawn(move || run_seed(cfg, seed, out_dir, opts))))
                .collect();
            for (i, h) in handles {
                results[i] = Some(h.join().expect("training worker panicked"));
            }
        });
    }
    results.into_iter().map(|r| r.unwrap()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(mode: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(&format!(
            r#"
            [experiment]
            mode = "{mode}"
            total_env_steps = 600
            seeds = [0, 1, 2]
            report_interval_steps = 200

            [environment]
            preset = "mini"

            [trainer]
            hidden_layers = [16]
            learning_starts = 64
            train_batch_size = 16
            buffer_capacity = 1000
            target_update_freq = 100

            [selection]
            min_window = 8
            window_size_k = 64
            "#
        ))
        .unwrap()
    }

    fn scratch(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("super-harness-{name}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        dir
    }

    #[test]
    fn run_writes_seed_files_and_summary() {
        let dir = scratch("run");
        let cfg = tiny("super:quantile");
        let out = run(&cfg, &dir, &RunOptions::default()).unwrap();
        assert_eq!(out.seeds.len(), 3);
        let summary = Table::read(&out.summary).unwrap();
        assert_eq!(summary.column("timestep").unwrap(), vec![200.0, 400.0, 600.0]);
        for col in ["team_return_mean", "team_return_std", "actual_bandwidth_mean"] {
            assert!(summary.column(col).unwrap().iter().all(|v| v.is_finite()), "{col}");
        }
        assert!(summary.column("seeds").unwrap().iter().all(|&n| n == 3.0));
        for s in &out.seeds {
            let t = Table::read(&s.csv).unwrap();
            assert!(t.column("timestep").unwrap().iter().all(|&ts| ts as u64 % 200 == 0));
            assert!(checkpoint_dir(&dir, s.seed).join(CONFIG_FILE).exists());
        }
        assert_eq!(ExperimentConfig::load(&dir.join(CONFIG_FILE)).unwrap(), cfg);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn same_seed_same_bytes_and_parallel_matches_serial() {
        let cfg = tiny("super:stochastic");
        let (a, b) = (scratch("det-a"), scratch("det-b"));
        let opts = RunOptions {
            checkpoint: false,
            jobs: 1,
        };
        run(&cfg, &a, &opts).unwrap();
        run(&cfg, &b, &RunOptions { jobs: 3, ..opts }).unwrap();
        for seed in [0, 1, 2] {
            assert_eq!(
                fs::read(seed_csv_path(&a, seed)).unwrap(),
                fs::read(seed_csv_path(&b, seed)).unwrap()
            );
        }
        fs::remove_dir_all(&a).unwrap();
        fs::remove_dir_all(&b).unwrap();
    }

    #[test]
    fn no_strategy_and_zero_bandwidth_quantile_match() {
        // beta = 0 gives a zero quantile rank, which never shares
        let (a, b) = (scratch("zero-a"), scratch("zero-b"));
        let opts = RunOptions {
            checkpoint: false,
            jobs: 1,
        };
        let mut none = tiny("super:none");
        none.seeds = vec![4];
        let mut zero = tiny("super:quantile");
        zero.seeds = vec![4];
        zero.trainer.selection.bandwidth_beta = 0.0;
        run(&none, &a, &opts).unwrap();
        run(&zero, &b, &opts).unwrap();
        assert_eq!(
            fs::read(seed_csv_path(&a, 4)).unwrap(),
            fs::read(seed_csv_path(&b, 4)).unwrap()
        );
        fs::remove_dir_all(&a).unwrap();
        fs::remove_dir_all(&b).unwrap();
    }
}
