//! Bandwidth sweeps: final performance against realized bandwidth.
//!
//! Every (strategy, beta) cell trains all configured seeds under
//! `<out>/<label>/`. Two reference rows are added: `dqn` (nothing shared)
//! and `all` (everything shared). Results go to `<out>/sweep.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use super_core::trainer::RunMode;
use super_core::types::SelectionStrategy;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::metrics::{nan_mean, nan_std};
use crate::run::{run, RunOptions};

pub const SWEEP_COLUMNS: [&str; 6] = [
    "label",
    "strategy",
    "beta",
    "final_team_return_mean",
    "final_team_return_std",
    "realized_bandwidth_mean",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub label: String,
    pub mode: RunMode,
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub cell: SweepCell,
    pub final_team_return_mean: f64,
    pub final_team_return_std: f64,
    pub realized_bandwidth_mean: f64,
}

/// Reference rows first, then strategies in the given order with betas
/// ascending.
pub fn sweep_cells(strategies: &[SelectionStrategy], betas: &[f64]) -> Result<Vec<SweepCell>> {
    if let Some(b) = betas.iter().find(|b| !(0.0..=1.0).contains(*b)) {
        return Err(HarnessError::Config(format!("sweep beta {b} is outside [0, 1]")));
    }
    let mut betas = betas.to_vec();
    betas.sort_by(f64::total_cmp);
    betas.dedup();
    let mut cells = vec![
        SweepCell {
            label: "dqn".into(),
            mode: RunMode::IndependentDqn,
            beta: None,
        },
        SweepCell {
            label: "all".into(),
            mode: RunMode::Super(SelectionStrategy::ShareAll),
            beta: None,
        },
    ];
    for &s in strategies {
        if !(s.uses_window() || s == SelectionStrategy::UniformRandom) {
            return Err(HarnessError::Config(format!(
                "strategy `{s}` has no bandwidth parameter to sweep"
            )));
        }
        for &b in &betas {
            cells.push(SweepCell {
                label: format!("{s}_{b}"),
                mode: RunMode::Super(s),
                beta: Some(b),
            });
        }
    }
    Ok(cells)
}

pub fn run_sweep(
    base: &ExperimentConfig,
    strategies: &[SelectionStrategy],
    betas: &[f64],
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<(PathBuf, Vec<SweepResult>)> {
    let cells = sweep_cells(strategies, betas)?;
    fs::create_dir_all(out_dir).map_err(HarnessError::io(format!("creating {}", out_dir.display())))?;
    let path = out_dir.join("sweep.csv");
    let file = fs::File::create(&path).map_err(HarnessError::io(format!("creating {}", path.display())))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(SWEEP_COLUMNS)?;
    let mut results = Vec::new();
    for cell in cells {
        let mut cfg = base.clone();
        cfg.mode = cell.mode;
        if let Some(b) = cell.beta {
            cfg.trainer.selection.bandwidth_beta = b;
        }
        info!("sweep cell {}", cell.label);
        let outcome = run(&cfg, &out_dir.join(&cell.label), opts)?;
        let finals: Vec<f64> = outcome.seeds.iter().map(|s| s.final_team_return()).collect();
        let result = SweepResult {
            final_team_return_mean: nan_mean(finals.iter().copied()),
            final_team_return_std: nan_std(finals.iter().copied()),
            realized_bandwidth_mean: nan_mean(outcome.seeds.iter().map(|s| s.realized_bandwidth())),
            cell,
        };
        let strategy = result.cell.mode.relay_strategy().to_string();
        w.write_record([
            result.cell.label.clone(),
            strategy,
            result.cell.beta.map(|b| b.to_string()).unwrap_or_default(),
            result.final_team_return_mean.to_string(),
            result.final_team_return_std.to_string(),
            result.realized_bandwidth_mean.to_string(),
        ])?;
        w.flush().map_err(HarnessError::io(format!("writing {}", path.display())))?;
        results.push(result);
    }
    Ok((path, results))
}
