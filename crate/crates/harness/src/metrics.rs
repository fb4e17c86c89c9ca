//! Metrics CSVs: the per-seed schema, interval aggregation across seeds,
//! and exponential smoothing.
//!
//! Per-seed columns, in order:
//!
//! ```text
//! timestep, return_agent_<i>..., team_return, shared_agent_<i>...,
//! bandwidth_agent_<i>..., actual_bandwidth, mean_td, epsilon, loss
//! ```
//!
//! `timestep` is the environment step count rounded down to a multiple of
//! the report interval. Returns are means over the last 100 training
//! episodes; shared counts and bandwidths are cumulative; `mean_td` and
//! `loss` average the training batches since the previous row. Values
//! not yet defined are written `NaN`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use super_core::trainer::Report;

use crate::error::{HarnessError, Result};

pub fn seed_columns(agents: usize) -> Vec<String> {
    let mut cols = vec!["timestep".to_string()];
    cols.extend((0..agents).map(|i| format!("return_agent_{i}")));
    cols.push("team_return".into());
    cols.extend((0..agents).map(|i| format!("shared_agent_{i}")));
    cols.extend((0..agents).map(|i| format!("bandwidth_agent_{i}")));
    for c in ["actual_bandwidth", "mean_td", "epsilon", "loss"] {
        cols.push(c.into());
    }
    cols
}

/// Number of agents a per-seed header describes, or a schema error.
pub fn agents_in_seed_columns(cols: &[String]) -> Result<usize> {
    let agents = cols.iter().filter(|c| c.starts_with("return_agent_")).count();
    if agents == 0 || cols != seed_columns(agents).as_slice() {
        return Err(HarnessError::Schema(format!("not a per-seed metrics header: {}", cols.join(","))));
    }
    Ok(agents)
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub timestep: u64,
    pub agent_returns: Vec<f64>,
    pub team_return: f64,
    pub shared: Vec<u64>,
    pub bandwidth: Vec<f64>,
    pub actual_bandwidth: f64,
    pub mean_td: f64,
    pub epsilon: f64,
    pub loss: f64,
}

impl MetricsRow {
    pub fn from_report(report: &Report, interval: u64) -> Self {
        MetricsRow {
            timestep: report.env_steps / interval * interval,
            agent_returns: report.agent_returns.clone(),
            team_return: report.team_return,
            shared: report.shared.clone(),
            bandwidth: report.bandwidth.clone(),
            actual_bandwidth: report.actual_bandwidth,
            mean_td: report.mean_td,
            epsilon: report.epsilon,
            loss: report.loss,
        }
    }

    pub fn fields(&self) -> Vec<String> {
        let f = |v: f64| format!("{v}");
        let mut out = vec![self.timestep.to_string()];
        out.extend(self.agent_returns.iter().map(|&v| f(v)));
        out.push(f(self.team_return));
        out.extend(self.shared.iter().map(|v| v.to_string()));
        out.extend(self.bandwidth.iter().map(|&v| f(v)));
        for v in [self.actual_bandwidth, self.mean_td, self.epsilon, self.loss] {
            out.push(f(v));
        }
        out
    }
}

/// Writes rows as they arrive and flushes each one, so a crash leaves a
/// readable prefix.
pub struct SeedCsv<W: Write> {
    out: csv::Writer<W>,
    agents: usize,
}

impl<W: Write> SeedCsv<W> {
    pub fn new(out: W, agents: usize) -> Result<Self> {
        let mut out = csv::Writer::from_writer(out);
        out.write_record(seed_columns(agents))?;
        out.flush().map_err(HarnessError::io("writing metrics"))?;
        Ok(SeedCsv { out, agents })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        debug_assert_eq!(row.agent_returns.len(), self.agents);
        self.out.write_record(row.fields())?;
        self.out.flush().map_err(HarnessError::io("writing metrics"))?;
        Ok(())
    }
}

/// A numeric CSV held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(HarnessError::io(format!("opening {}", path.display())))?;
        Self::from_reader(file).map_err(|e| match e {
            HarnessError::Schema(m) => HarnessError::Schema(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_reader(r: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let columns: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| HarnessError::Schema(e.to_string()))?;
            let row = rec
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| HarnessError::Schema(format!("row {}: `{s}` is not a number", line + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Ok(Table { columns, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn write(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format!("{v}")))?;
        }
        w.flush().map_err(HarnessError::io("writing table"))?;
        Ok(())
    }
}

/// Mean of the non-NaN values; NaN when there are none.
pub fn nan_mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values
        .into_iter()
        .filter(|v| !v.is_nan())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Population standard deviation of the non-NaN values.
pub fn nan_std(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let mean = nan_mean(values.clone());
    if mean.is_nan() {
        return f64::NAN;
    }
    nan_mean(values.into_iter().map(|v| (v - mean) * (v - mean))).sqrt()
}

/// Rows sharing a timestep collapse to their column means.
fn per_interval_means(table: &Table) -> BTreeMap<u64, Vec<f64>> {
    let mut groups: BTreeMap<u64, Vec<&Vec<f64>>> = BTreeMap::new();
    for row in &table.rows {
        groups.entry(row[0] as u64).or_default().push(row);
    }
    groups
        .into_iter()
        .map(|(t, rows)| {
            let means = (1..table.columns.len())
                .map(|c| nan_mean(rows.iter().map(|r| r[c])))
                .collect();
            (t, means)
        })
        .collect()
}

/// Cross-seed summary: `timestep`, `seeds`, then `<metric>_mean` and
/// `<metric>_std` for every per-seed metric. Each seed contributes the mean
/// of its reports inside an interval; the std is the population std.
pub fn summarize(seeds: &[Table]) -> Result<Table> {
    let first = seeds
        .first()
        .ok_or_else(|| HarnessError::Schema("no per-seed tables to summarize".into()))?;
    agents_in_seed_columns(&first.columns)?;
    if seeds.iter().any(|t| t.columns != first.columns) {
        return Err(HarnessError::Schema("per-seed tables disagree in columns".into()));
    }
    let metrics = &first.columns[1..];
    let mut columns = vec!["timestep".to_string(), "seeds".to_string()];
    for m in metrics {
        columns.push(format!("{m}_mean"));
        columns.push(format!("{m}_std"));
    }
    let per_seed: Vec<_> = seeds.iter().map(per_interval_means).collect();
    let mut timesteps: Vec<u64> = per_seed.iter().flat_map(|m| m.keys().copied()).collect();
    timesteps.sort_unstable();
    timesteps.dedup();
    let rows = timesteps
        .into_iter()
        .map(|t| {
            let present: Vec<&Vec<f64>> = per_seed.iter().filter_map(|m| m.get(&t)).collect();
            let mut row = vec![t as f64, present.len() as f64];
            for c in 0..metrics.len() {
                let vals: Vec<f64> = present.iter().map(|r| r[c]).collect();
                row.push(nan_mean(vals.iter().copied()));
                row.push(nan_std(vals.iter().copied()));
            }
            row
        })
        .collect();
    Ok(Table { columns, rows })
}

/// `y_0 = x_0`, `y_t = alpha * x_t + (1 - alpha) * y_{t-1}`. NaN inputs
/// carry the previous value forward.
pub fn smooth(xs: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    let mut prev = f64::NAN;
    for &x in xs {
        let y = if prev.is_nan() {
            x
        } else if x.is_nan() {
            prev
        } else {
            alpha * x + (1.0 - alpha) * prev
        };
        out.push(y);
        prev = y;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seed_table(rows: Vec<Vec<f64>>) -> Table {
        Table {
            columns: seed_columns(1),
            rows,
        }
    }

    /// timestep, return, team, shared, bandwidth, actual, td, eps, loss
    fn row(t: f64, team: f64) -> Vec<f64> {
        vec![t, team, team, 0.0, 0.0, 0.0, 1.0, 0.1, 0.5]
    }

    #[test]
    fn header_layout() {
        assert_eq!(
            seed_columns(2).join(","),
            "timestep,return_agent_0,return_agent_1,team_return,shared_agent_0,shared_agent_1,\
             bandwidth_agent_0,bandwidth_agent_1,actual_bandwidth,mean_td,epsilon,loss"
        );
        assert_eq!(agents_in_seed_columns(&seed_columns(3)).unwrap(), 3);
        assert!(agents_in_seed_columns(&["timestep".to_string()]).is_err());
    }

    #[test]
    fn row_rounds_timestep_down() {
        let report = Report {
            env_steps: 2999,
            episodes: 4,
            agent_returns: vec![1.0, 2.0],
            team_return: 3.0,
            shared: vec![5, 6],
            bandwidth: vec![0.1, 0.2],
            actual_bandwidth: 0.15,
            mean_td: f64::NAN,
            loss: 0.25,
            epsilon: 0.05,
        };
        let r = MetricsRow::from_report(&report, 1000);
        assert_eq!(r.timestep, 2000);
        assert_eq!(r.fields().len(), seed_columns(2).len());
        assert_eq!(r.fields()[9], "NaN");
    }

    #[test]
    fn written_rows_parse_back() {
        let mut buf = Vec::new();
        {
            let mut w = SeedCsv::new(&mut buf, 1).unwrap();
            w.write(&MetricsRow {
                timestep: 1000,
                agent_returns: vec![0.1],
                team_return: 0.1,
                shared: vec![3],
                bandwidth: vec![1.0 / 3.0],
                actual_bandwidth: 1.0 / 3.0,
                mean_td: f64::NAN,
                epsilon: 0.5,
                loss: 1e-7,
            })
            .unwrap();
        }
        let t = Table::from_reader(buf.as_slice()).unwrap();
        assert_eq!(t.columns, seed_columns(1));
        assert_eq!(t.rows[0][4], 1.0 / 3.0);
        assert!(t.rows[0][6].is_nan());
        assert_eq!(t.rows[0][8], 1e-7);
    }

    #[test]
    fn summary_averages_within_interval_then_across_seeds() {
        let a = seed_table(vec![row(0.0, 1.0), row(1000.0, 2.0), row(1000.0, 4.0)]);
        let b = seed_table(vec![row(0.0, 3.0), row(1000.0, 5.0)]);
        let s = summarize(&[a, b]).unwrap();
        let mean = s.column("team_return_mean").unwrap();
        let std = s.column("team_return_std").unwrap();
        assert_eq!(s.column("timestep").unwrap(), vec![0.0, 1000.0]);
        assert_eq!(s.column("seeds").unwrap(), vec![2.0, 2.0]);
        // seed a's interval mean is 3, seed b's is 5
        assert_eq!(mean, vec![2.0, 4.0]);
        assert_eq!(std, vec![1.0, 1.0]);
        assert!(s.rows.iter().all(|r| r.len() == s.columns.len()));
    }

    #[test]
    fn summary_rejects_mismatched_schema() {
        let a = seed_table(vec![row(0.0, 1.0)]);
        let b = Table {
            columns: seed_columns(2),
            rows: vec![],
        };
        assert!(matches!(summarize(&[a, b]), Err(HarnessError::Schema(_))));
    }

    #[test]
    fn smoothing_examples() {
        assert_eq!(smooth(&[0.0, 10.0], 0.3), vec![0.0, 3.0]);
        let xs = [1.0, 5.0, -2.0, 7.5];
        assert_eq!(smooth(&xs, 1.0), xs.to_vec());
        assert_eq!(smooth(&[4.0; 6], 0.3), vec![4.0; 6]);
        let ys = smooth(&[f64::NAN, 2.0, f64::NAN, 4.0], 0.5);
        assert!(ys[0].is_nan());
        assert_eq!(&ys[1..], &[2.0, 2.0, 3.0]);
    }

    proptest! {
        #[test]
        fn smoothing_stays_within_input_range(
            xs in prop::collection::vec(-100.0f64..100.0, 1..50),
            alpha in 0.01f64..=1.0
        ) {
            let ys = smooth(&xs, alpha);
            let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(ys.iter().all(|&y| y >= lo - 1e-9 && y <= hi + 1e-9));
        }
    }
}
