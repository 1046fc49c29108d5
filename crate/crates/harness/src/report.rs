//! Per-epoch metric rows, their aggregates over seeds, and CSV I/O.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

/// One metric of one method at one epoch for one seed. Failed rows carry NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    /// One-based epoch index.
    pub epoch: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    pub status: Status,
}

/// Mean and sample standard deviation over the successful seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub epoch: usize,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub failed: usize,
}

/// Row of the plot-data file: one point of one method's curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub epoch: usize,
    pub method: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
}

impl ReportTable {
    /// Aggregates grouped by `(method, metric, epoch)`, sorted by that key.
    pub fn aggregates(&self) -> Vec<AggregateRow> {
        let mut groups: BTreeMap<(String, String, usize), (Vec<f64>, usize)> = BTreeMap::new();
        for r in &self.rows {
            let entry = groups
                .entry((r.method.clone(), r.metric.clone(), r.epoch))
                .or_default();
            match r.status {
                Status::Ok => entry.0.push(r.value),
                Status::Failed => entry.1 += 1,
            }
        }
        groups
            .into_iter()
            .map(|((method, metric, epoch), (values, failed))| {
                let (mean, std) = mean_std(&values);
                AggregateRow {
                    method,
                    epoch,
                    metric,
                    mean,
                    std,
                    n: values.len(),
                    failed,
                }
            })
            .collect()
    }

    /// Aggregates of one metric in plot form.
    pub fn plot_data(&self, metric: &str) -> Vec<PlotRow> {
        let mut rows: Vec<PlotRow> = self
            .aggregates()
            .into_iter()
            .filter(|a| a.metric == metric)
            .map(|a| PlotRow {
                epoch: a.epoch,
                method: a.method,
                mean: a.mean,
                std: a.std,
            })
            .collect();
        rows.sort_by(|a, b| a.epoch.cmp(&b.epoch).then_with(|| a.method.cmp(&b.method)));
        rows
    }

    /// Mean of `metric` for `method` at `epoch`, if any seed succeeded.
    pub fn mean(&self, method: &str, metric: &str, epoch: usize) -> Option<f64> {
        self.aggregates()
            .into_iter()
            .find(|a| a.method == method && a.metric == metric && a.epoch == epoch && a.n > 0)
            .map(|a| a.mean)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, &self.rows)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Ok(Self {
            rows: read_rows(path)?,
        })
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    match values.len() {
        0 => (f64::NAN, f64::NAN),
        1 => (values[0], 0.0),
        n => {
            let mean = values.iter().sum::<f64>() / n as f64;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            (mean, var.sqrt())
        }
    }
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::io(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::io(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::io(path, e))?;
    r.deserialize()
        .map(|rec| rec.map_err(|e| HarnessError::io(path, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, epoch: usize, seed: u64, value: f64) -> ReportRow {
        ReportRow {
            method: method.into(),
            epoch,
            seed,
            metric: "rmse".into(),
            value,
            status: if value.is_nan() { Status::Failed } else { Status::Ok },
        }
    }

    #[test]
    fn aggregates_skip_failed_rows() {
        let table = ReportTable {
            rows: vec![
                row("irs", 1, 0, 1.0),
                row("irs", 1, 1, 3.0),
                row("irs", 1, 2, f64::NAN),
            ],
        };
        let agg = table.aggregates();
        assert_eq!(agg.len(), 1);
        assert_eq!((agg[0].mean, agg[0].n, agg[0].failed), (2.0, 2, 1));
        assert!((agg[0].std - 2.0_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        let table = ReportTable {
            rows: vec![row("kalman", 2, 5, 0.1 + 0.2), row("irs", 1, 0, 1.0 / 3.0)],
        };
        table.write_csv(&path).unwrap();
        assert_eq!(ReportTable::read_csv(&path).unwrap(), table);
    }
}
