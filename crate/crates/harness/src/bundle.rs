//! CSV bundles: one `epoch_XXX.csv` per epoch (columns `x_1..x_p,y`), an
//! optional `truth.csv` (columns `epoch,theta_1..theta_p`) and `manifest.json`.

use std::fs;
use std::path::Path;

use irs_core::simgen::{DataStream, StreamMeta, StreamSource};
use irs_core::EpochData;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRUTH_FILE: &str = "truth.csv";

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub p: usize,
    #[serde(rename = "T")]
    pub n_epochs: usize,
    pub seed: Option<u64>,
    pub config: StreamSource,
    /// Epoch file names relative to the bundle directory, in stream order.
    pub epochs: Vec<String>,
    pub truth: Option<String>,
    /// Names of the predictor columns, when they have a meaning.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<String>>,
    /// Human-readable epoch labels such as calendar months.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch_labels: Option<Vec<String>>,
}

/// Optional annotations stored in the manifest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BundleLabels {
    pub columns: Option<Vec<String>>,
    pub epoch_labels: Option<Vec<String>>,
    /// Whether the manifest records the stream seed.
    pub seeded: bool,
}

pub fn epoch_file_name(t: usize) -> String {
    format!("epoch_{t:03}.csv")
}

fn header(p: usize, prefix: &str) -> Vec<String> {
    (1..=p).map(|j| format!("{prefix}_{j}")).collect()
}

/// Writes `stream` into `dir`, creating the directory if needed.
pub fn write_bundle(stream: &DataStream, dir: &Path, labels: &BundleLabels) -> Result<Manifest> {
    stream
        .validate()
        .map_err(|e| HarnessError::Data(e.to_string()))?;
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let p = stream.p();
    let mut files = Vec::with_capacity(stream.len());
    for (t, epoch) in stream.epochs.iter().enumerate() {
        let name = epoch_file_name(t);
        let path = dir.join(&name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| HarnessError::io(&path, e))?;
        let mut head = header(epoch.p(), "x");
        head.push("y".into());
        w.write_record(&head).map_err(|e| HarnessError::io(&path, e))?;
        for i in 0..epoch.n() {
            let mut row: Vec<String> = epoch.x.row(i).iter().map(|v| v.to_string()).collect();
            row.push(epoch.y[i].to_string());
            w.write_record(&row).map_err(|e| HarnessError::io(&path, e))?;
        }
        w.flush().map_err(|e| HarnessError::io(&path, e))?;
        files.push(name);
    }
    let truth = match &stream.truth {
        Some(truth) => {
            let path = dir.join(TRUTH_FILE);
            let mut w = csv::Writer::from_path(&path).map_err(|e| HarnessError::io(&path, e))?;
            let mut head = vec!["epoch".to_string()];
            head.extend(header(p, "theta"));
            w.write_record(&head).map_err(|e| HarnessError::io(&path, e))?;
            for (t, th) in truth.iter().enumerate() {
                let mut row = vec![t.to_string()];
                row.extend(th.iter().map(|v| v.to_string()));
                w.write_record(&row).map_err(|e| HarnessError::io(&path, e))?;
            }
            w.flush().map_err(|e| HarnessError::io(&path, e))?;
            Some(TRUTH_FILE.to_string())
        }
        None => None,
    };
    let manifest = Manifest {
        p,
        n_epochs: stream.len(),
        seed: labels.seeded.then_some(stream.meta.seed),
        config: stream.meta.source.clone(),
        epochs: files,
        truth,
        columns: labels.columns.clone(),
        epoch_labels: labels.epoch_labels.clone(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Reads a bundle written by [`write_bundle`].
pub fn read_bundle(dir: &Path) -> Result<(DataStream, Manifest)> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.epochs.len() != manifest.n_epochs {
        return Err(HarnessError::Data(format!(
            "manifest lists {} epoch files but T = {}",
            manifest.epochs.len(),
            manifest.n_epochs
        )));
    }
    let mut epochs = Vec::with_capacity(manifest.n_epochs);
    for (t, name) in manifest.epochs.iter().enumerate() {
        epochs.push(read_epoch(&dir.join(name), manifest.p, t)?);
    }
    let truth = match &manifest.truth {
        Some(name) => Some(read_truth(&dir.join(name), manifest.p, manifest.n_epochs)?),
        None => None,
    };
    let stream = DataStream {
        epochs,
        truth,
        meta: StreamMeta {
            p: manifest.p,
            n_epochs: manifest.n_epochs,
            seed: manifest.seed.unwrap_or(0),
            source: manifest.config.clone(),
        },
    };
    stream
        .validate()
        .map_err(|e| HarnessError::Data(e.to_string()))?;
    Ok((stream, manifest))
}

fn parse_row(record: &csv::StringRecord, path: &Path, line: usize) -> Result<Vec<f64>> {
    record
        .iter()
        .enumerate()
        .map(|(j, field)| {
            field.trim().parse::<f64>().map_err(|_| {
                HarnessError::Data(format!(
                    "{}: line {line}, column {}: not a number: {field:?}",
                    path.display(),
                    j + 1
                ))
            })
        })
        .collect()
}

fn read_epoch(path: &Path, p: usize, t: usize) -> Result<EpochData> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::io(path, e))?;
    let head = r.headers().map_err(|e| HarnessError::io(path, e))?.clone();
    let mut expected = header(p, "x");
    expected.push("y".into());
    if head.iter().ne(expected.iter().map(String::as_str)) {
        return Err(HarnessError::Data(format!(
            "{}: expected header x_1..x_{p},y",
            path.display()
        )));
    }
    let mut values = Vec::new();
    let mut y = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| HarnessError::io(path, e))?;
        let row = parse_row(&rec, path, i + 2)?;
        values.extend_from_slice(&row[..p]);
        y.push(row[p]);
    }
    let n = y.len();
    let data = EpochData::new(DMatrix::from_row_slice(n, p, &values), DVector::from_vec(y), t);
    let report = irs_core::model::validate_epoch(&data, p);
    if !report.is_valid() {
        return Err(HarnessError::Data(format!("{}: {report}", path.display())));
    }
    Ok(data)
}

fn read_truth(path: &Path, p: usize, n_epochs: usize) -> Result<Vec<DVector<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::io(path, e))?;
    let mut truth = Vec::with_capacity(n_epochs);
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| HarnessError::io(path, e))?;
        let row = parse_row(&rec, path, i + 2)?;
        if row.len() != p + 1 {
            return Err(HarnessError::Data(format!(
                "{}: line {}: expected {} fields",
                path.display(),
                i + 2,
                p + 1
            )));
        }
        truth.push(DVector::from_row_slice(&row[1..]));
    }
    Ok(truth)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use irs_core::simgen::gen_exp1;

    #[test]
    fn bundle_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let stream = gen_exp1(4, 3, 11).unwrap();
        let labels = BundleLabels {
            seeded: true,
            ..Default::default()
        };
        let manifest = write_bundle(&stream, dir.path(), &labels).unwrap();
        assert_eq!(manifest.epochs[2], "epoch_002.csv");
        let (back, read_manifest) = read_bundle(dir.path()).unwrap();
        assert_eq!(read_manifest, manifest);
        assert_eq!(back, stream);
    }
}
