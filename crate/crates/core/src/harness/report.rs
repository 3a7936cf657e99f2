use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::campaign::{CampaignOutput, RunFailure};
use super::sweep::SweepPoint;
use super::HarnessError;
use crate::metrics::{mean_std, ResultRow};

/// One line of `aggregate.csv`: mean and population std per detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub detector: String,
    pub fpr_mean: f64,
    pub fpr_std: f64,
    pub auroc_mean: f64,
    pub auroc_std: f64,
    pub auprin_mean: f64,
    pub auprin_std: f64,
    pub auprout_mean: f64,
    pub auprout_std: f64,
    pub err_mean: f64,
    pub err_std: f64,
    pub acc_mean: f64,
    pub acc_std: f64,
}

pub const AGGREGATE_COLUMNS: [&str; 13] = [
    "detector",
    "fpr_mean",
    "fpr_std",
    "auroc_mean",
    "auroc_std",
    "auprin_mean",
    "auprin_std",
    "auprout_mean",
    "auprout_std",
    "err_mean",
    "err_std",
    "acc_mean",
    "acc_std",
];

/// Groups rows by detector, sorted by detector label, so the table does not
/// depend on row order.
pub fn aggregate_rows(rows: &[ResultRow]) -> Result<Vec<AggregateRow>, HarnessError> {
    let mut groups: BTreeMap<&str, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(&r.detector).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(detector, rs)| {
            let col = |f: fn(&ResultRow) -> f64| mean_std(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (fpr, auroc, ain, aout, err, acc) = (
                col(|r| r.fpr95)?,
                col(|r| r.auroc)?,
                col(|r| r.aupr_in)?,
                col(|r| r.aupr_out)?,
                col(|r| r.err)?,
                col(|r| r.acc)?,
            );
            Ok(AggregateRow {
                detector: detector.to_string(),
                fpr_mean: fpr.mean,
                fpr_std: fpr.std,
                auroc_mean: auroc.mean,
                auroc_std: auroc.std,
                auprin_mean: ain.mean,
                auprin_std: ain.std,
                auprout_mean: aout.mean,
                auprout_std: aout.std,
                err_mean: err.mean,
                err_std: err.std,
                acc_mean: acc.mean,
                acc_std: acc.std,
            })
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<(), HarnessError> {
    write_csv(path, rows)
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, HarnessError> {
    read_csv(path)
}

pub fn write_aggregate(path: &Path, rows: &[AggregateRow]) -> Result<(), HarnessError> {
    write_csv(path, rows)
}

pub fn read_aggregate(path: &Path) -> Result<Vec<AggregateRow>, HarnessError> {
    read_csv(path)
}

pub fn write_sweep(path: &Path, points: &[SweepPoint]) -> Result<(), HarnessError> {
    write_csv(path, points)
}

pub fn read_sweep(path: &Path) -> Result<Vec<SweepPoint>, HarnessError> {
    read_csv(path)
}

/// `(run_id, detector) -> threshold`, for reusing thresholds across protocols.
pub fn thresholds(rows: &[ResultRow]) -> BTreeMap<(String, String), f64> {
    rows.iter()
        .map(|r| ((r.run_id.clone(), r.detector.clone()), r.threshold))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub jobs: usize,
    pub runs: usize,
    pub results: usize,
    pub failures: Vec<RunFailure>,
    /// Checkpoint file to SHA-256, for every model written or read.
    pub checkpoints: BTreeMap<String, String>,
    pub wall_seconds: f64,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Writes `results.csv`, `aggregate.csv` and `manifest.json` into `dir`.
pub fn report(dir: &Path, output: &CampaignOutput, manifest: &Manifest) -> Result<Vec<AggregateRow>, HarnessError> {
    if output.results.is_empty() {
        return Err(HarnessError::Empty("campaign produced no results".into()));
    }
    std::fs::create_dir_all(dir)?;
    let rows = output.rows();
    let agg = aggregate_rows(&rows)?;
    write_results(&dir.join("results.csv"), &rows)?;
    write_aggregate(&dir.join("aggregate.csv"), &agg)?;
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(manifest)?)?;
    Ok(agg)
}
