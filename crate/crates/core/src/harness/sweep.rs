use std::path::Path;

use serde::{Deserialize, Serialize};

use super::campaign::{sweep_inputs, SweepInputs};
use super::config::ExperimentConfig;
use super::HarnessError;
use crate::detectors::odin_score;
use crate::metrics::{
    fpr_at_threshold, mean_std, rate_at_threshold, target_count, threshold_for_tpr, MetricsError, DEFAULT_TPR,
};

/// Operating point of one run at one temperature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepSample {
    pub tpr: f64,
    pub fpr: f64,
    /// Ties at the threshold push the accepted share above the tie-free 95%
    /// quantile, so no threshold pins TPR at the target.
    pub flagged: bool,
}

/// Threshold from the correctly classified in-distribution scores, then TPR/FPR.
pub fn sweep_sample(correct_in: &[f64], out: &[f64]) -> Result<SweepSample, MetricsError> {
    let t = threshold_for_tpr(correct_in, DEFAULT_TPR)?;
    let tpr = rate_at_threshold(correct_in, t)?;
    let fpr = fpr_at_threshold(out, t)?;
    let accepted = correct_in.iter().filter(|&&s| s >= t).count();
    Ok(SweepSample {
        tpr,
        fpr,
        flagged: accepted > target_count(correct_in.len(), DEFAULT_TPR),
    })
}

/// One row of `sweep.csv`: a temperature on one split, averaged over runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub temperature: f64,
    pub split: String,
    pub tpr_mean: f64,
    pub tpr_std: f64,
    pub fpr_mean: f64,
    pub fpr_std: f64,
    pub runs: usize,
    /// Runs whose 95% TPR operating point could not be reached.
    pub flagged_runs: usize,
}

impl SweepPoint {
    pub fn valid(&self) -> bool {
        self.flagged_runs == 0
    }

    pub fn from_samples(temperature: f64, split: &str, samples: &[SweepSample]) -> Result<Self, MetricsError> {
        let tpr = mean_std(&samples.iter().map(|s| s.tpr).collect::<Vec<_>>())?;
        let fpr = mean_std(&samples.iter().map(|s| s.fpr).collect::<Vec<_>>())?;
        Ok(Self {
            temperature,
            split: split.into(),
            tpr_mean: tpr.mean,
            tpr_std: tpr.std,
            fpr_mean: fpr.mean,
            fpr_std: fpr.std,
            runs: samples.len(),
            flagged_runs: samples.iter().filter(|s| s.flagged).count(),
        })
    }
}

pub const SPLITS: [&str; 2] = ["intraclass", "intradataset"];

/// Lowest mean FPR among the unflagged points of `split`; earlier grid points win ties.
pub fn best_valid<'a>(points: &'a [SweepPoint], split: &str) -> Option<&'a SweepPoint> {
    points
        .iter()
        .filter(|p| p.split == split && p.valid())
        .fold(None, |best: Option<&SweepPoint>, p| match best {
            Some(b) if b.fpr_mean <= p.fpr_mean => Some(b),
            _ => Some(p),
        })
}

fn scores(logits: &[Vec<f64>], t: f64) -> Result<Vec<f64>, HarnessError> {
    Ok(logits.iter().map(|l| odin_score(l, t)).collect::<Result<_, _>>()?)
}

/// ODIN on the saved base models across `grid`, for both protocols.
pub fn temperature_sweep(cfg: &ExperimentConfig, out: &Path, grid: &[f64]) -> Result<Vec<SweepPoint>, HarnessError> {
    check_grid(grid)?;
    sweep_runs(&sweep_inputs(cfg, out)?, grid)
}

fn check_grid(grid: &[f64]) -> Result<(), HarnessError> {
    if grid.is_empty() || grid.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(HarnessError::Config("sweep grid must be non-empty and positive".into()));
    }
    Ok(())
}

/// One point per `(T, split)` in grid order. Intraclass outliers are the held-out
/// class; intradataset adds family B.
pub fn sweep_runs(inputs: &[SweepInputs], grid: &[f64]) -> Result<Vec<SweepPoint>, HarnessError> {
    check_grid(grid)?;
    let mut points = Vec::with_capacity(grid.len() * SPLITS.len());
    for &t in grid {
        let mut per_split = [Vec::new(), Vec::new()];
        for run in inputs {
            let in_scores = scores(&run.in_logits, t)?;
            let correct: Vec<f64> = in_scores
                .iter()
                .zip(&run.correct)
                .filter(|(_, &c)| c)
                .map(|(&s, _)| s)
                .collect();
            let mut out_scores = scores(&run.ood_logits, t)?;
            per_split[0].push(sweep_sample(&correct, &out_scores)?);
            out_scores.extend(scores(&run.family_b_logits, t)?);
            per_split[1].push(sweep_sample(&correct, &out_scores)?);
        }
        for (split, samples) in SPLITS.iter().zip(&per_split) {
            points.push(SweepPoint::from_samples(t, split, samples)?);
        }
    }
    Ok(points)
}
