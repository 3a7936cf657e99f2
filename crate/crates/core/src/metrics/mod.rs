//! Threshold-at-TPR, FPR, detection error, AUROC, AUPR and their aggregation.
//! Scores are oriented so that higher means more in-distribution.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("non-finite score")]
    NonFinite,
}

pub const DEFAULT_TPR: f64 = 0.95;
/// Fewest in-distribution scores for which a 95% quantile is meaningful.
pub const MIN_THRESHOLD_SCORES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    pub is_in: bool,
    /// Classifier correctness; only meaningful for in-distribution samples.
    pub correct: bool,
}

fn check(scores: &[f64], what: &str) -> Result<(), MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Empty(what.to_string()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    Ok(())
}

/// Smallest `k` with `k / n >= target`: how many of `n` scores a threshold
/// must accept to reach the target rate when no ties get in the way.
pub fn target_count(n: usize, target: f64) -> usize {
    let mut k = (target * n as f64).ceil() as usize;
    while k > 0 && (k - 1) as f64 / n as f64 >= target {
        k -= 1;
    }
    while k < n && (k as f64 / n as f64) < target {
        k += 1;
    }
    k.max(1)
}

/// Largest `t` such that at least `target` of `in_scores` are `>= t`.
pub fn threshold_for_tpr(in_scores: &[f64], target: f64) -> Result<f64, MetricsError> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(MetricsError::OutOfRange(format!("target TPR {target}")));
    }
    if in_scores.len() < MIN_THRESHOLD_SCORES {
        return Err(MetricsError::Degenerate(format!(
            "{} in-distribution scores; at least {MIN_THRESHOLD_SCORES} are needed",
            in_scores.len()
        )));
    }
    check(in_scores, "in-distribution scores")?;
    let mut sorted = in_scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted[target_count(sorted.len(), target) - 1])
}

/// Fraction of `scores` at or above `threshold`.
pub fn rate_at_threshold(scores: &[f64], threshold: f64) -> Result<f64, MetricsError> {
    check(scores, "scores")?;
    Ok(scores.iter().filter(|&&s| s >= threshold).count() as f64 / scores.len() as f64)
}

/// Fraction of out-of-distribution scores accepted as in-distribution.
pub fn fpr_at_threshold(out_scores: &[f64], threshold: f64) -> Result<f64, MetricsError> {
    rate_at_threshold(out_scores, threshold)
}

/// `(1 - tpr + fpr) / 2`.
pub fn detection_error(tpr: f64, fpr: f64) -> Result<f64, MetricsError> {
    if !(0.0..=1.0).contains(&tpr) || !(0.0..=1.0).contains(&fpr) {
        return Err(MetricsError::OutOfRange(format!("tpr {tpr}, fpr {fpr}")));
    }
    Ok((1.0 - tpr + fpr) / 2.0)
}

/// `P(in > out) + P(in = out) / 2` over all pairs, via midranks.
pub fn auroc(in_scores: &[f64], out_scores: &[f64]) -> Result<f64, MetricsError> {
    check(in_scores, "in-distribution scores")?;
    check(out_scores, "out-of-distribution scores")?;
    let mut all: Vec<(f64, bool)> = in_scores
        .iter()
        .map(|&s| (s, true))
        .chain(out_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Twice the rank sum keeps midranks integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let twice_mid = (i + 1 + j) as u128;
        twice_rank_sum += twice_mid * all[i..j].iter().filter(|x| x.1).count() as u128;
        i = j;
    }
    let (n_in, n_out) = (in_scores.len() as u128, out_scores.len() as u128);
    let twice_u = twice_rank_sum - n_in * (n_in + 1);
    Ok(twice_u as f64 / (2 * n_in * n_out) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Positive {
    In,
    Out,
}

/// Area under the precision-recall curve with step interpolation, sweeping
/// thresholds from the highest score down. Tied scores enter together.
/// With `Positive::Out` the scores are negated first.
pub fn aupr(in_scores: &[f64], out_scores: &[f64], positive: Positive) -> Result<f64, MetricsError> {
    check(in_scores, "in-distribution scores")?;
    check(out_scores, "out-of-distribution scores")?;
    let mut all: Vec<(f64, bool)> = match positive {
        Positive::In => in_scores
            .iter()
            .map(|&s| (s, true))
            .chain(out_scores.iter().map(|&s| (s, false)))
            .collect(),
        Positive::Out => out_scores
            .iter()
            .map(|&s| (-s, true))
            .chain(in_scores.iter().map(|&s| (-s, false)))
            .collect(),
    };
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let total_pos = all.iter().filter(|x| x.1).count() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let recall = tp as f64 / total_pos;
        area += (recall - prev_recall) * tp as f64 / (tp + fp) as f64;
        prev_recall = recall;
        i = j;
    }
    Ok(area)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fpr95: f64,
    pub detection_error: f64,
    pub auroc: f64,
    pub aupr_in: f64,
    pub aupr_out: f64,
    pub accuracy: f64,
    pub threshold: f64,
    pub tpr_achieved: f64,
}

/// Which populations AUROC and AUPR compare.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// In-distribution against out-of-distribution samples.
    #[default]
    InVsOut,
    /// Correctly against incorrectly classified in-distribution samples.
    CorrectVsIncorrect,
}

/// The threshold is taken from correctly classified in-distribution scores at
/// 95% TPR; FPR is measured on the out-of-distribution samples.
pub fn evaluate(in_samples: &[ScoredSample], out_samples: &[ScoredSample], mode: EvalMode) -> Result<EvalReport, MetricsError> {
    evaluate_with_threshold(in_samples, out_samples, mode, None)
}

/// [`evaluate`] with an optional externally fixed threshold, e.g. one carried
/// over from another protocol. TPR is then whatever that threshold achieves.
pub fn evaluate_with_threshold(
    in_samples: &[ScoredSample],
    out_samples: &[ScoredSample],
    mode: EvalMode,
    threshold: Option<f64>,
) -> Result<EvalReport, MetricsError> {
    if in_samples.is_empty() {
        return Err(MetricsError::Empty("in-distribution samples".into()));
    }
    let correct: Vec<f64> = in_samples.iter().filter(|s| s.correct).map(|s| s.score).collect();
    let threshold = match threshold {
        Some(t) => t,
        None => threshold_for_tpr(&correct, DEFAULT_TPR)?,
    };
    let tpr = rate_at_threshold(&correct, threshold)?;
    let out: Vec<f64> = out_samples.iter().map(|s| s.score).collect();
    let fpr = fpr_at_threshold(&out, threshold)?;
    let (pos, neg): (Vec<f64>, Vec<f64>) = match mode {
        EvalMode::InVsOut => (in_samples.iter().map(|s| s.score).collect(), out),
        EvalMode::CorrectVsIncorrect => (
            correct,
            in_samples.iter().filter(|s| !s.correct).map(|s| s.score).collect(),
        ),
    };
    Ok(EvalReport {
        fpr95: fpr,
        detection_error: detection_error(tpr, fpr)?,
        auroc: auroc(&pos, &neg)?,
        aupr_in: aupr(&pos, &neg, Positive::In)?,
        aupr_out: aupr(&pos, &neg, Positive::Out)?,
        accuracy: in_samples.iter().filter(|s| s.correct).count() as f64 / in_samples.len() as f64,
        threshold,
        tpr_achieved: tpr,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

/// Mean and population std of `values`, independent of their order.
pub fn mean_std(values: &[f64]) -> Result<MeanStd, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty("nothing to aggregate".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let mut dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    dev.sort_by(f64::total_cmp);
    Ok(MeanStd {
        mean,
        std: (dev.iter().sum::<f64>() / n).sqrt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub fpr95: MeanStd,
    pub auroc: MeanStd,
    pub aupr_in: MeanStd,
    pub aupr_out: MeanStd,
    pub detection_error: MeanStd,
    pub accuracy: MeanStd,
    pub runs: usize,
}

pub fn aggregate(reports: &[EvalReport]) -> Result<Aggregate, MetricsError> {
    let field = |f: fn(&EvalReport) -> f64| mean_std(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(Aggregate {
        fpr95: field(|r| r.fpr95)?,
        auroc: field(|r| r.auroc)?,
        aupr_in: field(|r| r.aupr_in)?,
        aupr_out: field(|r| r.aupr_out)?,
        detection_error: field(|r| r.detection_error)?,
        accuracy: field(|r| r.accuracy)?,
        runs: reports.len(),
    })
}

/// One line of `results.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run_id: String,
    pub detector: String,
    pub ood_class: String,
    pub fpr95: f64,
    pub err: f64,
    pub auroc: f64,
    pub aupr_in: f64,
    pub aupr_out: f64,
    pub acc: f64,
    pub threshold: f64,
}

impl ResultRow {
    pub fn new(run_id: impl Into<String>, detector: impl Into<String>, ood_class: impl Into<String>, r: &EvalReport) -> Self {
        Self {
            run_id: run_id.into(),
            detector: detector.into(),
            ood_class: ood_class.into(),
            fpr95: r.fpr95,
            err: r.detection_error,
            auroc: r.auroc,
            aupr_in: r.aupr_in,
            aupr_out: r.aupr_out,
            acc: r.accuracy,
            threshold: r.threshold,
        }
    }
}
