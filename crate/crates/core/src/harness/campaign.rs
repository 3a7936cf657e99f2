use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DetectorKind, ExperimentConfig};
use super::HarnessError;
use crate::backbone::{argmax, train_classifier, BackboneModel, Checkpoint, ModelError};
use crate::detectors::{
    baseline_score, odin_score, train_classification_branch, train_confidence, train_confidence_branch,
    train_embedding, ConfidenceModel, DetectorSection, FeatureBank, MetricModel,
};
use crate::metrics::{evaluate_with_threshold, EvalMode, EvalReport, ResultRow, ScoredSample};
use crate::seeds::derive_seed;
use crate::skeldata::{center_crop, exclude_class, generate_corpus, stratified_split, Corpus, SkeletonSequence};

/// One evaluated (OoD class, detector) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub run_id: String,
    pub ood_class: String,
    pub detector: String,
    pub temperature: Option<f64>,
    pub report: EvalReport,
    /// Wall-clock time of the whole leave-one-out run the result belongs to.
    pub duration: Duration,
}

impl RunResult {
    pub fn row(&self) -> ResultRow {
        ResultRow::new(&self.run_id, &self.detector, &self.ood_class, &self.report)
    }
}

/// A detector (or a whole run) that produced no result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run_id: String,
    pub detectors: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CampaignOutput {
    pub results: Vec<RunResult>,
    pub failures: Vec<RunFailure>,
    /// Checkpoint file (relative to the checkpoint root) to its SHA-256.
    pub checkpoints: BTreeMap<String, String>,
    pub runs: usize,
}

impl CampaignOutput {
    pub fn rows(&self) -> Vec<ResultRow> {
        self.results.iter().map(RunResult::row).collect()
    }

    fn absorb(&mut self, run: CampaignOutput) {
        self.results.extend(run.results);
        self.failures.extend(run.failures);
        self.checkpoints.extend(run.checkpoints);
        self.runs += run.runs;
    }
}

pub fn family_a(cfg: &ExperimentConfig) -> Result<Corpus, HarnessError> {
    Ok(generate_corpus(&cfg.family_a, derive_seed(cfg.seed, &[100]))?)
}

pub fn family_b(cfg: &ExperimentConfig) -> Result<Corpus, HarnessError> {
    Ok(generate_corpus(&cfg.family_b, derive_seed(cfg.seed, &[101]))?)
}

pub fn run_id(class: usize) -> String {
    format!("ex{class}")
}

/// Data of one leave-one-out run, rebuilt identically by every protocol.
pub struct RunSplit {
    pub run_id: String,
    pub ood_name: String,
    pub train: Corpus,
    pub test: Corpus,
    pub ood: Corpus,
    pub seed: u64,
}

pub fn run_split(cfg: &ExperimentConfig, corpus: &Corpus, class: usize) -> Result<RunSplit, HarnessError> {
    let seed = derive_seed(cfg.seed, &[200, class as u64]);
    let ex = exclude_class(corpus, class)?;
    let (train, test) = stratified_split(&ex.in_dist, cfg.folds, seed)?;
    Ok(RunSplit {
        run_id: run_id(class),
        ood_name: corpus.class_names[class].clone(),
        train,
        test,
        ood: ex.ood,
        seed,
    })
}

pub fn crop_all(seqs: &[SkeletonSequence], len: usize) -> Result<Vec<SkeletonSequence>, HarnessError> {
    Ok(seqs.iter().map(|s| center_crop(s, len)).collect::<Result<_, _>>()?)
}

/// Trained detectors of one run; absent entries were not requested or failed.
#[derive(Clone, Debug)]
pub struct RunModels {
    pub backbone: BackboneModel,
    pub confidence: Option<ConfidenceModel>,
    pub metric: Vec<MetricModel>,
}

fn failure(run_id: &str, detectors: &str, e: impl std::fmt::Display) -> RunFailure {
    log::warn!("{run_id}: {detectors} failed: {e}");
    RunFailure {
        run_id: run_id.into(),
        detectors: detectors.into(),
        message: e.to_string(),
    }
}

fn train_models(cfg: &ExperimentConfig, split: &RunSplit) -> (Option<RunModels>, Vec<RunFailure>) {
    let id = &split.run_id;
    let config = cfg.backbone.with_classes(split.train.class_count());
    let fresh = || BackboneModel::new(config.clone(), split.train.topology.clone(), derive_seed(split.seed, &[0]));
    let backbone = fresh().and_then(|mut m| {
        train_classifier(&mut m, &split.train, &cfg.classifier, &cfg.augment, split.seed)?;
        Ok(m)
    });
    let backbone = match backbone {
        Ok(m) => m,
        Err(e) => return (None, vec![failure(id, "all", e)]),
    };
    let mut failures = Vec::new();

    let confidence = if cfg.wants(DetectorKind::Confidence) {
        let trained = fresh().and_then(|b| {
            let mut m = ConfidenceModel::new(b, &cfg.confidence)?;
            train_confidence(&mut m, &split.train, &cfg.classifier, &cfg.augment, split.seed)?;
            Ok(m)
        });
        trained.map_err(|e| failures.push(failure(id, "confidence", e))).ok()
    } else {
        None
    };

    let kinds = cfg.metric_kinds();
    let mut metric = Vec::new();
    if !kinds.is_empty() {
        let trained = (|| -> Result<Vec<MetricModel>, ModelError> {
            let m = &cfg.metric;
            let bank = FeatureBank::build(&backbone, &split.train, m.views, &cfg.augment, split.seed)?;
            let mut base = MetricModel::from_config(backbone.clone(), m, kinds[0])?;
            train_embedding(&mut base, &bank, &m.embedding, split.seed)?;
            train_classification_branch(&mut base, &bank, &m.classification, split.seed)?;
            kinds
                .iter()
                .map(|&kind| {
                    let mut head = base.clone();
                    head.kind = kind;
                    train_confidence_branch(&mut head, &bank, &m.confidence, split.seed)?;
                    Ok(head)
                })
                .collect()
        })();
        match trained {
            Ok(models) => metric = models,
            Err(e) => failures.push(failure(id, "metric", e)),
        }
    }
    (
        Some(RunModels {
            backbone,
            confidence,
            metric,
        }),
        failures,
    )
}

fn checkpoint_names(models: &RunModels, cfg: &ExperimentConfig) -> Vec<(String, Checkpoint)> {
    let mut base = Checkpoint::from_model(&models.backbone);
    base.detector = Some(
        DetectorSection::Softmax {
            temperatures: cfg.detectors.temperatures.clone(),
        }
        .to_value(),
    );
    let mut out = vec![("baseline.json".to_string(), base)];
    if let Some(c) = &models.confidence {
        out.push(("confidence.json".into(), c.to_checkpoint()));
    }
    for m in &models.metric {
        out.push((format!("metric-{}.json", m.kind), m.to_checkpoint()));
    }
    out
}

fn save_models(
    cfg: &ExperimentConfig,
    root: &Path,
    run_id: &str,
    models: &RunModels,
) -> Result<BTreeMap<String, String>, HarnessError> {
    let dir = root.join(run_id);
    std::fs::create_dir_all(&dir)?;
    let mut hashes = BTreeMap::new();
    for (name, ck) in checkpoint_names(models, cfg) {
        ck.save(dir.join(&name))?;
        hashes.insert(format!("{run_id}/{name}"), ck.hash()?);
    }
    Ok(hashes)
}

fn load_models(
    cfg: &ExperimentConfig,
    root: &Path,
    run_id: &str,
    hashes: &mut BTreeMap<String, String>,
    failures: &mut Vec<RunFailure>,
) -> Result<RunModels, HarnessError> {
    let dir = root.join(run_id);
    let mut load = |name: &str| -> Result<Option<Checkpoint>, HarnessError> {
        let path = dir.join(name);
        if !path.exists() {
            return Ok(None);
        }
        let ck = Checkpoint::load(&path)?;
        hashes.insert(format!("{run_id}/{name}"), ck.hash()?);
        Ok(Some(ck))
    };
    let base = load("baseline.json")?
        .ok_or_else(|| HarnessError::MissingCheckpoint(dir.join("baseline.json").display().to_string()))?;
    let backbone = base.to_model()?;
    let confidence = if cfg.wants(DetectorKind::Confidence) {
        match load("confidence.json")? {
            Some(ck) => Some(ConfidenceModel::from_checkpoint(&ck)?),
            None => {
                failures.push(failure(run_id, "confidence", "checkpoint missing"));
                None
            }
        }
    } else {
        None
    };
    let mut metric = Vec::new();
    for kind in cfg.metric_kinds() {
        match load(&format!("metric-{kind}.json"))? {
            Some(ck) => metric.push(MetricModel::from_checkpoint(&ck)?),
            None => failures.push(failure(run_id, kind.name(), "checkpoint missing")),
        }
    }
    Ok(RunModels {
        backbone,
        confidence,
        metric,
    })
}

/// Per-sample logits and oriented scores of one detector.
struct Outputs {
    detector: String,
    temperature: Option<f64>,
    logits: Vec<Vec<f64>>,
    scores: Vec<f64>,
}

pub fn odin_label(prefix: &str, t: f64) -> String {
    format!("{prefix}odin@T={t}")
}

fn softmax_outputs(
    cfg: &ExperimentConfig,
    prefix: &str,
    logits: &[Vec<f64>],
    baseline_name: Option<&str>,
) -> Result<Vec<Outputs>, ModelError> {
    let mut out = Vec::new();
    if let Some(name) = baseline_name {
        out.push(Outputs {
            detector: name.into(),
            temperature: None,
            logits: logits.to_vec(),
            scores: logits.iter().map(|l| baseline_score(l)).collect::<Result<_, _>>()?,
        });
    }
    if cfg.wants(DetectorKind::Odin) {
        let t = cfg.detectors.odin_temperature;
        out.push(Outputs {
            detector: odin_label(prefix, t),
            temperature: Some(t),
            logits: logits.to_vec(),
            scores: logits.iter().map(|l| odin_score(l, t)).collect::<Result<_, _>>()?,
        });
    }
    Ok(out)
}

/// Every requested detector's outputs on `seqs`, in canonical order.
fn detector_outputs(cfg: &ExperimentConfig, models: &RunModels, seqs: &[SkeletonSequence]) -> Result<Vec<Outputs>, ModelError> {
    let mut out = Vec::new();
    let logits: Vec<Vec<f64>> = models.backbone.infer(seqs)?.into_iter().map(|(_, l)| l).collect();
    let baseline = cfg.wants(DetectorKind::Baseline).then_some("baseline");
    out.extend(softmax_outputs(cfg, "", &logits, baseline)?);
    if let Some(c) = &models.confidence {
        let (logits, gammas): (Vec<Vec<f64>>, Vec<f64>) = c.infer(seqs)?.into_iter().unzip();
        out.push(Outputs {
            detector: "confidence".into(),
            temperature: None,
            logits: logits.clone(),
            scores: gammas,
        });
        out.extend(softmax_outputs(cfg, "confidence+", &logits, None)?);
    }
    for (i, m) in models.metric.iter().enumerate() {
        let res = m.infer(seqs)?;
        let logits: Vec<Vec<f64>> = res.iter().map(|o| o.logits.clone()).collect();
        out.push(Outputs {
            detector: m.kind.name().into(),
            temperature: None,
            logits: logits.clone(),
            scores: res.iter().map(|o| o.score).collect(),
        });
        // The metric heads share their classification branch, so one ODIN row covers them.
        if i + 1 == models.metric.len() {
            out.extend(softmax_outputs(cfg, "metric+", &logits, None)?);
        }
    }
    Ok(out)
}

/// Scores both populations with every model and evaluates each detector.
/// `thresholds` fixes the threshold per detector label instead of re-estimating it.
fn evaluate_run(
    cfg: &ExperimentConfig,
    split: &RunSplit,
    models: &RunModels,
    in_set: &[SkeletonSequence],
    out_set: &[SkeletonSequence],
    thresholds: Option<&BTreeMap<(String, String), f64>>,
    started: Instant,
) -> (Vec<RunResult>, Vec<RunFailure>) {
    let id = &split.run_id;
    let scored = detector_outputs(cfg, models, in_set).and_then(|i| Ok((i, detector_outputs(cfg, models, out_set)?)));
    let (ins, outs) = match scored {
        Ok(v) => v,
        Err(e) => return (Vec::new(), vec![failure(id, "all", e)]),
    };
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (i, o) in ins.into_iter().zip(outs) {
        let in_samples: Vec<ScoredSample> = i
            .scores
            .iter()
            .zip(&i.logits)
            .zip(in_set)
            .map(|((&score, l), s)| ScoredSample {
                score,
                is_in: true,
                correct: argmax(l) == s.label,
            })
            .collect();
        let out_samples: Vec<ScoredSample> = o
            .scores
            .iter()
            .map(|&score| ScoredSample {
                score,
                is_in: false,
                correct: false,
            })
            .collect();
        let fixed = match thresholds {
            Some(map) => match map.get(&(id.clone(), i.detector.clone())) {
                Some(&t) => Some(t),
                None => {
                    failures.push(failure(id, &i.detector, "no intraclass threshold to reuse"));
                    continue;
                }
            },
            None => None,
        };
        match evaluate_with_threshold(&in_samples, &out_samples, EvalMode::InVsOut, fixed) {
            Ok(report) => results.push(RunResult {
                run_id: id.clone(),
                ood_class: split.ood_name.clone(),
                detector: i.detector,
                temperature: i.temperature,
                report,
                duration: started.elapsed(),
            }),
            Err(e) => failures.push(failure(id, &i.detector, e)),
        }
    }
    (results, failures)
}

fn parallel<T, F>(jobs: usize, n: usize, f: F) -> Result<Vec<T>, HarnessError>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    // Indexed collect keeps run order, whatever the worker count.
    Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
}

pub fn checkpoint_root(out: &Path) -> PathBuf {
    out.join("checkpoints")
}

/// Leave-one-class-out over family A: train every requested detector without
/// the held-out class, save the models under `out/checkpoints`, and evaluate
/// the in-distribution test split against the held-out class.
pub fn run_intraclass(cfg: &ExperimentConfig, out: &Path) -> Result<CampaignOutput, HarnessError> {
    cfg.validate()?;
    let corpus = family_a(cfg)?;
    let root = checkpoint_root(out);
    std::fs::create_dir_all(&root)?;
    let runs = parallel(cfg.jobs, corpus.class_count(), |class| -> Result<CampaignOutput, HarnessError> {
        let started = Instant::now();
        let split = run_split(cfg, &corpus, class)?;
        log::info!("{}: training without `{}`", split.run_id, split.ood_name);
        let (models, mut failures) = train_models(cfg, &split);
        let mut run = CampaignOutput {
            runs: 1,
            ..Default::default()
        };
        if let Some(models) = models {
            run.checkpoints = save_models(cfg, &root, &split.run_id, &models)?;
            let in_set = crop_all(&split.test.sequences, cfg.augment.crop_len)?;
            let out_set = crop_all(&split.ood.sequences, cfg.augment.crop_len)?;
            let (results, f) = evaluate_run(cfg, &split, &models, &in_set, &out_set, None, started);
            run.results = results;
            failures.extend(f);
        }
        run.failures = failures;
        log::info!("{}: done in {:.1?}", split.run_id, started.elapsed());
        Ok(run)
    })?;
    let mut total = CampaignOutput::default();
    for run in runs {
        total.absorb(run?);
    }
    Ok(total)
}

/// Re-evaluates the saved intraclass models with family B plus the held-out
/// class as outliers. Nothing is trained.
pub fn run_intradataset(
    cfg: &ExperimentConfig,
    out: &Path,
    thresholds: Option<&BTreeMap<(String, String), f64>>,
) -> Result<CampaignOutput, HarnessError> {
    cfg.validate()?;
    let corpus = family_a(cfg)?;
    let outliers_b = crop_all(&family_b(cfg)?.sequences, cfg.augment.crop_len)?;
    let root = checkpoint_root(out);
    let runs = parallel(cfg.jobs, corpus.class_count(), |class| -> Result<CampaignOutput, HarnessError> {
        let started = Instant::now();
        let split = run_split(cfg, &corpus, class)?;
        let mut run = CampaignOutput {
            runs: 1,
            ..Default::default()
        };
        let models = load_models(cfg, &root, &split.run_id, &mut run.checkpoints, &mut run.failures)?;
        let in_set = crop_all(&split.test.sequences, cfg.augment.crop_len)?;
        let mut out_set = crop_all(&split.ood.sequences, cfg.augment.crop_len)?;
        out_set.extend(outliers_b.iter().cloned());
        let (results, f) = evaluate_run(cfg, &split, &models, &in_set, &out_set, thresholds, started);
        run.results = results;
        run.failures.extend(f);
        Ok(run)
    })?;
    let mut total = CampaignOutput::default();
    for run in runs {
        total.absorb(run?);
    }
    Ok(total)
}

/// Outlier count of the intradataset protocol for one excluded class.
pub fn intradataset_outliers(cfg: &ExperimentConfig, class: usize) -> Result<usize, HarnessError> {
    let split = run_split(cfg, &family_a(cfg)?, class)?;
    Ok(split.ood.len() + family_b(cfg)?.len())
}

/// Backbone logits for the sweep: in-distribution test split, held-out class
/// and family B, per run.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepInputs {
    pub in_logits: Vec<Vec<f64>>,
    pub correct: Vec<bool>,
    pub ood_logits: Vec<Vec<f64>>,
    pub family_b_logits: Vec<Vec<f64>>,
}

pub fn sweep_inputs(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<SweepInputs>, HarnessError> {
    cfg.validate()?;
    let corpus = family_a(cfg)?;
    let outliers_b = crop_all(&family_b(cfg)?.sequences, cfg.augment.crop_len)?;
    let root = checkpoint_root(out);
    let runs = parallel(cfg.jobs, corpus.class_count(), |class| -> Result<SweepInputs, HarnessError> {
        let split = run_split(cfg, &corpus, class)?;
        let path = root.join(&split.run_id).join("baseline.json");
        if !path.exists() {
            return Err(HarnessError::MissingCheckpoint(path.display().to_string()));
        }
        let model = Checkpoint::load(&path)?.to_model()?;
        let logits = |seqs: &[SkeletonSequence]| -> Result<Vec<Vec<f64>>, HarnessError> {
            Ok(model.infer(seqs)?.into_iter().map(|(_, l)| l).collect())
        };
        let in_set = crop_all(&split.test.sequences, cfg.augment.crop_len)?;
        let in_logits = logits(&in_set)?;
        let correct = in_logits.iter().zip(&in_set).map(|(l, s)| argmax(l) == s.label).collect();
        Ok(SweepInputs {
            in_logits,
            correct,
            ood_logits: logits(&crop_all(&split.ood.sequences, cfg.augment.crop_len)?)?,
            family_b_logits: logits(&outliers_b)?,
        })
    })?;
    runs.into_iter().collect()
}
