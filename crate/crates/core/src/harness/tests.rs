use super::*;
use crate::metrics::ResultRow;

fn row(run: &str, detector: &str, fpr: f64, auroc: f64) -> ResultRow {
    ResultRow {
        run_id: run.into(),
        detector: detector.into(),
        ood_class: "wave".into(),
        fpr95: fpr,
        err: fpr / 2.0,
        auroc,
        aupr_in: auroc - 0.1,
        aupr_out: auroc - 0.2,
        acc: 0.9,
        threshold: 0.5,
    }
}

fn point(t: f64, split: &str, fpr: f64, flagged: usize) -> SweepPoint {
    SweepPoint {
        temperature: t,
        split: split.into(),
        tpr_mean: 0.95,
        tpr_std: 0.0,
        fpr_mean: fpr,
        fpr_std: 0.0,
        runs: 8,
        flagged_runs: flagged,
    }
}

#[test]
fn default_config_validates_and_round_trips() {
    let cfg = ExperimentConfig::default();
    cfg.validate().unwrap();
    let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(ExperimentConfig::from_toml("").unwrap(), cfg);
}

#[test]
fn partial_sections_fall_back_to_defaults() {
    let cfg = ExperimentConfig::from_toml("seed = 3\n[metric]\nviews = 2\n").unwrap();
    assert_eq!(cfg.seed, 3);
    assert_eq!(cfg.metric.views, 2);
    assert_eq!(cfg.metric.embed_dim, ExperimentConfig::default().metric.embed_dim);
}

#[test]
fn bad_configs_are_config_errors() {
    let cases = [
        "seeds = 1",
        "jobs = 0",
        "folds = 1",
        "[family_a]\nfamily = \"A\"\nclasses = [\"wave\", \"squat\"]\nsequences_per_class = 10\nframes = 40",
        "[family_a]\nfamily = \"A\"\nclasses = [\"wave\", \"squat\", \"bow\"]\nsequences_per_class = 10\nframes = 40",
        "[augment]\ncrop_len = 500\nnoise_sigma = 0.0\ndropout_chance = 0.0\njoint_drop_prob = 0.0\nmirror_chance = 0.0",
        "[detectors]\nkinds = []",
        "[detectors]\nkinds = [\"odin\", \"odin\"]",
        "[detectors]\ntemperatures = [2.0, 10.0]",
        "[detectors]\ntemperatures = [1.0, -1.0]",
        "[detectors]\nodin_temperature = 0.0",
        "[backbone]\nwidths = []\nkernel = 5",
    ];
    for text in cases {
        let err = ExperimentConfig::from_toml(text).expect_err(text);
        assert!(err.is_config(), "{text}: {err}");
    }
}

#[test]
fn hash_ignores_out_and_jobs_only() {
    let base = ExperimentConfig::default();
    let h = base.hash();
    assert_eq!(h.len(), 64);
    let mut moved = base.clone();
    moved.out = "elsewhere".into();
    moved.jobs = 4;
    assert_eq!(moved.hash(), h);
    let mut reseeded = base.clone();
    reseeded.seed = 43;
    assert_ne!(reseeded.hash(), h);
    let mut retuned = base.clone();
    retuned.detectors.odin_temperature = 2.0;
    assert_ne!(retuned.hash(), h);
}

#[test]
fn metric_kinds_follow_the_detector_list() {
    let mut cfg = ExperimentConfig::default();
    assert_eq!(cfg.metric_kinds().len(), 3);
    cfg.detectors.kinds = vec![DetectorKind::Gini, DetectorKind::Baseline];
    assert_eq!(cfg.metric_kinds(), vec![crate::detectors::ImpurityKind::Gini]);
    assert!(!cfg.wants(DetectorKind::Confidence));
}

#[test]
fn labels_are_stable() {
    assert_eq!(run_id(3), "ex3");
    assert_eq!(odin_label("", 1.6), "odin@T=1.6");
    assert_eq!(odin_label("metric+", 1000.0), "metric+odin@T=1000");
}

#[test]
fn aggregate_matches_hand_computed_moments() {
    let rows = vec![
        row("ex0", "odin@T=1.6", 0.2, 0.9),
        row("ex0", "baseline", 0.4, 0.7),
        row("ex1", "baseline", 0.6, 0.8),
        row("ex1", "odin@T=1.6", 0.2, 0.9),
    ];
    let agg = aggregate_rows(&rows).unwrap();
    assert_eq!(agg.len(), 2);
    assert_eq!(agg[0].detector, "baseline");
    assert!((agg[0].fpr_mean - 0.5).abs() < 1e-15);
    assert!((agg[0].fpr_std - 0.1).abs() < 1e-15);
    assert!((agg[0].auroc_mean - 0.75).abs() < 1e-15);
    assert!((agg[0].err_std - 0.05).abs() < 1e-15);
    // identical runs give an exactly zero spread
    assert_eq!(agg[1].fpr_std, 0.0);
    assert_eq!(agg[1].auroc_std, 0.0);
    assert_eq!(agg[1].acc_mean, 0.9);

    let mut shuffled = rows.clone();
    shuffled.reverse();
    assert_eq!(aggregate_rows(&shuffled).unwrap(), agg);
}

#[test]
fn csv_round_trips_with_fixed_header() {
    let dir = tempfile::tempdir().unwrap();
    let rows = vec![row("ex0", "baseline", 0.1 + 0.2, 1.0 / 3.0), row("ex1", "gini", 0.0, 0.5)];
    let results = dir.path().join("results.csv");
    write_results(&results, &rows).unwrap();
    assert_eq!(read_results(&results).unwrap(), rows);

    let agg = aggregate_rows(&rows).unwrap();
    let path = dir.path().join("aggregate.csv");
    write_aggregate(&path, &agg).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), AGGREGATE_COLUMNS.join(","));
    assert_eq!(read_aggregate(&path).unwrap(), agg);

    let points = vec![point(1.0, "intraclass", 0.3, 0), point(1000.0, "intradataset", 0.1, 2)];
    let sweep = dir.path().join("sweep.csv");
    write_sweep(&sweep, &points).unwrap();
    assert_eq!(read_sweep(&sweep).unwrap(), points);
}

#[test]
fn thresholds_are_keyed_by_run_and_detector() {
    let mut r = row("ex2", "gini", 0.3, 0.7);
    r.threshold = 0.125;
    let map = thresholds(&[r, row("ex2", "baseline", 0.1, 0.9)]);
    assert_eq!(map.len(), 2);
    assert_eq!(map[&("ex2".to_string(), "gini".to_string())], 0.125);
}

#[test]
fn tied_scores_are_flagged() {
    // 20 identical scores: any threshold accepts all or none, never 19 of 20
    let tied = vec![0.5; 20];
    let s = sweep_sample(&tied, &[0.1, 0.5, 0.9]).unwrap();
    assert!(s.flagged);
    assert_eq!(s.tpr, 1.0);
    assert!((s.fpr - 2.0 / 3.0).abs() < 1e-15);

    let distinct: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
    let s = sweep_sample(&distinct, &[0.01, 0.99]).unwrap();
    assert!(!s.flagged);
    assert!((s.tpr - 0.95).abs() < 1e-15);
    assert_eq!(s.fpr, 0.5);

    // a tie straddling the quantile is also unattainable
    let mut partly = distinct.clone();
    partly[0] = partly[1];
    assert!(sweep_sample(&partly, &[0.0]).unwrap().flagged);
}

#[test]
fn sweep_point_counts_flags() {
    let samples = [
        SweepSample { tpr: 0.95, fpr: 0.2, flagged: false },
        SweepSample { tpr: 1.0, fpr: 0.4, flagged: true },
    ];
    let p = SweepPoint::from_samples(10.0, "intraclass", &samples).unwrap();
    assert_eq!((p.runs, p.flagged_runs), (2, 1));
    assert!(!p.valid());
    assert!((p.fpr_mean - 0.3).abs() < 1e-15);
}

#[test]
fn best_valid_skips_flagged_points() {
    let points = vec![
        point(1.0, "intraclass", 0.5, 0),
        point(1.0, "intradataset", 0.6, 0),
        point(100.0, "intraclass", 0.2, 0),
        point(100.0, "intradataset", 0.1, 3),
        point(1000.0, "intraclass", 0.0, 1),
        point(1000.0, "intradataset", 0.4, 0),
    ];
    assert_eq!(best_valid(&points, "intraclass").unwrap().temperature, 100.0);
    assert_eq!(best_valid(&points, "intradataset").unwrap().temperature, 1000.0);
    assert!(best_valid(&points[3..4], "intradataset").is_none());
    // equal FPR keeps the earlier grid point
    let tie = vec![point(1.0, "intraclass", 0.2, 0), point(2.0, "intraclass", 0.2, 0)];
    assert_eq!(best_valid(&tie, "intraclass").unwrap().temperature, 1.0);
}

#[test]
fn empty_campaign_is_not_reported() {
    let dir = tempfile::tempdir().unwrap();
    let output = CampaignOutput::default();
    let cfg = ExperimentConfig::default();
    let m = manifest("intraclass", &cfg, &output, std::time::Duration::ZERO);
    assert!(matches!(report(dir.path(), &output, &m), Err(HarnessError::Empty(_))));
}

#[test]
fn intradataset_without_checkpoints_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::default();
    let err = run_intradataset(&cfg, dir.path(), None).unwrap_err();
    assert!(matches!(err, HarnessError::MissingCheckpoint(_)), "{err}");
}
