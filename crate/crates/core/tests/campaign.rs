mod common;

use std::collections::BTreeMap;

use skelood::harness::{
    intradataset_outliers, manifest, read_results, report, run_intraclass, run_intradataset, temperature_sweep,
    thresholds, write_sweep, Manifest, SPLITS,
};

const DETECTORS: [&str; 8] = [
    "baseline",
    "odin@T=1.6",
    "confidence",
    "confidence+odin@T=1.6",
    "density",
    "entropy",
    "gini",
    "metric+odin@T=1.6",
];

#[test]
fn tiny_campaign_end_to_end() {
    let cfg = common::tiny();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();

    let intra = run_intraclass(&cfg, out).unwrap();
    assert!(intra.failures.is_empty(), "{:?}", intra.failures);
    assert_eq!(intra.runs, 4);
    let rows = intra.rows();
    assert_eq!(rows.len(), 4 * DETECTORS.len());
    // canonical order: runs in class order, detectors in a fixed order within a run
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.run_id, format!("ex{}", i / DETECTORS.len()));
        assert_eq!(r.detector, DETECTORS[i % DETECTORS.len()]);
    }
    for r in &rows {
        assert!((0.0..=1.0).contains(&r.auroc) && (0.0..=1.0).contains(&r.fpr95), "{r:?}");
        assert!((r.err - (1.0 - 0.95 + r.fpr95) / 2.0).abs() < 0.03, "{r:?}");
    }
    let m = manifest("intraclass", &cfg, &intra, std::time::Duration::ZERO);
    let agg = report(out, &intra, &m).unwrap();
    assert_eq!(agg.len(), DETECTORS.len());
    let saved = Manifest::load(&out.join("manifest.json")).unwrap();
    assert_eq!(saved.config_hash, cfg.hash());
    assert_eq!(saved.checkpoints.len(), 4 * 5);
    assert_eq!(read_results(&out.join("results.csv")).unwrap(), rows);

    // baseline and its T = 1.6 variant share the backbone, so accuracy matches
    let acc: BTreeMap<(&str, &str), f64> = rows.iter().map(|r| ((r.run_id.as_str(), r.detector.as_str()), r.acc)).collect();
    for run in 0..4 {
        let id = format!("ex{run}");
        assert_eq!(acc[&(id.as_str(), "baseline")], acc[&(id.as_str(), "odin@T=1.6")]);
    }

    let inter = run_intradataset(&cfg, out, None).unwrap();
    assert!(inter.failures.is_empty(), "{:?}", inter.failures);
    assert_eq!(inter.rows().len(), rows.len());
    for class in 0..4 {
        // 20 held-out test sequences per class plus all 12 family B sequences
        assert_eq!(intradataset_outliers(&cfg, class).unwrap(), 40 + 12);
    }
    // intradataset reuses the intraclass models: in-distribution accuracy is unchanged
    for (a, b) in rows.iter().zip(inter.rows()) {
        assert_eq!((a.run_id.as_str(), a.detector.as_str(), a.acc), (b.run_id.as_str(), b.detector.as_str(), b.acc));
    }

    let fixed = thresholds(&rows);
    let reused = run_intradataset(&cfg, out, Some(&fixed)).unwrap();
    for r in reused.rows() {
        assert_eq!(r.threshold, fixed[&(r.run_id.clone(), r.detector.clone())]);
    }

    let grid = [1.0, 10.0, 1000.0];
    let points = temperature_sweep(&cfg, out, &grid).unwrap();
    assert_eq!(points.len(), grid.len() * SPLITS.len());
    // at T = 1 the sweep reproduces the baseline rows of both protocols
    let baseline_fpr = |rs: &[skelood::metrics::ResultRow]| {
        rs.iter().filter(|r| r.detector == "baseline").map(|r| r.fpr95).sum::<f64>() / 4.0
    };
    assert!((points[0].fpr_mean - baseline_fpr(&rows)).abs() < 1e-12);
    assert!((points[1].fpr_mean - baseline_fpr(&inter.rows())).abs() < 1e-12);
    write_sweep(&out.join("sweep.csv"), &points).unwrap();
}

#[test]
fn jobs_do_not_change_results() {
    let mut cfg = common::tiny();
    cfg.detectors.kinds = vec![skelood::harness::DetectorKind::Baseline, skelood::harness::DetectorKind::Gini];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run_intraclass(&cfg, a.path()).unwrap();
    cfg.jobs = 3;
    let second = run_intraclass(&cfg, b.path()).unwrap();
    assert_eq!(first.rows(), second.rows());
    assert_eq!(first.checkpoints, second.checkpoints);
}
