use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use skelood::backbone::{argmax, train_classifier, BackboneModel, Checkpoint};
use skelood::harness::{
    aggregate_rows, best_valid, crop_all, family_a, family_b, manifest, read_results, report, run_intraclass,
    run_intradataset, run_split, temperature_sweep, thresholds, write_aggregate, write_sweep, AggregateRow,
    CampaignOutput, ExperimentConfig, HarnessError, SPLITS,
};
use skelood::seeds::derive_seed;
use skelood::skeldata::{save_corpus, stratified_split};

#[derive(Parser)]
#[command(name = "skelood", version, about = "OoD detection experiments on synthetic skeleton actions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent runs.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write both corpus families as line-delimited JSON.
    Gen(Common),
    /// Train one classifier on family A, optionally without one class.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        exclude: Option<usize>,
    },
    /// Leave-one-class-out training and evaluation.
    Intraclass(Common),
    /// Re-evaluate the intraclass models against family B outliers.
    Intradataset(Common),
    /// ODIN temperature sweep over the saved intraclass models.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated temperatures; the config grid when omitted.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Rebuild the aggregate tables from existing result files.
    Report(Common),
}

fn resolve(common: &Common) -> Result<(ExperimentConfig, PathBuf), HarnessError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.display().to_string();
    }
    if let Some(jobs) = common.jobs {
        cfg.jobs = jobs;
    }
    cfg.validate()?;
    let out = PathBuf::from(&cfg.out);
    Ok((cfg, out))
}

fn print_table(title: &str, rows: &[AggregateRow]) {
    println!("{title}");
    println!(
        "  {:<28} {:>13} {:>13} {:>13} {:>13} {:>13} {:>13}",
        "detector", "fpr95", "err", "auroc", "aupr_in", "aupr_out", "acc"
    );
    for r in rows {
        let c = |m: f64, s: f64| format!("{m:.3}±{s:.3}");
        println!(
            "  {:<28} {:>13} {:>13} {:>13} {:>13} {:>13} {:>13}",
            r.detector,
            c(r.fpr_mean, r.fpr_std),
            c(r.err_mean, r.err_std),
            c(r.auroc_mean, r.auroc_std),
            c(r.auprin_mean, r.auprin_std),
            c(r.auprout_mean, r.auprout_std),
            c(r.acc_mean, r.acc_std),
        );
    }
}

fn finish(command: &str, cfg: &ExperimentConfig, dir: &Path, output: &CampaignOutput, started: Instant) -> Result<bool, HarnessError> {
    let m = manifest(command, cfg, output, started.elapsed());
    let agg = report(dir, output, &m)?;
    print_table(&format!("{command}: {} runs, {} failures", output.runs, output.failures.len()), &agg);
    for f in &output.failures {
        eprintln!("failed: {} [{}]: {}", f.run_id, f.detectors, f.message);
    }
    Ok(output.failures.is_empty())
}

fn run(cli: Cli) -> Result<bool, HarnessError> {
    let started = Instant::now();
    match cli.command {
        Command::Gen(common) => {
            let (cfg, out) = resolve(&common)?;
            std::fs::create_dir_all(&out)?;
            for (name, corpus) in [("family_a", family_a(&cfg)?), ("family_b", family_b(&cfg)?)] {
                let path = out.join(format!("{name}.jsonl"));
                save_corpus(&corpus, &path)?;
                println!("{}: {} sequences, {} classes", path.display(), corpus.len(), corpus.class_count());
            }
            Ok(true)
        }
        Command::Train { common, exclude } => {
            let (cfg, out) = resolve(&common)?;
            let corpus = family_a(&cfg)?;
            let (train, test) = match exclude {
                Some(c) if c >= corpus.class_count() => {
                    return Err(HarnessError::Config(format!(
                        "--exclude {c} out of range for {} classes",
                        corpus.class_count()
                    )))
                }
                Some(c) => {
                    let split = run_split(&cfg, &corpus, c)?;
                    (split.train, split.test)
                }
                None => stratified_split(&corpus, cfg.folds, derive_seed(cfg.seed, &[400]))?,
            };
            let seed = derive_seed(cfg.seed, &[401]);
            let mut model = BackboneModel::new(cfg.backbone.with_classes(train.class_count()), train.topology.clone(), seed)?;
            let r = train_classifier(&mut model, &train, &cfg.classifier, &cfg.augment, seed)?;
            let crops = crop_all(&test.sequences, cfg.augment.crop_len)?;
            let logits = model.infer(&crops)?;
            let correct = logits.iter().zip(&crops).filter(|((_, l), s)| argmax(l) == s.label).count();
            std::fs::create_dir_all(&out)?;
            let path = out.join("model.json");
            Checkpoint::from_model(&model).save(&path)?;
            println!(
                "final training loss {:.4}; test accuracy {:.3} ({correct}/{}); saved {}",
                r.epochs.last().map_or(f64::NAN, |e| e.loss),
                correct as f64 / crops.len() as f64,
                crops.len(),
                path.display()
            );
            Ok(true)
        }
        Command::Intraclass(common) => {
            let (cfg, out) = resolve(&common)?;
            let output = run_intraclass(&cfg, &out)?;
            finish("intraclass", &cfg, &out, &output, started)
        }
        Command::Intradataset(common) => {
            let (cfg, out) = resolve(&common)?;
            let fixed = if cfg.detectors.reuse_threshold {
                Some(thresholds(&read_results(&out.join("results.csv"))?))
            } else {
                None
            };
            let output = run_intradataset(&cfg, &out, fixed.as_ref())?;
            finish("intradataset", &cfg, &out.join("intradataset"), &output, started)
        }
        Command::Sweep { common, grid } => {
            let (cfg, out) = resolve(&common)?;
            let grid = grid.unwrap_or_else(|| cfg.detectors.temperatures.clone());
            let points = temperature_sweep(&cfg, &out, &grid)?;
            let path = out.join("sweep.csv");
            write_sweep(&path, &points)?;
            println!("{:>8} {:<13} {:>13} {:>13} {}", "T", "split", "tpr", "fpr", "flagged");
            for p in &points {
                println!(
                    "{:>8} {:<13} {:>13} {:>13} {}/{}",
                    p.temperature,
                    p.split,
                    format!("{:.3}±{:.3}", p.tpr_mean, p.tpr_std),
                    format!("{:.3}±{:.3}", p.fpr_mean, p.fpr_std),
                    p.flagged_runs,
                    p.runs
                );
            }
            for split in SPLITS {
                match best_valid(&points, split) {
                    Some(p) => println!("best valid T on {split}: {} (fpr {:.3})", p.temperature, p.fpr_mean),
                    None => println!("best valid T on {split}: none"),
                }
            }
            println!("wrote {}", path.display());
            Ok(true)
        }
        Command::Report(common) => {
            let (_, out) = resolve(&common)?;
            let mut any = false;
            for (title, dir) in [("intraclass", out.clone()), ("intradataset", out.join("intradataset"))] {
                let path = dir.join("results.csv");
                if !path.exists() {
                    continue;
                }
                any = true;
                let agg = aggregate_rows(&read_results(&path)?)?;
                write_aggregate(&dir.join("aggregate.csv"), &agg)?;
                print_table(title, &agg);
            }
            if !any {
                return Err(HarnessError::Empty(format!("no results.csv under {}", out.display())));
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
