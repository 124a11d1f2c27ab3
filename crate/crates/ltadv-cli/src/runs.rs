//! Run directories, dataset assembly, and CSV emission.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use ltadv_core::checkpoint::{decode_model, encode_model};
use ltadv_core::datasets::{
    make_long_tailed, parse_cifar10_bytes, sample_gaussian_binary, sample_gaussian_multiclass,
    ImbalanceProfile, LabeledSet,
};
use ltadv_core::models::Model;
use ltadv_core::rng::{derive_seed, stream};
use ltadv_core::trainer::{Metrics, RunHistory};

use crate::config::{DatasetConfig, DatasetKind};

/// Construct the (long-tailed train, balanced test) pair for a dataset
/// config. Train and test draws use disjoint derived seeds.
pub fn build_datasets(cfg: &DatasetConfig, seed: u64) -> Result<(LabeledSet, LabeledSet)> {
    let train_seed = derive_seed(seed, stream::DATA, 1000);
    let test_seed = derive_seed(seed, stream::DATA, 2000);
    let lt_seed = derive_seed(seed, stream::SUBSAMPLE, 1000);
    match &cfg.kind {
        DatasetKind::GaussianMulticlass => {
            let base = sample_gaussian_multiclass(
                cfg.classes,
                cfg.eta,
                cfg.dim,
                cfg.n_per_class,
                train_seed,
            )?;
            let lt = make_long_tailed(
                &base,
                &ImbalanceProfile::exponential(cfg.imbalance_ratio)?,
                lt_seed,
            )?;
            let test = sample_gaussian_multiclass(
                cfg.classes,
                cfg.eta,
                cfg.dim,
                cfg.test_per_class,
                test_seed,
            )?;
            Ok((lt, test))
        }
        DatasetKind::GaussianBinary => {
            // The binary mixture encodes its imbalance in the label odds;
            // the test split is the balanced (r = 1) mixture.
            let lt = sample_gaussian_binary(
                cfg.imbalance_ratio,
                cfg.eta,
                cfg.dim,
                cfg.n_per_class * 2,
                train_seed,
            )?;
            let test =
                sample_gaussian_binary(1.0, cfg.eta, cfg.dim, cfg.test_per_class * 2, test_seed)?;
            Ok((lt, test))
        }
        DatasetKind::Cifar10 { train_paths, test_path } => {
            let mut bytes = Vec::new();
            for p in train_paths {
                bytes.extend(fs::read(p).with_context(|| format!("reading {}", p.display()))?);
            }
            let base = parse_cifar10_bytes(&bytes)?;
            let lt = make_long_tailed(
                &base,
                &ImbalanceProfile::exponential(cfg.imbalance_ratio)?,
                lt_seed,
            )?;
            let test_bytes =
                fs::read(test_path).with_context(|| format!("reading {}", test_path.display()))?;
            let test = parse_cifar10_bytes(&test_bytes)?;
            Ok((lt, test))
        }
    }
}

/// Create (or re-create under `--overwrite`) a run directory. Refuses to
/// touch a non-empty directory without the flag.
pub fn ensure_run_dir(dir: &Path, overwrite: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)?.next().is_some();
        if non_empty && !overwrite {
            bail!(
                "output directory {} is not empty; pass --overwrite to replace it",
                dir.display()
            );
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

pub fn write_checkpoint(dir: &Path, name: &str, model: &Model) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, encode_model(model)).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

pub fn read_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(decode_model(&bytes)?)
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// Header of a per-epoch metrics table for `c` classes.
pub fn metrics_header(c: usize) -> String {
    let mut cols = vec![
        "epoch".to_string(),
        "clean_acc".to_string(),
        "pgd_acc".to_string(),
        "tail_clean".to_string(),
        "tail_pgd".to_string(),
    ];
    cols.extend((0..c).map(|i| format!("per_class_clean_{i}")));
    cols.extend((0..c).map(|i| format!("per_class_pgd_{i}")));
    cols.join(",")
}

pub fn metrics_row(epoch: usize, m: &Metrics) -> String {
    let mut cols = vec![
        epoch.to_string(),
        fmt(m.clean_acc),
        fmt(m.pgd_acc),
        fmt(m.tail_clean),
        fmt(m.tail_pgd),
    ];
    cols.extend(m.per_class_clean.iter().map(|&v| fmt(v)));
    cols.extend(m.per_class_pgd.iter().map(|&v| fmt(v)));
    cols.join(",")
}

/// Per-epoch metrics CSV for one run.
pub fn render_history_csv(history: &RunHistory, c: usize) -> String {
    let mut out = metrics_header(c);
    out.push('\n');
    for (i, m) in history.epochs.iter().enumerate() {
        out.push_str(&metrics_row(i + 1, m));
        out.push('\n');
    }
    out
}

/// Write the standard run-directory artifacts: resolved config, per-epoch
/// metrics, and best/last checkpoints.
pub fn write_run_artifacts(
    dir: &Path,
    resolved_config: &str,
    history: &RunHistory,
    best: &Model,
    last: &Model,
) -> Result<()> {
    write_text(dir, "config.ini", resolved_config)?;
    write_text(
        dir,
        "metrics.csv",
        &render_history_csv(history, last.spec.num_classes),
    )?;
    write_text(
        dir,
        "checkpoints.txt",
        &format!(
            "best = {} (epoch {})\nlast = {}\n",
            history.checkpoint_best, history.best_epoch, history.checkpoint_last
        ),
    )?;
    write_checkpoint(dir, "checkpoint_best.ltck", best)?;
    write_checkpoint(dir, "checkpoint_last.ltck", last)?;
    Ok(())
}
