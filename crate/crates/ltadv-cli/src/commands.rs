//! Subcommand implementations. Every command writes its declared artifacts
//! into the output directory and prints a machine-readable CSV summary to
//! standard output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Result};

use ltadv_core::losses::LossConfig;
use ltadv_core::theory::{run_logistic_experiment, validate_tail_errors};
use ltadv_core::models::Model;
use ltadv_core::trainer::{compare_methods, evaluate, train_student, train_teacher, TrainConfig};

use crate::config::{CompareJob, EvalJob, ExperimentConfig, Job, LogisticJob, TheoryJob, TrainJob, Mode};
use crate::runs;

pub struct Invocation {
    pub out_dir: PathBuf,
    pub overwrite: bool,
}

/// Dispatch a parsed configuration. Artifacts land under `inv.out_dir`; the
/// summary CSV goes to stdout.
pub fn run(cfg: &ExperimentConfig, inv: &Invocation) -> Result<()> {
    runs::ensure_run_dir(&inv.out_dir, inv.overwrite)?;
    runs::write_text(&inv.out_dir, "config.ini", &cfg.render_resolved())?;
    match &cfg.job {
        Job::Theory(job) => run_theory(job, cfg, &inv.out_dir),
        Job::Logistic(job) => run_logistic(job, cfg, &inv.out_dir),
        Job::Train(job) => run_train(job, cfg, inv),
        Job::Compare(job) => run_compare(job, cfg, inv),
        Job::Eval(job) => run_eval(job, cfg, &inv.out_dir),
    }
}

fn emit(out_dir: &Path, name: &str, csv: &str) -> Result<()> {
    runs::write_text(out_dir, name, csv)?;
    print!("{csv}");
    Ok(())
}

fn run_theory(job: &TheoryJob, cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let seed = cfg.seeds[0];
    let mut csv = String::from(
        "r,n,eta,epsilon,nat_of_nat,rob_of_nat,nat_of_rob,rob_of_rob,\
         mc_nat_of_nat,se_nat_of_nat,mc_rob_of_nat,se_rob_of_nat,\
         mc_nat_of_rob,se_nat_of_rob,mc_rob_of_rob,se_rob_of_rob\n",
    );
    for (i, params) in job.grid.iter().enumerate() {
        let row = validate_tail_errors(
            params,
            job.mc_samples,
            ltadv_core::rng::derive_seed(seed, ltadv_core::rng::stream::MC, 1_000 + i as u64),
        );
        let c = row.closed;
        let _ = writeln!(
            csv,
            "{},{},{},{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
            params.r,
            params.n,
            params.eta,
            params.epsilon,
            c.nat_of_nat,
            c.rob_of_nat,
            c.nat_of_rob,
            c.rob_of_rob,
            row.mc_nat_of_nat.p,
            row.mc_nat_of_nat.std_error,
            row.mc_rob_of_nat.p,
            row.mc_rob_of_nat.std_error,
            row.mc_nat_of_rob.p,
            row.mc_nat_of_rob.std_error,
            row.mc_rob_of_rob.p,
            row.mc_rob_of_rob.std_error,
        );
    }
    emit(out_dir, "theory.csv", &csv)
}

fn run_logistic(job: &LogisticJob, cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let mut csv = String::from(
        "seed,ir,nt_converged,at_converged,\
         nt_clean_tail,nt_rob_tail,nt_clean_head,nt_rob_head,\
         at_clean_tail,at_rob_tail,at_clean_head,at_rob_head,\
         nt_w0,nt_w1,nt_b,at_w0,at_w1,at_b\n",
    );
    for &seed in &cfg.seeds {
        let rows = run_logistic_experiment(
            &job.irs,
            job.eta,
            job.epsilon,
            job.train_size,
            job.test_size,
            seed,
            &job.settings,
        )?;
        for r in rows {
            let _ = writeln!(
                csv,
                "{},{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                seed,
                r.imbalance_ratio,
                r.nt_converged,
                r.at_converged,
                r.nt_clean_tail,
                r.nt_rob_tail,
                r.nt_clean_head,
                r.nt_rob_head,
                r.at_clean_tail,
                r.at_rob_tail,
                r.at_clean_head,
                r.at_rob_head,
                r.nt_boundary.0.first().copied().unwrap_or(0.0),
                r.nt_boundary.0.get(1).copied().unwrap_or(0.0),
                r.nt_boundary.1,
                r.at_boundary.0.first().copied().unwrap_or(0.0),
                r.at_boundary.0.get(1).copied().unwrap_or(0.0),
                r.at_boundary.1,
            );
        }
    }
    emit(out_dir, "logistic.csv", &csv)
}

fn final_metrics_csv(label: &str, seed: u64, history: &ltadv_core::trainer::RunHistory) -> String {
    let mut csv = String::from(
        "label,seed,checkpoint,epoch,clean_acc,pgd_acc,tail_clean,tail_pgd\n",
    );
    let best = history.best_metrics();
    let last = history.last_metrics();
    let _ = writeln!(
        csv,
        "{label},{seed},best,{},{:.4},{:.4},{:.4},{:.4}",
        history.best_epoch, best.clean_acc, best.pgd_acc, best.tail_clean, best.tail_pgd
    );
    let _ = writeln!(
        csv,
        "{label},{seed},last,{},{:.4},{:.4},{:.4},{:.4}",
        history.epochs.len(),
        last.clean_acc,
        last.pgd_acc,
        last.tail_clean,
        last.tail_pgd
    );
    csv
}

fn run_train(job: &TrainJob, cfg: &ExperimentConfig, inv: &Invocation) -> Result<()> {
    let is_teacher = cfg.mode == Mode::TrainTeacher;
    let mut summary = String::new();
    for (i, &seed) in cfg.seeds.iter().enumerate() {
        let (lt, test) = runs::build_datasets(&job.dataset, seed)?;
        let mut train_cfg = job.train.clone();
        train_cfg.seed = seed;
        train_cfg.label = if is_teacher { "teacher" } else { "student" }.to_string();

        let (model, history) = if is_teacher {
            train_teacher(&lt, &test, &train_cfg)?
        } else {
            let teacher = match &job.teacher_checkpoint {
                Some(p) => Some(runs::read_checkpoint(p)?),
                None => None,
            };
            train_student(&lt, &test, teacher.as_ref(), &train_cfg)?
        };

        let dir = if cfg.seeds.len() == 1 {
            inv.out_dir.clone()
        } else {
            let d = inv.out_dir.join(format!("seed{seed}"));
            runs::ensure_run_dir(&d, inv.overwrite)?;
            d
        };
        let best = history.best_model(&model.spec);
        runs::write_run_artifacts(&dir, &cfg.render_resolved(), &history, &best, &model)?;

        let block = final_metrics_csv(&train_cfg.label, seed, &history);
        if i == 0 {
            summary.push_str(&block);
        } else {
            // skip repeated header
            summary.push_str(block.split_once('\n').map(|x| x.1).unwrap_or(""));
        }
    }
    runs::write_text(&inv.out_dir, "summary.csv", &summary)?;
    print!("{summary}");
    Ok(())
}

/// Materialize the method list of a comparison into concrete configs.
pub fn build_method_configs(base: &TrainConfig, methods: &[String], alphas: &[f64]) -> Vec<TrainConfig> {
    let mut out = Vec::new();
    for m in methods {
        match m.as_str() {
            "pgd-at" => {
                let mut c = base.clone();
                c.label = "pgd-at".into();
                c.loss = LossConfig { tau: 0.0, alpha: 0.0, ..base.loss };
                out.push(c);
            }
            "at-bsl" => {
                let mut c = base.clone();
                c.label = "at-bsl".into();
                c.loss = LossConfig { alpha: 0.0, ..base.loss };
                out.push(c);
            }
            "ours" => {
                for &a in alphas {
                    let mut c = base.clone();
                    c.label = format!("ours-a{a}");
                    c.loss = LossConfig { alpha: a, ..base.loss };
                    out.push(c);
                }
            }
            other => unreachable!("validated method {other}"),
        }
    }
    out
}

fn run_compare(job: &CompareJob, cfg: &ExperimentConfig, inv: &Invocation) -> Result<()> {
    let (lt, test) = runs::build_datasets(&job.dataset, cfg.seeds[0])?;
    let methods = build_method_configs(&job.base, &job.methods, &job.alphas);
    let table = compare_methods(&lt, &test, &methods, &cfg.seeds)?;

    // One run directory per method × seed.
    for o in &table.outcomes {
        let dir = inv.out_dir.join(format!("{}_seed{}", o.label, o.seed));
        runs::ensure_run_dir(&dir, inv.overwrite)?;
        let best = o.history.best_model(&o.final_model.spec);
        runs::write_run_artifacts(&dir, &cfg.render_resolved(), &o.history, &best, &o.final_model)?;
    }

    // Per-run rows.
    let mut runs_csv = String::from(
        "method,seed,best_epoch,best_clean,best_pgd,best_t_clean,best_t_pgd,\
         last_clean,last_pgd,last_t_clean,last_t_pgd\n",
    );
    for o in &table.outcomes {
        let _ = writeln!(
            runs_csv,
            "{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
            o.label,
            o.seed,
            o.best_epoch,
            o.best.clean_acc,
            o.best.pgd_acc,
            o.best.tail_clean,
            o.best.tail_pgd,
            o.last.clean_acc,
            o.last.pgd_acc,
            o.last.tail_clean,
            o.last.tail_pgd,
        );
    }
    runs::write_text(&inv.out_dir, "runs.csv", &runs_csv)?;

    // Aggregate table: the paper-style columns (Clean, PGD, T-Clean, T-PGD
    // per checkpoint); the AutoAttack column is out of scope and omitted.
    let mut csv = String::from(
        "method,checkpoint,clean_mean,clean_std,pgd_mean,pgd_std,\
         t_clean_mean,t_clean_std,t_pgd_mean,t_pgd_std\n",
    );
    for a in &table.aggregates {
        let _ = writeln!(
            csv,
            "{},best,{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
            a.label,
            a.best_clean.mean,
            a.best_clean.std,
            a.best_pgd.mean,
            a.best_pgd.std,
            a.best_tail_clean.mean,
            a.best_tail_clean.std,
            a.best_tail_pgd.mean,
            a.best_tail_pgd.std,
        );
        let _ = writeln!(
            csv,
            "{},last,{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
            a.label,
            a.last_clean.mean,
            a.last_clean.std,
            a.last_pgd.mean,
            a.last_pgd.std,
            a.last_tail_clean.mean,
            a.last_tail_clean.std,
            a.last_tail_pgd.mean,
            a.last_tail_pgd.std,
        );
    }
    emit(&inv.out_dir, "comparison.csv", &csv)
}

fn run_eval(job: &EvalJob, cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let model: Model = runs::read_checkpoint(&job.checkpoint)?;
    let (_, test) = runs::build_datasets(&job.dataset, cfg.seeds[0])?;
    if model.spec.num_classes != test.num_classes {
        bail!(
            "checkpoint has {} classes but the dataset has {}",
            model.spec.num_classes,
            test.num_classes
        );
    }
    let metrics = evaluate(&model, &test, &job.attack, &job.tail_group, cfg.seeds[0])
        .map_err(|e| anyhow!("{e}"))?;
    let mut csv = String::from(&runs::metrics_header(test.num_classes)[6..]); // drop "epoch,"
    csv.insert_str(0, "checkpoint,");
    csv.push('\n');
    let row = runs::metrics_row(0, &metrics);
    let row = row.split_once(',').map(|x| x.1.to_string()).unwrap_or_default();
    let _ = writeln!(csv, "{},{row}", job.checkpoint.display());
    emit(out_dir, "eval.csv", &csv)
}
