//! The two-phase training pipeline and evaluation.
//!
//! Phase one trains a self-teacher with plain adversarial cross-entropy on
//! the balanced subset `D_B`. Phase two trains the student on the full
//! long-tailed set with the balanced-softmax loss plus a distillation term
//! that pulls the student's adversarial logits toward the frozen teacher's
//! clean logits. Baselines fall out of the same code path: `alpha = 0` is
//! the balanced-softmax baseline, and `alpha = 0, tau = 0` is plain PGD
//! adversarial training.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::attacks::{pgd, AttackConfig};
use crate::datasets::{make_balanced_subset, LabeledSet};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::losses::{self, LossConfig};
use crate::models::{init_model, Model, ModelSpec};
use crate::optim::OptimizerState;
use crate::rng::{self, stream};
use crate::tensor::Tensor;

const EVAL_BATCH: usize = 512;

/// Epochs, batch size, and base learning rate of one training phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

/// Step-decay learning-rate schedule expressed as fractions of the total
/// epoch budget. The reference schedule multiplies by 0.1 at 50% and 75%.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub milestones: Vec<f64>,
    pub factor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            milestones: vec![0.5, 0.75],
            factor: 0.1,
        }
    }
}

impl LrSchedule {
    fn lr_at(&self, base: f64, epoch_idx: usize, total_epochs: usize) -> f64 {
        let passed = self
            .milestones
            .iter()
            .filter(|&&m| epoch_idx >= ((m * total_epochs as f64) as usize))
            .count();
        base * crate::math::powf(self.factor, passed as f64)
    }
}

/// Full configuration for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub label: String,
    pub model: ModelSpec,
    pub teacher: PhaseConfig,
    pub student: PhaseConfig,
    pub momentum: f64,
    pub weight_decay: f64,
    pub train_attack: AttackConfig,
    pub eval_attack: AttackConfig,
    pub loss: LossConfig,
    /// Balanced-subset size multiplier; the teacher set holds
    /// `floor(gamma·n_min)` samples per class. The reference choice is IR/2.
    pub gamma: f64,
    /// Student-phase learning-rate schedule; the teacher runs at constant lr.
    pub schedule: LrSchedule,
    /// Class indices aggregated into the tail metrics.
    pub tail_group: Vec<usize>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.train_attack.validate()?;
        self.eval_attack.validate()?;
        for (name, phase) in [("teacher", &self.teacher), ("student", &self.student)] {
            if phase.epochs == 0 || phase.batch_size == 0 || !(phase.learning_rate > 0.0) {
                return Err(Error::contract(
                    "TrainConfig",
                    format!("{name} phase needs epochs >= 1, batch >= 1, lr > 0"),
                ));
            }
        }
        if !(self.gamma > 1.0) {
            return Err(Error::contract(
                "TrainConfig",
                format!("gamma must be > 1, got {}", self.gamma),
            ));
        }
        if self.tail_group.is_empty()
            || self.tail_group.iter().any(|&c| c >= self.model.num_classes)
        {
            return Err(Error::contract(
                "TrainConfig",
                "tail_group must be nonempty and within [0, C)",
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::contract("TrainConfig", "bad optimizer constants"));
        }
        Ok(())
    }

    /// Default tail group: the last class for ten-or-fewer-class tasks,
    /// otherwise the last 10% of classes.
    pub fn default_tail_group(num_classes: usize) -> Vec<usize> {
        if num_classes <= 10 {
            vec![num_classes - 1]
        } else {
            let k = (num_classes / 10).max(1);
            (num_classes - k..num_classes).collect()
        }
    }
}

/// Clean and adversarial accuracy, overall and per class, in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub clean_acc: f64,
    pub pgd_acc: f64,
    pub per_class_clean: Vec<f64>,
    pub per_class_pgd: Vec<f64>,
    pub tail_clean: f64,
    pub tail_pgd: f64,
}

/// Everything recorded over one training run.
#[derive(Debug, Clone)]
pub struct RunHistory {
    pub epochs: Vec<Metrics>,
    /// Mean training loss per epoch.
    pub train_losses: Vec<f64>,
    /// 1-indexed epoch with the highest overall PGD accuracy (first on ties).
    pub best_epoch: usize,
    /// Parameter snapshot at the best epoch.
    pub best_params: BTreeMap<String, Tensor>,
    /// Checkpoint identifiers for the best and last epoch.
    pub checkpoint_best: String,
    pub checkpoint_last: String,
    pub config_snapshot: String,
}

impl RunHistory {
    pub fn best_metrics(&self) -> &Metrics {
        &self.epochs[self.best_epoch - 1]
    }

    pub fn last_metrics(&self) -> &Metrics {
        self.epochs.last().expect("at least one epoch")
    }

    /// The model at the best checkpoint.
    pub fn best_model(&self, spec: &ModelSpec) -> Model {
        Model {
            spec: spec.clone(),
            params: self.best_params.clone(),
        }
    }
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Clean and PGD accuracy with per-class breakdown and tail aggregates.
///
/// The test set must contain every class. PGD uses per-batch seeds derived
/// from `seed`, so the call is deterministic; with a zero-budget attack the
/// adversarial pass equals the clean pass exactly.
pub fn evaluate(
    model: &Model,
    test: &LabeledSet,
    attack: &AttackConfig,
    tail_group: &[usize],
    seed: u64,
) -> Result<Metrics> {
    let counts = test.class_counts();
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(Error::contract(
            "evaluate",
            format!("test set is missing class {class}"),
        ));
    }
    if tail_group.is_empty() || tail_group.iter().any(|&c| c >= test.num_classes) {
        return Err(Error::contract("evaluate", "invalid tail group"));
    }
    let c = test.num_classes;
    let mut clean_correct = vec![0usize; c];
    let mut adv_correct = vec![0usize; c];

    let indices: Vec<usize> = (0..test.len()).collect();
    for (bi, chunk) in indices.chunks(EVAL_BATCH).enumerate() {
        let (xb, yb) = test.batch(chunk);
        let clean_logits = model.predict_logits(&xb)?;
        let adv = pgd(
            model,
            &xb,
            &yb,
            attack,
            rng::derive_seed(seed, stream::EVAL, bi as u64),
        )?;
        let adv_logits = if adv == xb {
            clean_logits.clone()
        } else {
            model.predict_logits(&adv)?
        };
        for (i, &y) in yb.iter().enumerate() {
            if argmax_lowest(clean_logits.row(i)) == y {
                clean_correct[y] += 1;
            }
            if argmax_lowest(adv_logits.row(i)) == y {
                adv_correct[y] += 1;
            }
        }
    }

    let pct = |correct: &[usize]| -> (f64, Vec<f64>, f64) {
        let per: Vec<f64> = correct
            .iter()
            .zip(&counts)
            .map(|(&k, &n)| 100.0 * k as f64 / n as f64)
            .collect();
        let total: usize = counts.iter().sum();
        let overall = 100.0 * correct.iter().sum::<usize>() as f64 / total as f64;
        let tail_n: usize = tail_group.iter().map(|&t| counts[t]).sum();
        let tail_k: usize = tail_group.iter().map(|&t| correct[t]).sum();
        let tail = 100.0 * tail_k as f64 / tail_n as f64;
        (overall, per, tail)
    };
    let (clean_acc, per_class_clean, tail_clean) = pct(&clean_correct);
    let (pgd_acc, per_class_pgd, tail_pgd) = pct(&adv_correct);
    Ok(Metrics {
        clean_acc,
        pgd_acc,
        per_class_clean,
        per_class_pgd,
        tail_clean,
        tail_pgd,
    })
}

fn shuffled_indices(len: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Per-(epoch, batch) attack seed under one run root.
fn attack_seed(root: u64, epoch: usize, batch: usize) -> u64 {
    rng::derive_seed(root, stream::ATTACK, ((epoch as u64) << 32) | batch as u64)
}

struct EpochStats {
    loss_sum: f64,
    samples: usize,
}

/// Shared training loop: adversarial examples against the live model, a
/// caller-supplied loss, SGD with momentum and weight decay.
#[allow(clippy::too_many_arguments)]
fn run_phase<F>(
    model: &mut Model,
    data: &LabeledSet,
    test: &LabeledSet,
    phase: &PhaseConfig,
    cfg: &TrainConfig,
    root: u64,
    schedule: Option<&LrSchedule>,
    mut build_loss: F,
) -> Result<RunHistory>
where
    F: FnMut(&mut Graph, crate::graph::NodeId, &[usize], &[usize]) -> Result<crate::graph::NodeId>,
{
    let mut opt = OptimizerState::new(phase.learning_rate, cfg.momentum, cfg.weight_decay)?;
    let mut history = RunHistory {
        epochs: Vec::with_capacity(phase.epochs),
        train_losses: Vec::with_capacity(phase.epochs),
        best_epoch: 0,
        best_params: model.params.clone(),
        checkpoint_best: String::new(),
        checkpoint_last: String::new(),
        config_snapshot: format!("{cfg:?}"),
    };
    let mut best_pgd = f64::NEG_INFINITY;

    for epoch in 0..phase.epochs {
        if let Some(s) = schedule {
            opt.learning_rate = s.lr_at(phase.learning_rate, epoch, phase.epochs);
        }
        let mut shuffle_rng = rng::rng_from(root, stream::SHUFFLE, epoch as u64);
        let order = shuffled_indices(data.len(), &mut shuffle_rng);
        let mut stats = EpochStats { loss_sum: 0.0, samples: 0 };

        for (bi, batch_idx) in order.chunks(phase.batch_size).enumerate() {
            let (xb, yb) = data.batch(batch_idx);
            let adv = pgd(model, &xb, &yb, &cfg.train_attack, attack_seed(root, epoch, bi))?;

            let mut g = Graph::new();
            let x = g.leaf(adv);
            let pass = model.forward(&mut g, x)?;
            let loss = build_loss(&mut g, pass.logits, &yb, batch_idx)?;
            let loss_value = g.value(loss).item()?;
            debug_assert!(loss_value.is_finite(), "non-finite training loss");
            stats.loss_sum += loss_value * yb.len() as f64;
            stats.samples += yb.len();

            let grads = g.backward(loss)?;
            let mut gmap = BTreeMap::new();
            for (name, id) in &pass.param_ids {
                gmap.insert(name.clone(), grads.wrt(*id).clone());
            }
            opt.sgd_step(&mut model.params, &gmap)?;
        }

        let metrics = evaluate(
            model,
            test,
            &cfg.eval_attack,
            &cfg.tail_group,
            rng::derive_seed(root, stream::EVAL, epoch as u64),
        )?;
        if metrics.pgd_acc > best_pgd {
            best_pgd = metrics.pgd_acc;
            history.best_epoch = epoch + 1;
            history.best_params = model.params.clone();
        }
        history.train_losses.push(stats.loss_sum / stats.samples.max(1) as f64);
        history.epochs.push(metrics);
    }
    history.checkpoint_best = format!("epoch_{:03}", history.best_epoch);
    history.checkpoint_last = format!("epoch_{:03}", phase.epochs);
    Ok(history)
}

/// Phase one: build the balanced subset and adversarially train the
/// self-teacher on it with plain cross-entropy at constant learning rate.
/// Returns the final-epoch model; no checkpoint selection is applied.
pub fn train_teacher(
    lt: &LabeledSet,
    test: &LabeledSet,
    cfg: &TrainConfig,
) -> Result<(Model, RunHistory)> {
    cfg.validate()?;
    let root = rng::derive_seed(cfg.seed, stream::EXPERIMENT, 1);
    let balanced = make_balanced_subset(lt, cfg.gamma, root)?;
    let mut model = init_model(&cfg.model, root)?;
    let history = run_phase(
        &mut model,
        &balanced,
        test,
        &cfg.teacher,
        cfg,
        root,
        None,
        |g, logits, yb, _| losses::cross_entropy(g, logits, yb),
    )?;
    Ok((model, history))
}

/// Phase two: train the student on the full long-tailed set with the
/// balanced-softmax loss plus distillation from the frozen teacher's clean
/// logits. The teacher is required exactly when `alpha > 0`; with
/// `alpha = 0` the loss is the balanced-softmax baseline and `tau = 0` on
/// top reduces it to plain PGD adversarial training.
pub fn train_student(
    lt: &LabeledSet,
    test: &LabeledSet,
    teacher: Option<&Model>,
    cfg: &TrainConfig,
) -> Result<(Model, RunHistory)> {
    cfg.validate()?;
    let counts = lt.class_counts();
    let needs_teacher = cfg.loss.alpha > 0.0;
    let teacher = match (needs_teacher, teacher) {
        (true, None) => {
            return Err(Error::contract(
                "train_student",
                "alpha > 0 requires a teacher model",
            ))
        }
        (true, Some(t)) => {
            if t.spec.num_classes != cfg.model.num_classes
                || t.spec.input_shape != cfg.model.input_shape
            {
                return Err(Error::contract(
                    "train_student",
                    format!(
                        "teacher {:?}/{} classes does not match student {:?}/{}",
                        t.spec.input_shape,
                        t.spec.num_classes,
                        cfg.model.input_shape,
                        cfg.model.num_classes
                    ),
                ));
            }
            Some(t)
        }
        (false, _) => None,
    };

    // The teacher is frozen, so its clean logits per sample are constants;
    // compute them once.
    let teacher_logits = match teacher {
        Some(t) => Some(t.predict_logits(&lt.features)?),
        None => None,
    };

    let root = rng::derive_seed(cfg.seed, stream::EXPERIMENT, 2);
    let mut model = init_model(&cfg.model, root)?;
    let c = cfg.model.num_classes;
    let history = run_phase(
        &mut model,
        lt,
        test,
        &cfg.student,
        cfg,
        root,
        Some(&cfg.schedule),
        |g, logits, yb, batch_idx| match &teacher_logits {
            Some(all) => {
                let mut rows = Vec::with_capacity(yb.len() * c);
                for &i in batch_idx {
                    rows.extend_from_slice(all.row(i));
                }
                let t = Tensor::matrix(yb.len(), c, rows)?;
                losses::student_objective(g, logits, &t, yb, &counts, &cfg.loss)
            }
            None => {
                let dummy = Tensor::zeros(&[yb.len(), c]);
                losses::student_objective(g, logits, &dummy, yb, &counts, &cfg.loss)
            }
        },
    )?;
    Ok((model, history))
}

/// One method × seed outcome inside a comparison.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub label: String,
    pub seed: u64,
    pub best_epoch: usize,
    pub best: Metrics,
    pub last: Metrics,
    pub history: RunHistory,
    pub final_model: Model,
}

/// Mean and sample standard deviation of one metric over seeds.
#[derive(Debug, Clone, Copy)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

fn aggregate(values: &[f64]) -> Aggregate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Aggregate {
        mean,
        std: crate::math::sqrt(var),
    }
}

/// Aggregated row per method: best- and last-checkpoint clean/PGD accuracy,
/// overall and tail.
#[derive(Debug, Clone)]
pub struct AggregateRow {
    pub label: String,
    pub best_clean: Aggregate,
    pub best_pgd: Aggregate,
    pub best_tail_clean: Aggregate,
    pub best_tail_pgd: Aggregate,
    pub last_clean: Aggregate,
    pub last_pgd: Aggregate,
    pub last_tail_clean: Aggregate,
    pub last_tail_pgd: Aggregate,
}

#[derive(Debug, Clone)]
pub struct ComparisonTable {
    pub outcomes: Vec<MethodOutcome>,
    pub aggregates: Vec<AggregateRow>,
}

/// Run every method over every seed and aggregate. Methods that distill
/// (`alpha > 0`) share one teacher per seed when their teacher-relevant
/// settings agree, which keeps α sweeps affordable.
pub fn compare_methods(
    lt: &LabeledSet,
    test: &LabeledSet,
    methods: &[TrainConfig],
    seeds: &[u64],
) -> Result<ComparisonTable> {
    if methods.is_empty() || seeds.is_empty() {
        return Err(Error::contract("compare_methods", "need methods and seeds"));
    }
    for m in methods {
        if m.eval_attack != methods[0].eval_attack {
            return Err(Error::contract(
                "compare_methods",
                "all methods must share the evaluation attack",
            ));
        }
    }

    let mut outcomes = Vec::new();
    for &seed in seeds {
        // (teacher-relevant config, trained teacher) cache for this seed.
        let mut teachers: Vec<(TrainConfig, Model)> = Vec::new();
        for method in methods {
            let mut cfg = method.clone();
            cfg.seed = seed;
            let teacher = if cfg.loss.alpha > 0.0 {
                let key = {
                    let mut k = cfg.clone();
                    // student-only settings do not affect the teacher
                    k.loss = LossConfig { alpha: 0.0, ..k.loss };
                    k.student = PhaseConfig {
                        epochs: 1,
                        batch_size: 1,
                        learning_rate: 1.0,
                    };
                    k.label = String::new();
                    k
                };
                let cached = teachers.iter().find(|(k, _)| *k == key).map(|(_, m)| m.clone());
                match cached {
                    Some(m) => Some(m),
                    None => {
                        let (m, _) = train_teacher(lt, test, &cfg)?;
                        teachers.push((key, m.clone()));
                        Some(m)
                    }
                }
            } else {
                None
            };
            let (final_model, history) = train_student(lt, test, teacher.as_ref(), &cfg)?;
            outcomes.push(MethodOutcome {
                label: cfg.label.clone(),
                seed,
                best_epoch: history.best_epoch,
                best: history.best_metrics().clone(),
                last: history.last_metrics().clone(),
                history,
                final_model,
            });
        }
    }

    let mut aggregates = Vec::new();
    for method in methods {
        let rows: Vec<&MethodOutcome> = outcomes
            .iter()
            .filter(|o| o.label == method.label)
            .collect();
        let pick = |f: &dyn Fn(&MethodOutcome) -> f64| {
            aggregate(&rows.iter().map(|o| f(o)).collect::<Vec<f64>>())
        };
        aggregates.push(AggregateRow {
            label: method.label.clone(),
            best_clean: pick(&|o| o.best.clean_acc),
            best_pgd: pick(&|o| o.best.pgd_acc),
            best_tail_clean: pick(&|o| o.best.tail_clean),
            best_tail_pgd: pick(&|o| o.best.tail_pgd),
            last_clean: pick(&|o| o.last.clean_acc),
            last_pgd: pick(&|o| o.last.pgd_acc),
            last_tail_clean: pick(&|o| o.last.tail_clean),
            last_tail_pgd: pick(&|o| o.last.tail_pgd),
        });
    }
    Ok(ComparisonTable {
        outcomes,
        aggregates,
    })
}
