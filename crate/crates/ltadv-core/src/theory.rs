//! Closed-form tail errors of the equal-weight linear classifier on the
//! binary Gaussian mixture, with Monte-Carlo validation.
//!
//! Setting: labels are head (+1) with probability `r/(r+1)` and tail (−1)
//! otherwise; coordinates are i.i.d. `N(η·y, 1)`. The optimal natural and
//! robust linear classifiers share the equal-weight direction `w = 1/√n` and
//! differ only in bias:
//!
//! ```text
//! b*_nat = ln r / (2√n·η)          b*_rob = ln r / (2√n·(η−ε))
//! ```
//!
//! The four tail errors (standard/robust error of each classifier) are
//! normal CDF evaluations; [`tail_errors`] computes them and
//! [`monte_carlo_tail_error`] checks them by simulation. The robust case
//! uses the exact worst-case L∞ shift (+ε on every coordinate for the tail
//! class), which is exact for linear classifiers, so no iterative attack
//! enters the oracle.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::attacks::{pgd, AttackConfig, AttackLoss};
use crate::datasets::{sample_gaussian_binary, LabeledSet};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::losses::cross_entropy;
use crate::math;
use crate::models::{init_model, Model, ModelSpec};
use crate::optim::OptimizerState;
use crate::rng::{self, stream};

/// Parameters of the binary Gaussian mixture analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryParams {
    /// Imbalance ratio, `r >= 1`.
    pub r: f64,
    /// Input dimension.
    pub n: usize,
    /// Class-mean magnitude, `η > 0`.
    pub eta: f64,
    /// Perturbation budget, `0 <= ε < η`. Zero is the degenerate natural
    /// case in which the robust and natural formulas coincide.
    pub epsilon: f64,
}

impl TheoryParams {
    pub fn new(r: f64, n: usize, eta: f64, epsilon: f64) -> Result<Self> {
        if !(r >= 1.0) {
            return Err(Error::domain("TheoryParams", format!("r must be >= 1, got {r}")));
        }
        if n == 0 {
            return Err(Error::domain("TheoryParams", "dimension n must be positive"));
        }
        if !(eta > 0.0) {
            return Err(Error::domain("TheoryParams", format!("eta must be > 0, got {eta}")));
        }
        if !(0.0..eta).contains(&epsilon) {
            return Err(Error::domain(
                "TheoryParams",
                format!("epsilon must satisfy 0 <= epsilon < eta, got {epsilon} vs eta {eta}"),
            ));
        }
        Ok(TheoryParams { r, n, eta, epsilon })
    }
}

/// Which objective the classifier was optimized for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Natural,
    Robust,
}

/// The four closed-form tail errors of the optimal classifiers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailErrors {
    /// Standard error of the natural classifier.
    pub nat_of_nat: f64,
    /// Robust error of the natural classifier.
    pub rob_of_nat: f64,
    /// Standard error of the robust classifier.
    pub nat_of_rob: f64,
    /// Robust error of the robust classifier.
    pub rob_of_rob: f64,
}

/// Standard normal CDF, accurate to well below 1e-12 absolute over
/// `|x| <= 8`.
///
/// For `|x| < 2` this sums the Maclaurin series of `erf(x/√2)`; for larger
/// arguments it evaluates the Laplace continued fraction of `erfc` with the
/// modified Lentz algorithm, which keeps full relative precision deep into
/// the tail.
pub fn std_normal_cdf(x: f64) -> f64 {
    const SQRT_2: f64 = core::f64::consts::SQRT_2;
    if x < -2.0 {
        0.5 * erfc_cf(-x / SQRT_2)
    } else if x <= 2.0 {
        0.5 + 0.5 * erf_series(x / SQRT_2)
    } else {
        1.0 - 0.5 * erfc_cf(x / SQRT_2)
    }
}

/// `erf(z)` by Maclaurin series; intended for `|z| <= ~1.5` where no
/// significant cancellation occurs.
fn erf_series(z: f64) -> f64 {
    const TWO_OVER_SQRT_PI: f64 = 1.128_379_167_095_512_6;
    let z2 = z * z;
    let mut term = z; // z^(2k+1) / k!
    let mut sum = z;
    let mut k = 0u32;
    loop {
        k += 1;
        term *= z2 / k as f64;
        let add = if k % 2 == 0 { 1.0 } else { -1.0 } * term / (2 * k + 1) as f64;
        sum += add;
        if math::abs(add) < 1e-18 * math::abs(sum) || k > 60 {
            break;
        }
    }
    TWO_OVER_SQRT_PI * sum
}

/// `erfc(z)` for `z >= ~1.4` via the continued fraction
/// `√π·e^{z²}·erfc(z) = 1/(z + (1/2)/(z + 1/(z + (3/2)/(z + ...))))`.
fn erfc_cf(z: f64) -> f64 {
    const SQRT_PI: f64 = 1.772_453_850_905_516;
    const TINY: f64 = 1e-300;
    let mut f = TINY;
    let mut c = f;
    let mut d = 0.0;
    let mut j = 0u32;
    loop {
        j += 1;
        let a = if j == 1 { 1.0 } else { (j - 1) as f64 / 2.0 };
        d = z + a * d;
        if math::abs(d) < TINY {
            d = TINY;
        }
        c = z + a / c;
        if math::abs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if math::abs(delta - 1.0) < 1e-17 || j > 500 {
            break;
        }
    }
    math::exp(-z * z) * f / SQRT_PI
}

/// The optimal bias of the equal-weight classifier:
/// `ln r / (2√n·η)` in the natural regime, `ln r / (2√n·(η−ε))` in the
/// robust regime.
pub fn optimal_bias(params: &TheoryParams, regime: Regime) -> f64 {
    let gap = match regime {
        Regime::Natural => params.eta,
        Regime::Robust => params.eta - params.epsilon,
    };
    math::ln(params.r) / (2.0 * math::sqrt(params.n as f64) * gap)
}

/// The four closed-form tail errors.
pub fn tail_errors(params: &TheoryParams) -> TailErrors {
    let sn = math::sqrt(params.n as f64);
    let b_nat = optimal_bias(params, Regime::Natural);
    let b_rob = optimal_bias(params, Regime::Robust);
    let clean_gap = sn * params.eta;
    let adv_gap = sn * (params.eta - params.epsilon);
    TailErrors {
        nat_of_nat: std_normal_cdf(-clean_gap + b_nat),
        rob_of_nat: std_normal_cdf(-adv_gap + b_nat),
        nat_of_rob: std_normal_cdf(-clean_gap + b_rob),
        rob_of_rob: std_normal_cdf(-adv_gap + b_rob),
    }
}

/// A Monte-Carlo probability estimate with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub p: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

const MC_CHUNK: usize = 1 << 16;

/// Simulate the tail error of the equal-weight classifier with bias `b`.
///
/// Draws tail samples `x ~ N(−η·1, I_n)` coordinate by coordinate; the
/// standard regime counts `sign(Σ x_k/√n + b) ≠ −1`, the robust regime first
/// applies the exact worst-case shift `+ε` to every coordinate. Chunks of
/// 2^16 samples use seeds derived as `derive_seed(seed, MC, chunk)`, so the
/// estimate is reproducible and chunks could run in parallel.
pub fn monte_carlo_tail_error(
    b: f64,
    params: &TheoryParams,
    regime: Regime,
    n_samples: usize,
    seed: u64,
) -> McEstimate {
    let sn = math::sqrt(params.n as f64);
    let shift = match regime {
        Regime::Natural => 0.0,
        Regime::Robust => params.epsilon * sn,
    };
    let mut errors = 0usize;
    let mut done = 0usize;
    let mut chunk = 0u64;
    while done < n_samples {
        let m = MC_CHUNK.min(n_samples - done);
        let mut rng = rng::rng_from(seed, stream::MC, chunk);
        for _ in 0..m {
            let mut sum = 0.0;
            for _ in 0..params.n {
                let g: f64 = rng.sample(StandardNormal);
                sum += g - params.eta;
            }
            if sum / sn + shift + b >= 0.0 {
                errors += 1;
            }
        }
        done += m;
        chunk += 1;
    }
    let p = errors as f64 / n_samples as f64;
    McEstimate {
        p,
        std_error: math::sqrt(p * (1.0 - p) / n_samples as f64),
        n_samples,
    }
}

/// One grid point of the closed-form-versus-simulation comparison.
#[derive(Debug, Clone, Copy)]
pub struct TheoryRow {
    pub params: TheoryParams,
    pub closed: TailErrors,
    pub mc_nat_of_nat: McEstimate,
    pub mc_rob_of_nat: McEstimate,
    pub mc_nat_of_rob: McEstimate,
    pub mc_rob_of_rob: McEstimate,
}

/// Evaluate the closed forms and all four Monte-Carlo counterparts.
pub fn validate_tail_errors(params: &TheoryParams, n_samples: usize, seed: u64) -> TheoryRow {
    let closed = tail_errors(params);
    let b_nat = optimal_bias(params, Regime::Natural);
    let b_rob = optimal_bias(params, Regime::Robust);
    let run = |b: f64, regime: Regime, lane: u64| {
        monte_carlo_tail_error(b, params, regime, n_samples, rng::derive_seed(seed, stream::MC, lane))
    };
    TheoryRow {
        params: *params,
        closed,
        mc_nat_of_nat: run(b_nat, Regime::Natural, 0),
        mc_rob_of_nat: run(b_nat, Regime::Robust, 1),
        mc_nat_of_rob: run(b_rob, Regime::Natural, 2),
        mc_rob_of_rob: run(b_rob, Regime::Robust, 3),
    }
}

/// The standard validation grid:
/// `r ∈ {1,2,5,10,50} × ε/η ∈ {0,0.25,0.5,0.75} × n ∈ {2,8} × η ∈ {1,2}`.
pub fn default_grid() -> Vec<TheoryParams> {
    let mut grid = Vec::new();
    for &r in &[1.0, 2.0, 5.0, 10.0, 50.0] {
        for &eps_frac in &[0.0, 0.25, 0.5, 0.75] {
            for &n in &[2usize, 8] {
                for &eta in &[1.0, 2.0] {
                    grid.push(
                        TheoryParams::new(r, n, eta, eps_frac * eta)
                            .expect("grid parameters are valid"),
                    );
                }
            }
        }
    }
    grid
}

/// Corollary check at one grid point: the robustly trained classifier has a
/// strictly larger tail robust error than the naturally trained one whenever
/// `r > 1` and `ε > 0`.
#[derive(Debug, Clone, Copy)]
pub struct CorollaryPoint {
    pub params: TheoryParams,
    /// `rob_of_rob − rob_of_nat`.
    pub margin: f64,
    /// Margin strictly positive where the corollary claims it, and exactly
    /// zero in the excluded `r = 1` case.
    pub holds: bool,
}

pub fn check_corollary1(grid: &[TheoryParams]) -> Vec<CorollaryPoint> {
    grid.iter()
        .map(|p| {
            let e = tail_errors(p);
            let margin = e.rob_of_rob - e.rob_of_nat;
            let holds = if p.r > 1.0 && p.epsilon > 0.0 {
                margin > 0.0
            } else {
                margin == 0.0
            };
            CorollaryPoint {
                params: *p,
                margin,
                holds,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Equal-weight optimality (Lemmas 1 and 2).
// ---------------------------------------------------------------------------

/// Closed-form overall error of `sign(w·x + b)` with `‖w‖₂ = 1`: the margin
/// center is `m = η·Σw_k` in the standard regime and `η·Σw_k − ε·‖w‖₁`
/// under the worst-case shift.
fn overall_error_closed(w_sum: f64, w_l1: f64, b: f64, params: &TheoryParams, regime: Regime) -> f64 {
    let m = match regime {
        Regime::Natural => params.eta * w_sum,
        Regime::Robust => params.eta * w_sum - params.epsilon * w_l1,
    };
    let head = params.r / (params.r + 1.0);
    let tail = 1.0 / (params.r + 1.0);
    head * std_normal_cdf(-m - b) + tail * std_normal_cdf(b - m)
}

/// Golden-section minimization of the closed-form overall error in the bias.
fn optimize_bias(w_sum: f64, w_l1: f64, params: &TheoryParams, regime: Regime) -> f64 {
    let f = |b: f64| overall_error_closed(w_sum, w_l1, b, params, regime);
    let (mut lo, mut hi) = (-1.0, math::ln(params.r.max(1.0 + 1e-9)) * 4.0 + 1.0);
    const PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = hi - PHI * (hi - lo);
    let mut x2 = lo + PHI * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..120 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Monte-Carlo overall error of `sign(w·x + b)` on the full mixture, with
/// the worst-case shift `−y·ε·sign(w_k)` applied per coordinate in the
/// robust regime (exact for a known linear boundary).
fn monte_carlo_overall_error(
    w: &[f64],
    b: f64,
    params: &TheoryParams,
    regime: Regime,
    n_samples: usize,
    seed: u64,
) -> McEstimate {
    let head_prob = params.r / (params.r + 1.0);
    let l1: f64 = w.iter().map(|&v| math::abs(v)).sum();
    let shift = match regime {
        Regime::Natural => 0.0,
        Regime::Robust => params.epsilon * l1,
    };
    let mut errors = 0usize;
    let mut done = 0usize;
    let mut chunk = 0u64;
    while done < n_samples {
        let m = MC_CHUNK.min(n_samples - done);
        let mut rng = rng::rng_from(seed, stream::MC, chunk);
        for _ in 0..m {
            let head = rng.gen::<f64>() < head_prob;
            let y = if head { 1.0 } else { -1.0 };
            let mut dot = 0.0;
            for &wk in w {
                let g: f64 = rng.sample(StandardNormal);
                dot += wk * (params.eta * y + g);
            }
            let score = dot - y * shift + b;
            let wrong = if head { score <= 0.0 } else { score >= 0.0 };
            if wrong {
                errors += 1;
            }
        }
        done += m;
        chunk += 1;
    }
    let p = errors as f64 / n_samples as f64;
    McEstimate {
        p,
        std_error: math::sqrt(p * (1.0 - p) / n_samples as f64),
        n_samples,
    }
}

/// Result of comparing one weight direction against the equal-weight
/// classifier, bias re-optimized for each and errors estimated with shared
/// Monte-Carlo draws.
#[derive(Debug, Clone)]
pub struct WeightComparison {
    pub weights: Vec<f64>,
    /// `err(w) − err(equal)` per regime; positive means the perturbed
    /// direction is worse, as the lemmas predict.
    pub std_margin: f64,
    pub std_se: f64,
    pub rob_margin: f64,
    pub rob_se: f64,
}

/// Compare a specific direction `w` (normalized internally) against equal
/// weights. The same derived seed feeds both estimates, so comparing equal
/// weights against themselves yields margins of exactly zero.
pub fn compare_weight_direction(
    w: &[f64],
    params: &TheoryParams,
    n_samples: usize,
    seed: u64,
) -> Result<WeightComparison> {
    if w.len() != params.n {
        return Err(Error::shape(
            "compare_weight_direction",
            format!("{} weights for dimension {}", w.len(), params.n),
        ));
    }
    let norm = math::sqrt(w.iter().map(|&v| v * v).sum::<f64>());
    if !(norm > 0.0) {
        return Err(Error::contract("compare_weight_direction", "weights must be nonzero"));
    }
    let w: Vec<f64> = w.iter().map(|&v| v / norm).collect();
    let eq = vec![1.0 / math::sqrt(params.n as f64); params.n];

    let run = |w: &[f64], regime: Regime| -> McEstimate {
        let w_sum: f64 = w.iter().sum();
        let w_l1: f64 = w.iter().map(|&v| math::abs(v)).sum();
        let b = optimize_bias(w_sum, w_l1, params, regime);
        monte_carlo_overall_error(w, b, params, regime, n_samples, seed)
    };

    let (std_p, std_e) = (run(&w, Regime::Natural), run(&eq, Regime::Natural));
    let (rob_p, rob_e) = (run(&w, Regime::Robust), run(&eq, Regime::Robust));
    let combine = |a: &McEstimate, b: &McEstimate| math::sqrt(a.std_error * a.std_error + b.std_error * b.std_error);
    Ok(WeightComparison {
        std_margin: std_p.p - std_e.p,
        std_se: combine(&std_p, &std_e),
        rob_margin: rob_p.p - rob_e.p,
        rob_se: combine(&rob_p, &rob_e),
        weights: w,
    })
}

#[derive(Debug, Clone)]
pub struct EqualWeightReport {
    pub params: TheoryParams,
    pub trials: Vec<WeightComparison>,
    /// True when no perturbed direction beat the equal-weight classifier by
    /// more than two combined standard errors in either regime.
    pub equal_weight_undefeated: bool,
}

/// Empirical check of the equal-weight lemmas: random unit-norm directions
/// perturbed away from `1/√n` (bias re-optimized per direction) never beat
/// the equal-weight classifier beyond Monte-Carlo noise.
pub fn check_equal_weight_optimality(
    params: &TheoryParams,
    trials: usize,
    n_samples: usize,
    seed: u64,
) -> Result<EqualWeightReport> {
    let mut rng = rng::rng_from(seed, stream::PERTURB, 0);
    let eq = 1.0 / math::sqrt(params.n as f64);
    let mut out = Vec::with_capacity(trials);
    for t in 0..trials {
        // Perturb and keep directions where the robust margin center stays
        // positive; others are degenerate classifiers that lose trivially.
        let w = loop {
            let cand: Vec<f64> = (0..params.n)
                .map(|_| {
                    let g: f64 = rng.sample(StandardNormal);
                    eq + 0.35 * g
                })
                .collect();
            let norm = math::sqrt(cand.iter().map(|&v| v * v).sum::<f64>());
            if !(norm > 1e-6) {
                continue;
            }
            let w_sum: f64 = cand.iter().map(|&v| v / norm).sum();
            let w_l1: f64 = cand.iter().map(|&v| math::abs(v) / norm).sum();
            if params.eta * w_sum - params.epsilon * w_l1 > 0.05 {
                break cand;
            }
        };
        let cmp = compare_weight_direction(
            &w,
            params,
            n_samples,
            rng::derive_seed(seed, stream::PERTURB, t as u64 + 1),
        )?;
        out.push(cmp);
    }
    let undefeated = out
        .iter()
        .all(|c| c.std_margin >= -2.0 * c.std_se && c.rob_margin >= -2.0 * c.rob_se);
    Ok(EqualWeightReport {
        params: *params,
        trials: out,
        equal_weight_undefeated: undefeated,
    })
}

// ---------------------------------------------------------------------------
// Logistic-regression experiment on the binary mixture.
// ---------------------------------------------------------------------------

/// Per-imbalance-ratio outcome of the logistic experiment. Accuracies are
/// percentages; the boundary is `(u, b)` with head predicted when
/// `u·x + b > 0`.
#[derive(Debug, Clone)]
pub struct LogisticRow {
    pub imbalance_ratio: f64,
    pub nt_converged: bool,
    pub at_converged: bool,
    pub nt_clean_tail: f64,
    pub nt_rob_tail: f64,
    pub nt_clean_head: f64,
    pub nt_rob_head: f64,
    pub at_clean_tail: f64,
    pub at_rob_tail: f64,
    pub at_clean_head: f64,
    pub at_rob_head: f64,
    pub nt_boundary: (Vec<f64>, f64),
    pub at_boundary: (Vec<f64>, f64),
}

/// Settings for [`run_logistic_experiment`]; the defaults follow the
/// analysis protocol (full-batch gradient descent, lr 0.1, at most 5000
/// epochs, stop when the gradient norm drops below 1e-6).
#[derive(Debug, Clone, Copy)]
pub struct LogisticSettings {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub grad_tolerance: f64,
    pub n_dim: usize,
}

impl Default for LogisticSettings {
    fn default() -> Self {
        LogisticSettings {
            learning_rate: 0.1,
            max_epochs: 5000,
            grad_tolerance: 1e-6,
            n_dim: 2,
        }
    }
}

fn grad_norm(grads: &[crate::tensor::Tensor]) -> f64 {
    math::sqrt(
        grads
            .iter()
            .flat_map(|t| t.data().iter())
            .map(|&v| v * v)
            .sum::<f64>(),
    )
}

/// Full-batch logistic training, optionally adversarial. For a linear model
/// the cross-entropy is monotone along every input coordinate, so a single
/// full-length signed step is the exact inner maximizer; the adversarial
/// branch therefore runs [`pgd`] with one step of size ε.
fn train_linear_logistic(
    train: &LabeledSet,
    adversarial_eps: Option<f64>,
    settings: &LogisticSettings,
    seed: u64,
) -> Result<(Model, bool)> {
    let mut model = init_model(&ModelSpec::linear(settings.n_dim, 2), seed)?;
    let mut opt = OptimizerState::new(settings.learning_rate, 0.0, 0.0)?;
    let attack = adversarial_eps.map(|eps| AttackConfig {
        epsilon: eps,
        step_size: eps,
        steps: 1,
        random_start: false,
        clamp: None,
        loss: AttackLoss::CrossEntropy,
    });
    let mut converged = false;
    for epoch in 0..settings.max_epochs {
        let batch = match &attack {
            Some(cfg) => pgd(
                &model,
                &train.features,
                &train.labels,
                cfg,
                rng::derive_seed(seed, stream::ATTACK, epoch as u64),
            )?,
            None => train.features.clone(),
        };
        let mut g = Graph::new();
        let x = g.leaf(batch);
        let pass = model.forward(&mut g, x)?;
        let loss = cross_entropy(&mut g, pass.logits, &train.labels)?;
        let grads = g.backward(loss)?;
        let mut gmap = alloc::collections::BTreeMap::new();
        let mut flat = Vec::new();
        for (name, id) in &pass.param_ids {
            gmap.insert(name.clone(), grads.wrt(*id).clone());
            flat.push(grads.wrt(*id).clone());
        }
        if grad_norm(&flat) < settings.grad_tolerance {
            converged = true;
            break;
        }
        opt.sgd_step(&mut model.params, &gmap)?;
    }
    Ok((model, converged))
}

/// Accuracy of the exact worst-case evaluation for a binary linear model.
fn binary_eval(model: &Model, test: &LabeledSet, eps: f64) -> Result<[f64; 4]> {
    let (u, b) = model.binary_boundary()?;
    let l1: f64 = u.iter().map(|&v| math::abs(v)).sum();
    let mut correct_clean = [0usize; 2];
    let mut correct_rob = [0usize; 2];
    let mut totals = [0usize; 2];
    for i in 0..test.len() {
        let y = test.labels[i];
        totals[y] += 1;
        let score: f64 = test
            .sample_row(i)
            .iter()
            .zip(&u)
            .map(|(&x, &w)| x * w)
            .sum::<f64>()
            + b;
        // head (class 1) is predicted when score > 0; ties go to class 0.
        let clean_ok = if y == 1 { score > 0.0 } else { score <= 0.0 };
        let rob_ok = if y == 1 {
            score - eps * l1 > 0.0
        } else {
            score + eps * l1 <= 0.0
        };
        if clean_ok {
            correct_clean[y] += 1;
        }
        if rob_ok {
            correct_rob[y] += 1;
        }
    }
    let pct = |c: usize, t: usize| 100.0 * c as f64 / t.max(1) as f64;
    Ok([
        pct(correct_clean[0], totals[0]),
        pct(correct_rob[0], totals[0]),
        pct(correct_clean[1], totals[1]),
        pct(correct_rob[1], totals[1]),
    ])
}

/// Train natural and adversarial logistic models per imbalance ratio and
/// evaluate tail/head accuracy clean and under the exact worst-case attack.
pub fn run_logistic_experiment(
    irs: &[f64],
    eta: f64,
    eps: f64,
    train_size: usize,
    test_size: usize,
    seed: u64,
    settings: &LogisticSettings,
) -> Result<Vec<LogisticRow>> {
    if !(eta > eps) || eps < 0.0 {
        return Err(Error::domain(
            "run_logistic_experiment",
            format!("need eta > eps >= 0, got eta {eta}, eps {eps}"),
        ));
    }
    let mut rows = Vec::with_capacity(irs.len());
    for (i, &ir) in irs.iter().enumerate() {
        let train = sample_gaussian_binary(
            ir,
            eta,
            settings.n_dim,
            train_size,
            rng::derive_seed(seed, stream::EXPERIMENT, 2 * i as u64),
        )?;
        let test = sample_gaussian_binary(
            ir,
            eta,
            settings.n_dim,
            test_size,
            rng::derive_seed(seed, stream::EXPERIMENT, 2 * i as u64 + 1),
        )?;
        let (nt, nt_converged) = train_linear_logistic(&train, None, settings, seed)?;
        let (at, at_converged) = train_linear_logistic(&train, Some(eps), settings, seed)?;
        let nt_acc = binary_eval(&nt, &test, eps)?;
        let at_acc = binary_eval(&at, &test, eps)?;
        rows.push(LogisticRow {
            imbalance_ratio: ir,
            nt_converged,
            at_converged,
            nt_clean_tail: nt_acc[0],
            nt_rob_tail: nt_acc[1],
            nt_clean_head: nt_acc[2],
            nt_rob_head: nt_acc[3],
            at_clean_tail: at_acc[0],
            at_rob_tail: at_acc[1],
            at_clean_head: at_acc[2],
            at_rob_head: at_acc[3],
            nt_boundary: nt.binary_boundary()?,
            at_boundary: at.binary_boundary()?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_reference_values() {
        // Frozen from an arbitrary-precision evaluation of erfc.
        let cases = [
            (-8.0, 6.220960574271784e-16),
            (-6.0, 9.865876450376981e-10),
            (-4.0, 3.167124183311992e-5),
            (-3.0, 1.349898031630095e-3),
            (-2.0, 2.275013194817921e-2),
            (-1.0, 0.15865525393145705),
            (-0.5, 0.3085375387259869),
            (0.0, 0.5),
            (1.0, 0.8413447460685429),
            (2.0, 0.9772498680518208),
            (4.0, 0.9999683287581669),
            (7.5, 0.9999999999999681),
        ];
        for (x, want) in cases {
            let got = std_normal_cdf(x);
            assert!(
                (got - want).abs() < 1e-13,
                "Phi({x}) = {got}, want {want}"
            );
        }
        // The spec's anchor value.
        assert!((std_normal_cdf(-1.414214) - 0.07864953929787239).abs() < 1e-12);
    }

    #[test]
    fn phi_symmetry() {
        for i in 0..200 {
            let x = -8.0 + i as f64 * 0.08;
            let s = std_normal_cdf(x) + std_normal_cdf(-x);
            assert!((s - 1.0).abs() < 1e-14, "symmetry at {x}: {s}");
        }
    }

    #[test]
    fn optimal_bias_reference_values() {
        let p = TheoryParams::new(1.0, 4, 1.0, 0.5).unwrap();
        assert_eq!(optimal_bias(&p, Regime::Natural), 0.0);
        assert_eq!(optimal_bias(&p, Regime::Robust), 0.0);

        let p = TheoryParams::new(2.0, 2, 1.0, 0.5).unwrap();
        let b = optimal_bias(&p, Regime::Robust);
        assert!((b - 0.4901290717342736).abs() < 1e-12, "got {b}");

        // Robust bias dominates the natural bias whenever eps > 0, r > 1.
        for r in [1.5, 2.0, 10.0] {
            for eps in [0.1, 0.5, 0.9] {
                let p = TheoryParams::new(r, 3, 1.0, eps).unwrap();
                assert!(optimal_bias(&p, Regime::Robust) >= optimal_bias(&p, Regime::Natural));
            }
        }
    }

    #[test]
    fn tail_error_reference_values() {
        // r=1: ln r = 0, so the clean error is Phi(-sqrt(n)·eta).
        let p = TheoryParams::new(1.0, 2, 1.0, 0.5).unwrap();
        let e = tail_errors(&p);
        assert!((e.nat_of_nat - 0.07864960352514257).abs() < 1e-12);

        let p = TheoryParams::new(2.0, 2, 1.0, 0.5).unwrap();
        let e = tail_errors(&p);
        assert!((e.rob_of_nat - 0.32202551290955205).abs() < 1e-12, "got {}", e.rob_of_nat);
    }

    #[test]
    fn epsilon_zero_collapses_the_regimes() {
        let p = TheoryParams::new(7.0, 4, 1.5, 0.0).unwrap();
        let e = tail_errors(&p);
        assert_eq!(e.rob_of_rob, e.nat_of_nat);
        assert_eq!(e.rob_of_nat, e.nat_of_nat);
        assert_eq!(e.nat_of_rob, e.nat_of_nat);
    }

    #[test]
    fn params_domain_errors() {
        assert!(TheoryParams::new(0.5, 2, 1.0, 0.0).is_err());
        assert!(TheoryParams::new(2.0, 0, 1.0, 0.0).is_err());
        assert!(TheoryParams::new(2.0, 2, 1.0, 1.0).is_err(), "epsilon == eta");
        assert!(TheoryParams::new(2.0, 2, 1.0, 1.5).is_err());
    }

    #[test]
    fn robust_error_dominates_standard_error() {
        for p in default_grid() {
            let e = tail_errors(&p);
            assert!(e.rob_of_nat >= e.nat_of_nat, "{p:?}");
            assert!(e.rob_of_rob >= e.nat_of_rob, "{p:?}");
            for v in [e.nat_of_nat, e.rob_of_nat, e.nat_of_rob, e.rob_of_rob] {
                assert!((0.0..=1.0).contains(&v), "{p:?}: {v}");
            }
        }
    }

    #[test]
    fn tail_errors_increase_with_imbalance() {
        // Monotone in r at fixed (n, eta, eps), by finite differencing r.
        for &(n, eta, eps) in &[(2usize, 1.0, 0.5), (8, 2.0, 0.5)] {
            let mut prev: Option<TailErrors> = None;
            for &r in &[1.0, 2.0, 5.0, 10.0, 50.0] {
                let e = tail_errors(&TheoryParams::new(r, n, eta, eps).unwrap());
                if let Some(q) = prev {
                    assert!(e.nat_of_nat > q.nat_of_nat);
                    assert!(e.rob_of_nat > q.rob_of_nat);
                    assert!(e.nat_of_rob > q.nat_of_rob);
                    assert!(e.rob_of_rob > q.rob_of_rob);
                }
                prev = Some(e);
            }
        }
    }

    #[test]
    fn corollary_reference_point_and_degenerate_case() {
        let p = TheoryParams::new(2.0, 2, 1.0, 0.5).unwrap();
        let pts = check_corollary1(&[p]);
        assert!(pts[0].holds);
        assert!((pts[0].margin - 0.09208734529579718).abs() < 1e-12, "got {}", pts[0].margin);

        let p1 = TheoryParams::new(1.0, 2, 1.0, 0.5).unwrap();
        let pts = check_corollary1(&[p1]);
        assert!(pts[0].holds);
        assert_eq!(pts[0].margin, 0.0);
    }

    #[test]
    fn corollary_margin_grows_with_epsilon() {
        for &r in &[2.0, 5.0, 10.0] {
            let mut prev = f64::NEG_INFINITY;
            for i in 1..8 {
                let eps = i as f64 * 0.1;
                let p = TheoryParams::new(r, 2, 1.0, eps).unwrap();
                let e = tail_errors(&p);
                let margin = e.rob_of_rob - e.rob_of_nat;
                assert!(margin > prev, "r {r} eps {eps}");
                prev = margin;
            }
        }
    }

    #[test]
    fn monte_carlo_agrees_with_closed_form_spot_checks() {
        for p in [
            TheoryParams::new(1.0, 2, 1.0, 0.5).unwrap(),
            TheoryParams::new(5.0, 8, 2.0, 1.0).unwrap(),
        ] {
            let row = validate_tail_errors(&p, 200_000, 99);
            for (closed, mc) in [
                (row.closed.nat_of_nat, row.mc_nat_of_nat),
                (row.closed.rob_of_nat, row.mc_rob_of_nat),
                (row.closed.nat_of_rob, row.mc_nat_of_rob),
                (row.closed.rob_of_rob, row.mc_rob_of_rob),
            ] {
                let slack = 4.0 * mc.std_error.max(1e-6);
                assert!(
                    (closed - mc.p).abs() < slack,
                    "{p:?}: closed {closed} vs mc {} ± {}",
                    mc.p,
                    mc.std_error
                );
            }
        }
    }

    #[test]
    fn mc_degenerate_cases() {
        let p = TheoryParams::new(2.0, 2, 1.0, 0.0).unwrap();
        // eps = 0 makes the robust regime identical to the standard one.
        let a = monte_carlo_tail_error(0.3, &p, Regime::Natural, 50_000, 5);
        let b = monte_carlo_tail_error(0.3, &p, Regime::Robust, 50_000, 5);
        assert_eq!(a.p, b.p);

        // Huge bias: the classifier always answers head, so tail error -> 1.
        let e = monte_carlo_tail_error(100.0, &p, Regime::Natural, 10_000, 6);
        assert_eq!(e.p, 1.0);
    }

    #[test]
    fn equal_weights_against_itself_has_zero_margin() {
        let p = TheoryParams::new(2.0, 2, 1.0, 0.5).unwrap();
        let eq = [0.5f64.sqrt(), 0.5f64.sqrt()];
        let cmp = compare_weight_direction(&eq, &p, 100_000, 7).unwrap();
        assert_eq!(cmp.std_margin, 0.0);
        assert_eq!(cmp.rob_margin, 0.0);
    }

    #[test]
    fn axis_aligned_direction_loses_clearly() {
        // w = (1, 0) against equal weights at r=2, eta=1.
        let p = TheoryParams::new(2.0, 2, 1.0, 0.5).unwrap();
        let cmp = compare_weight_direction(&[1.0, 0.0], &p, 1_000_000, 11).unwrap();
        assert!(
            cmp.std_margin > 2.0 * cmp.std_se,
            "std margin {} vs se {}",
            cmp.std_margin,
            cmp.std_se
        );
        assert!(
            cmp.rob_margin > 2.0 * cmp.rob_se,
            "rob margin {} vs se {}",
            cmp.rob_margin,
            cmp.rob_se
        );
    }

    #[test]
    fn logistic_experiment_balanced_case_is_symmetric() {
        let rows = run_logistic_experiment(
            &[1.0],
            1.0,
            0.5,
            4000,
            4000,
            3,
            &LogisticSettings {
                max_epochs: 1500,
                ..LogisticSettings::default()
            },
        )
        .unwrap();
        let row = &rows[0];
        assert!(
            (row.nt_clean_tail - row.nt_clean_head).abs() < 3.0,
            "NT gap {} vs {}",
            row.nt_clean_tail,
            row.nt_clean_head
        );
        assert!(
            (row.at_clean_tail - row.at_clean_head).abs() < 3.0,
            "AT gap {} vs {}",
            row.at_clean_tail,
            row.at_clean_head
        );
    }
}
