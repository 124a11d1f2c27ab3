//! Training objectives.
//!
//! All losses are graph builders: they extend a [`Graph`] with the loss
//! computation over a logits node and return the scalar loss node, so both
//! parameter gradients (training) and input gradients (attacks) fall out of
//! the same code. Natural logarithms throughout.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::math;
use crate::tensor::Tensor;

/// Hyperparameters of the combined student objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Balanced-softmax prior strength; the per-class logit offset is
    /// `b_i = tau·ln(n_i)`.
    pub tau: f64,
    /// Weight of the self-distillation term.
    pub alpha: f64,
    /// Softening temperature of the distillation term.
    pub kd_temperature: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 1.0,
            alpha: 5.0,
            kd_temperature: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kd_temperature > 0.0) {
            return Err(Error::contract("LossConfig", "kd_temperature must be > 0"));
        }
        if self.tau < 0.0 || self.alpha < 0.0 {
            return Err(Error::contract("LossConfig", "tau and alpha must be >= 0"));
        }
        Ok(())
    }
}

/// Mean softmax cross-entropy: `-(1/N) Σ_i log softmax(z_i)[y_i]`.
pub fn cross_entropy(g: &mut Graph, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    let logp = g.log_softmax(logits)?;
    g.nll_mean(logp, labels)
}

/// Balanced softmax loss: cross-entropy over logits shifted by
/// `b_i = tau·ln(n_i)`, which discounts head-class confidence in proportion
/// to class frequency.
pub fn balanced_softmax_loss(
    g: &mut Graph,
    logits: NodeId,
    labels: &[usize],
    counts: &[usize],
    tau: f64,
) -> Result<NodeId> {
    let cols = match g.value(logits).shape() {
        [_, c] => *c,
        s => {
            return Err(Error::shape(
                "balanced_softmax_loss",
                format!("logits must be [N,C], got {s:?}"),
            ))
        }
    };
    if counts.len() != cols {
        return Err(Error::shape(
            "balanced_softmax_loss",
            format!("{} counts for {cols} classes", counts.len()),
        ));
    }
    if let Some(class) = counts.iter().position(|&n| n == 0) {
        return Err(Error::contract(
            "balanced_softmax_loss",
            format!("class {class} has count 0; log(n_i) is undefined"),
        ));
    }
    let bias: Vec<f64> = counts.iter().map(|&n| tau * math::ln(n as f64)).collect();
    let bias_node = g.leaf(Tensor::from_vec(bias));
    let shifted = g.add_row(logits, bias_node)?;
    cross_entropy(g, shifted, labels)
}

/// Distillation loss: `T² · mean_i KL(softmax(t_i/T) ‖ softmax(s_i/T))`.
///
/// Teacher logits enter as constants, so no gradient flows to the teacher.
/// The value is nonnegative and zero exactly when the softened distributions
/// coincide.
pub fn kd_loss(
    g: &mut Graph,
    student_logits: NodeId,
    teacher_logits: &Tensor,
    temperature: f64,
) -> Result<NodeId> {
    if !(temperature > 0.0) {
        return Err(Error::contract("kd_loss", "temperature must be > 0"));
    }
    let shape = g.value(student_logits).shape().to_vec();
    if shape != teacher_logits.shape() || shape.len() != 2 {
        return Err(Error::shape(
            "kd_loss",
            format!("student {:?} vs teacher {:?}", shape, teacher_logits.shape()),
        ));
    }
    let (n, c) = (shape[0], shape[1]);

    // Softened teacher distribution and its (constant) negative entropy.
    // Scaling multiplies by the reciprocal, mirroring the graph's scale op
    // bit for bit so that identical logits yield an exact zero.
    let recip = 1.0 / temperature;
    let mut probs = Vec::with_capacity(n * c);
    let mut neg_entropy = 0.0;
    for i in 0..n {
        let row = teacher_logits.row(i);
        let mx = row.iter().fold(f64::NEG_INFINITY, |m, &v| math::max(m, v * recip));
        let mut z = 0.0;
        for &v in row {
            z += math::exp(v * recip - mx);
        }
        let lse = mx + math::ln(z);
        for &v in row {
            let logp = v * recip - lse;
            let p = math::exp(logp);
            probs.push(p);
            neg_entropy += p * logp;
        }
    }

    let scale = temperature * temperature / n as f64;
    let scaled_student = g.scale(student_logits, 1.0 / temperature);
    let logp_s = g.log_softmax(scaled_student)?;
    let teacher_node = g.leaf(Tensor::new(shape, probs)?);
    let cross = g.mul(logp_s, teacher_node)?;
    let cross_sum = g.sum_all(cross);
    let neg_cross = g.scale(cross_sum, -scale);
    let entropy_node = g.leaf(Tensor::scalar(scale * neg_entropy));
    g.add(neg_cross, entropy_node)
}

/// The student objective of the two-phase pipeline:
/// `L_BSL(student(x'), y) + alpha · L_KD(student(x'), teacher(x))`.
///
/// The teacher is evaluated on clean inputs and the student on adversarial
/// ones; callers pass the corresponding logits. With `alpha = 0` this is the
/// plain balanced-softmax baseline objective and the distillation term is
/// skipped entirely.
pub fn student_objective(
    g: &mut Graph,
    adv_logits: NodeId,
    clean_teacher_logits: &Tensor,
    labels: &[usize],
    counts: &[usize],
    cfg: &LossConfig,
) -> Result<NodeId> {
    cfg.validate()?;
    let bsl = balanced_softmax_loss(g, adv_logits, labels, counts, cfg.tau)?;
    if cfg.alpha == 0.0 {
        return Ok(bsl);
    }
    let kd = kd_loss(g, adv_logits, clean_teacher_logits, cfg.kd_temperature)?;
    let weighted = g.scale(kd, cfg.alpha);
    g.add(bsl, weighted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::finite_difference_check;
    use proptest::prelude::*;

    fn ce_value(logits: Tensor, labels: &[usize]) -> f64 {
        let mut g = Graph::new();
        let z = g.leaf(logits);
        let l = cross_entropy(&mut g, z, labels).unwrap();
        g.value(l).item().unwrap()
    }

    fn bsl_value(logits: Tensor, labels: &[usize], counts: &[usize], tau: f64) -> f64 {
        let mut g = Graph::new();
        let z = g.leaf(logits);
        let l = balanced_softmax_loss(&mut g, z, labels, counts, tau).unwrap();
        g.value(l).item().unwrap()
    }

    fn kd_value(student: Tensor, teacher: Tensor, t: f64) -> f64 {
        let mut g = Graph::new();
        let s = g.leaf(student);
        let l = kd_loss(&mut g, s, &teacher, t).unwrap();
        g.value(l).item().unwrap()
    }

    #[test]
    fn cross_entropy_reference_values() {
        let v = ce_value(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap(), &[0]);
        assert!((v - core::f64::consts::LN_2).abs() < 1e-12);

        let v = ce_value(Tensor::matrix(1, 2, vec![1000.0, 0.0]).unwrap(), &[0]);
        assert!(v.abs() < 1e-12, "saturated correct class, got {v}");

        let v = ce_value(Tensor::matrix(1, 4, vec![0.0; 4]).unwrap(), &[2]);
        assert!((v - (4.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn bsl_equals_ce_under_uniform_counts() {
        let logits = Tensor::matrix(2, 3, vec![0.3, -0.2, 1.4, 0.0, 0.9, -0.7]).unwrap();
        let labels = [2usize, 1];
        let ce = ce_value(logits.clone(), &labels);
        for tau in [0.5, 1.0, 3.0] {
            let bsl = bsl_value(logits.clone(), &labels, &[17, 17, 17], tau);
            assert!((bsl - ce).abs() < 1e-12, "tau {tau}: {bsl} vs {ce}");
        }
    }

    #[test]
    fn bsl_tail_reference_value() {
        // logits [0,0], counts [100,1], tau=1, y=1 (tail) → ln 101.
        let v = bsl_value(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap(), &[1], &[100, 1], 1.0);
        assert!((v - 4.615120516841259).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn bsl_with_tau_zero_is_ce() {
        let logits = Tensor::matrix(2, 3, vec![0.5, 0.1, -0.4, 1.2, 0.0, 0.3]).unwrap();
        let labels = [0usize, 2];
        let ce = ce_value(logits.clone(), &labels);
        let bsl = bsl_value(logits, &labels, &[9, 4, 1], 0.0);
        assert!((bsl - ce).abs() < 1e-12);
    }

    #[test]
    fn bsl_rejects_zero_count() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let err = balanced_softmax_loss(&mut g, z, &[0], &[3, 0], 1.0).unwrap_err();
        assert!(matches!(err, Error::Contract { .. }));
    }

    #[test]
    fn kd_zero_for_identical_logits() {
        let t = Tensor::matrix(2, 3, vec![0.4, -1.0, 0.2, 2.0, 0.0, -0.5]).unwrap();
        for temp in [1.0, 4.0] {
            let v = kd_value(t.clone(), t.clone(), temp);
            assert!(v.abs() < 1e-12, "T {temp}: {v}");
        }
    }

    #[test]
    fn kd_reference_value_for_opposed_logits() {
        // teacher [10,0], student [0,10], T=1: near-one-hot teacher gives
        // KL close to the logit gap.
        let v = kd_value(
            Tensor::matrix(1, 2, vec![0.0, 10.0]).unwrap(),
            Tensor::matrix(1, 2, vec![10.0, 0.0]).unwrap(),
            1.0,
        );
        assert!((v - 9.999092042625951).abs() < 1e-9, "got {v}");
    }

    #[test]
    fn kd_zero_iff_softened_distributions_equal() {
        // A constant shift of T·c leaves softmax(s/T) unchanged → KD 0.
        let teacher = Tensor::matrix(1, 3, vec![0.2, -0.7, 1.1]).unwrap();
        let shifted = Tensor::matrix(1, 3, vec![0.2 + 6.0, -0.7 + 6.0, 1.1 + 6.0]).unwrap();
        let v = kd_value(shifted, teacher.clone(), 2.0);
        assert!(v.abs() < 1e-12, "shift-invariant case: {v}");

        // Genuinely different distributions give a strictly positive value.
        let other = Tensor::matrix(1, 3, vec![0.2, 1.1, -0.7]).unwrap();
        let v = kd_value(other, teacher, 2.0);
        assert!(v > 1e-6, "distinct case: {v}");
    }

    #[test]
    fn objective_alpha_zero_is_bsl_alone() {
        let logits = Tensor::matrix(2, 3, vec![0.1, 0.4, -0.9, 1.3, 0.2, 0.0]).unwrap();
        let teacher = Tensor::matrix(2, 3, vec![9.0; 6]).unwrap();
        let labels = [1usize, 2];
        let counts = [30usize, 8, 2];
        let cfg = LossConfig { alpha: 0.0, ..LossConfig::default() };

        let mut g = Graph::new();
        let z = g.leaf(logits.clone());
        let obj = student_objective(&mut g, z, &teacher, &labels, &counts, &cfg).unwrap();
        let direct = bsl_value(logits, &labels, &counts, cfg.tau);
        assert_eq!(g.value(obj).item().unwrap(), direct);
    }

    #[test]
    fn objective_with_matching_teacher_keeps_only_bsl() {
        let logits = Tensor::matrix(1, 3, vec![0.4, -0.1, 0.8]).unwrap();
        let labels = [0usize];
        let counts = [5usize, 3, 1];
        let cfg = LossConfig { alpha: 1.0, ..LossConfig::default() };

        let mut g = Graph::new();
        let z = g.leaf(logits.clone());
        let obj = student_objective(&mut g, z, &logits, &labels, &counts, &cfg).unwrap();
        let bsl = bsl_value(logits, &labels, &counts, cfg.tau);
        assert!((g.value(obj).item().unwrap() - bsl).abs() < 1e-12);
    }

    #[test]
    fn objective_is_linear_in_alpha() {
        let logits = Tensor::matrix(2, 3, vec![0.6, -0.3, 0.1, -1.0, 0.5, 0.9]).unwrap();
        let teacher = Tensor::matrix(2, 3, vec![0.0, 0.4, -0.6, 0.3, -0.2, 0.7]).unwrap();
        let labels = [2usize, 0];
        let counts = [40usize, 10, 3];
        let value = |alpha: f64| {
            let cfg = LossConfig { alpha, ..LossConfig::default() };
            let mut g = Graph::new();
            let z = g.leaf(logits.clone());
            let obj = student_objective(&mut g, z, &teacher, &labels, &counts, &cfg).unwrap();
            g.value(obj).item().unwrap()
        };
        let (v0, v1, v2) = (value(0.0), value(1.0), value(2.0));
        assert!(((v2 - v0) - 2.0 * (v1 - v0)).abs() < 1e-10);
    }

    #[test]
    fn bsl_gradient_is_shifted_softmax_minus_onehot() {
        let logits = Tensor::matrix(2, 3, vec![0.25, -0.5, 1.0, 0.0, 0.75, -0.25]).unwrap();
        let labels = [2usize, 0];
        let counts = [12usize, 5, 2];
        let tau = 1.0;

        let mut g = Graph::new();
        let z = g.leaf(logits.clone());
        let loss = balanced_softmax_loss(&mut g, z, &labels, &counts, tau).unwrap();
        let grads = g.backward(loss).unwrap();
        let dz = grads.wrt(z);

        let n = 2.0;
        for i in 0..2 {
            // softmax of the shifted row.
            let row = logits.row(i);
            let shifted: Vec<f64> =
                row.iter().zip(&counts).map(|(&v, &c)| v + tau * (c as f64).ln()).collect();
            let mx = shifted.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let zsum: f64 = shifted.iter().map(|&v| (v - mx).exp()).sum();
            for c in 0..3 {
                let p = (shifted[c] - mx).exp() / zsum;
                let onehot = if labels[i] == c { 1.0 } else { 0.0 };
                let expect = (p - onehot) / n;
                assert!(
                    (dz.data()[i * 3 + c] - expect).abs() < 1e-6,
                    "row {i} class {c}: {} vs {expect}",
                    dz.data()[i * 3 + c]
                );
            }
        }

        // And against central differences.
        let err = finite_difference_check(
            |g, ids| balanced_softmax_loss(g, ids[0], &labels, &counts, tau),
            &[logits],
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "fd error {err}");
    }

    proptest! {
        #[test]
        fn bsl_inflates_strict_minimum_count_labels(
            z0 in -2.0f64..2.0, z1 in -2.0f64..2.0, z2 in -2.0f64..2.0,
            tau in 0.1f64..2.0,
        ) {
            // Tail class (strict minimum count) labeled samples pay a higher
            // BSL than CE.
            let logits = Tensor::matrix(1, 3, vec![z0, z1, z2]).unwrap();
            let counts = [50usize, 20, 4];
            let ce = ce_value(logits.clone(), &[2]);
            let bsl = bsl_value(logits, &[2], &counts, tau);
            prop_assert!(bsl > ce);
        }

        #[test]
        fn kd_is_nonnegative(
            s in proptest::collection::vec(-5.0f64..5.0, 6),
            t in proptest::collection::vec(-5.0f64..5.0, 6),
            temp in 0.5f64..8.0,
        ) {
            let v = kd_value(
                Tensor::matrix(2, 3, s).unwrap(),
                Tensor::matrix(2, 3, t).unwrap(),
                temp,
            );
            prop_assert!(v >= 0.0, "kd {v}");
        }

        #[test]
        fn kd_self_distillation_is_exactly_zero(
            s in proptest::collection::vec(-50.0f64..50.0, 6),
            temp in 0.5f64..8.0,
        ) {
            let t = Tensor::matrix(2, 3, s).unwrap();
            prop_assert_eq!(kd_value(t.clone(), t, temp), 0.0);
        }
    }
}
