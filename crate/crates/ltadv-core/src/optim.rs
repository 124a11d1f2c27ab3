//! SGD with momentum and decoupled-from-nothing classic weight decay.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Optimizer state for one parameter set.
///
/// Velocity buffers are zero-initialized and keyed by parameter name, so the
/// update order is independent of insertion order.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    /// The reference setup uses lr 0.1 and weight decay 5e-4; momentum is a
    /// configurable default of 0.9.
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if learning_rate < 0.0 || !(0.0..1.0).contains(&momentum) || weight_decay < 0.0 {
            return Err(Error::contract(
                "OptimizerState::new",
                format!("lr {learning_rate}, momentum {momentum}, weight decay {weight_decay}"),
            ));
        }
        Ok(OptimizerState {
            learning_rate,
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        })
    }

    /// One SGD step over named parameters:
    /// `v ← momentum·v + grad + weight_decay·param; param ← param − lr·v`.
    pub fn sgd_step(
        &mut self,
        params: &mut BTreeMap<String, Tensor>,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<()> {
        for (name, p) in params.iter_mut() {
            let g = grads.get(name).ok_or_else(|| {
                Error::contract("sgd_step", format!("missing gradient for parameter {name}"))
            })?;
            if g.shape() != p.shape() {
                return Err(Error::shape(
                    "sgd_step",
                    format!("{name}: param {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            let (lr, mu, wd) = (self.learning_rate, self.momentum, self.weight_decay);
            for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vv = mu * *vv + gv + wd * *pv;
                *pv -= lr * *vv;
            }
            debug_assert!(p.all_finite(), "non-finite parameter after sgd_step");
        }
        Ok(())
    }

    /// Drop accumulated velocity (used when a fresh run reuses the state).
    pub fn reset(&mut self) {
        self.velocity.clear();
    }
}
