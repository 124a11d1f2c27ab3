//! Differentiable classifiers producing raw logits.
//!
//! Three architectures cover the study: the linear model whose weights the
//! theory module compares against the analytic optimum, an MLP for the
//! synthetic flagship task, and a tiny two-block convolutional net for
//! image-shaped inputs. None of them carry normalization or dropout, so a
//! forward pass is deterministic and attack gradients are well defined.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::rng::{self, stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum Architecture {
    Linear,
    Mlp { hidden: Vec<usize> },
    /// Two 3×3 stride-1 conv blocks (ReLU, 2×2 max-pool) and a linear head.
    TinyConv { channels: [usize; 2] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub arch: Architecture,
    /// Per-sample feature shape: `[D]` for dense inputs, `[C,H,W]` for images.
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn linear(dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            arch: Architecture::Linear,
            input_shape: vec![dim],
            num_classes,
        }
    }

    pub fn mlp(dim: usize, hidden: Vec<usize>, num_classes: usize) -> Self {
        ModelSpec {
            arch: Architecture::Mlp { hidden },
            input_shape: vec![dim],
            num_classes,
        }
    }

    pub fn tiny_conv(input_shape: [usize; 3], channels: [usize; 2], num_classes: usize) -> Self {
        ModelSpec {
            arch: Architecture::TinyConv { channels },
            input_shape: input_shape.to_vec(),
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::contract("ModelSpec", "num_classes must be >= 2"));
        }
        match &self.arch {
            Architecture::Linear | Architecture::Mlp { .. } => {
                if self.input_shape.len() != 1 || self.input_shape[0] == 0 {
                    return Err(Error::contract(
                        "ModelSpec",
                        format!("dense input shape must be [D], got {:?}", self.input_shape),
                    ));
                }
                if let Architecture::Mlp { hidden } = &self.arch {
                    if hidden.is_empty() || hidden.iter().any(|&h| h == 0) {
                        return Err(Error::contract(
                            "ModelSpec",
                            "mlp hidden sizes must be positive",
                        ));
                    }
                }
            }
            Architecture::TinyConv { channels } => {
                if self.input_shape.len() != 3 {
                    return Err(Error::contract(
                        "ModelSpec",
                        format!("conv input shape must be [C,H,W], got {:?}", self.input_shape),
                    ));
                }
                let (h, w) = (self.input_shape[1], self.input_shape[2]);
                if channels.iter().any(|&c| c == 0) || self.input_shape[0] == 0 {
                    return Err(Error::contract("ModelSpec", "channel counts must be positive"));
                }
                // Two rounds of conv (−2) and pool (÷2) must leave a pixel.
                if Self::conv_out(h) == 0 || Self::conv_out(w) == 0 {
                    return Err(Error::contract(
                        "ModelSpec",
                        format!("input {h}x{w} too small for two conv/pool blocks"),
                    ));
                }
            }
        }
        Ok(())
    }

    fn conv_out(mut side: usize) -> usize {
        for _ in 0..2 {
            if side < 3 {
                return 0;
            }
            side = (side - 2) / 2;
        }
        side
    }

    /// Parameter names and shapes in forward order.
    fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let c = self.num_classes;
        match &self.arch {
            Architecture::Linear => {
                let d = self.input_shape[0];
                vec![("w".into(), vec![d, c]), ("b".into(), vec![c])]
            }
            Architecture::Mlp { hidden } => {
                let mut dims = vec![self.input_shape[0]];
                dims.extend_from_slice(hidden);
                dims.push(c);
                let mut out = Vec::new();
                for (i, pair) in dims.windows(2).enumerate() {
                    out.push((format!("layer{i}.w"), vec![pair[0], pair[1]]));
                    out.push((format!("layer{i}.b"), vec![pair[1]]));
                }
                out
            }
            Architecture::TinyConv { channels } => {
                let cin = self.input_shape[0];
                let (h, w) = (self.input_shape[1], self.input_shape[2]);
                let flat = channels[1] * Self::conv_out(h) * Self::conv_out(w);
                vec![
                    ("conv0.k".into(), vec![channels[0], cin, 3, 3]),
                    ("conv0.b".into(), vec![channels[0]]),
                    ("conv1.k".into(), vec![channels[1], channels[0], 3, 3]),
                    ("conv1.b".into(), vec![channels[1]]),
                    ("head.w".into(), vec![flat, c]),
                    ("head.b".into(), vec![c]),
                ]
            }
        }
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layout()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// A classifier: spec plus named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: BTreeMap<String, Tensor>,
}

/// Handles returned by [`Model::forward`]: the logits node plus one leaf per
/// parameter, in the model's forward order.
pub struct ForwardPass {
    pub logits: NodeId,
    pub param_ids: Vec<(String, NodeId)>,
}

/// Initialize weights from a zero-mean uniform fan-in scheme,
/// `U(−1/√fan_in, 1/√fan_in)`; biases start at zero.
pub fn init_model(spec: &ModelSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut rng = rng::rng_from(seed, stream::INIT, 0);
    let mut params = BTreeMap::new();
    for (name, shape) in spec.layout() {
        let len: usize = shape.iter().product();
        let tensor = if shape.len() == 1 {
            Tensor::zeros(&shape)
        } else {
            // fan_in: everything but the output axis. Dense weights are
            // [in, out]; conv kernels are [out, in, kh, kw].
            let fan_in = if shape.len() == 2 {
                shape[0]
            } else {
                shape[1] * shape[2] * shape[3]
            };
            let s = 1.0 / crate::math::sqrt(fan_in as f64);
            let data = (0..len).map(|_| s * (2.0 * rng.gen::<f64>() - 1.0)).collect();
            Tensor::new(shape, data)?
        };
        params.insert(name, tensor);
    }
    Ok(Model {
        spec: spec.clone(),
        params,
    })
}

impl Model {
    /// Build the forward computation on `g`, returning logits `[N, C]`.
    ///
    /// The batch node must already be in the graph; gradients flow to both
    /// the returned parameter leaves and the batch node, which is what the
    /// attacks differentiate.
    pub fn forward(&self, g: &mut Graph, batch: NodeId) -> Result<ForwardPass> {
        let shape = g.value(batch).shape().to_vec();
        if shape.len() != self.spec.input_shape.len() + 1
            || shape[1..] != self.spec.input_shape[..]
        {
            return Err(Error::shape(
                "Model::forward",
                format!(
                    "batch {:?} does not match input shape {:?}",
                    shape, self.spec.input_shape
                ),
            ));
        }
        let mut param_ids = Vec::new();
        let mut bind = |g: &mut Graph, params: &BTreeMap<String, Tensor>, name: &str| {
            let id = g.leaf(params[name].clone());
            param_ids.push((String::from(name), id));
            id
        };

        let logits = match &self.spec.arch {
            Architecture::Linear => {
                let w = bind(g, &self.params, "w");
                let b = bind(g, &self.params, "b");
                let z = g.matmul(batch, w)?;
                g.add_row(z, b)?
            }
            Architecture::Mlp { hidden } => {
                let mut h = batch;
                for i in 0..=hidden.len() {
                    let w = bind(g, &self.params, &format!("layer{i}.w"));
                    let b = bind(g, &self.params, &format!("layer{i}.b"));
                    let z = g.matmul(h, w)?;
                    let z = g.add_row(z, b)?;
                    h = if i < hidden.len() { g.relu(z) } else { z };
                }
                h
            }
            Architecture::TinyConv { .. } => {
                let n = shape[0];
                let mut h = batch;
                for i in 0..2 {
                    let k = bind(g, &self.params, &format!("conv{i}.k"));
                    let b = bind(g, &self.params, &format!("conv{i}.b"));
                    let z = g.conv3x3(h, k)?;
                    let z = g.add_channel_bias(z, b)?;
                    let z = g.relu(z);
                    h = g.max_pool2(z)?;
                }
                let flat = g.value(h).len() / n;
                let flat_node = g.reshape(h, &[n, flat])?;
                let w = bind(g, &self.params, "head.w");
                let b = bind(g, &self.params, "head.b");
                let z = g.matmul(flat_node, w)?;
                g.add_row(z, b)?
            }
        };
        Ok(ForwardPass { logits, param_ids })
    }

    /// Raw logits for a batch, no gradients.
    pub fn predict_logits(&self, batch: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.leaf(batch.clone());
        let pass = self.forward(&mut g, x)?;
        Ok(g.value(pass.logits).clone())
    }

    /// Effective binary decision boundary `(u, b)` of a 2-class linear
    /// model: the head class is predicted when `u·x + b > 0`.
    pub fn binary_boundary(&self) -> Result<(Vec<f64>, f64)> {
        if !matches!(self.spec.arch, Architecture::Linear) || self.spec.num_classes != 2 {
            return Err(Error::contract(
                "Model::binary_boundary",
                "only defined for 2-class linear models",
            ));
        }
        let w = &self.params["w"];
        let b = &self.params["b"];
        let d = self.spec.input_shape[0];
        let u = (0..d).map(|i| w.data()[i * 2 + 1] - w.data()[i * 2]).collect();
        Ok((u, b.data()[1] - b.data()[0]))
    }

    /// FNV-1a checksum over names, shapes, and value bits; used to assert
    /// that attacks and distillation leave parameters untouched.
    pub fn param_checksum(&self) -> u64 {
        let mut h = crate::checkpoint::Fnv1a::new();
        for (name, t) in &self.params {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                h.update(&v.to_bits().to_le_bytes());
            }
        }
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::finite_difference_check;

    #[test]
    fn linear_shapes_and_zero_bias() {
        let m = init_model(&ModelSpec::linear(2, 2), 0).unwrap();
        assert_eq!(m.params["w"].shape(), &[2, 2]);
        assert_eq!(m.params["b"].shape(), &[2]);
        assert!(m.params["b"].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_is_deterministic() {
        let spec = ModelSpec::mlp(4, vec![8], 3);
        assert_eq!(init_model(&spec, 42).unwrap(), init_model(&spec, 42).unwrap());
        assert_ne!(init_model(&spec, 42).unwrap(), init_model(&spec, 43).unwrap());
    }

    #[test]
    fn mlp_parameter_count() {
        // hidden [16], D=4, C=3: 4·16 + 16 + 16·3 + 3 = 131.
        let spec = ModelSpec::mlp(4, vec![16], 3);
        assert_eq!(spec.param_count(), 131);
    }

    #[test]
    fn identity_weights_pass_input_through() {
        let mut m = init_model(&ModelSpec::linear(2, 2), 0).unwrap();
        m.params.insert("w".into(), Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        m.params.insert("b".into(), Tensor::from_vec(vec![0.0, 0.0]));
        let out = m.predict_logits(&Tensor::matrix(1, 2, vec![2.0, 3.0]).unwrap()).unwrap();
        assert_eq!(out.data(), &[2.0, 3.0]);
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let mut m = init_model(&ModelSpec::linear(3, 4), 0).unwrap();
        m.params.insert("w".into(), Tensor::zeros(&[3, 4]));
        let out = m.predict_logits(&Tensor::matrix(2, 3, vec![1.0; 6]).unwrap()).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn logit_gradient_wrt_input_is_weight_column() {
        let mut m = init_model(&ModelSpec::linear(2, 2), 3).unwrap();
        m.params.insert(
            "w".into(),
            Tensor::matrix(2, 2, vec![0.7, -0.3, 0.2, 0.9]).unwrap(),
        );
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(1, 2, vec![0.5, -1.0]).unwrap());
        let pass = m.forward(&mut g, x).unwrap();
        // Select logit (0,0) with a constant mask.
        let mask = g.leaf(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
        let sel = g.mul(pass.logits, mask).unwrap();
        let root = g.sum_all(sel);
        let grads = g.backward(root).unwrap();
        let dx = grads.wrt(x);
        assert!((dx.data()[0] - 0.7).abs() < 1e-12);
        assert!((dx.data()[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn input_gradients_pass_finite_difference_check() {
        // Attacks differentiate with respect to x; check every architecture.
        let specs = [
            ModelSpec::linear(3, 2),
            ModelSpec::mlp(3, vec![5, 4], 2),
            ModelSpec::tiny_conv([1, 10, 10], [2, 3], 2),
        ];
        for (i, spec) in specs.iter().enumerate() {
            let m = init_model(spec, 11 + i as u64).unwrap();
            let mut shape = vec![2];
            shape.extend_from_slice(&spec.input_shape);
            let len: usize = shape.iter().product();
            let x = Tensor::new(shape, (0..len).map(|k| ((k * 7 % 13) as f64 - 6.0) / 6.0).collect()).unwrap();
            let err = finite_difference_check(
                |g, ids| {
                    let pass = m.forward(g, ids[0])?;
                    let logp = g.log_softmax(pass.logits)?;
                    g.nll_mean(logp, &[0, 1])
                },
                &[x],
                1e-4,
            )
            .unwrap();
            assert!(err < 1e-3, "arch {i} input-gradient error {err}");
        }
    }

    #[test]
    fn batch_shape_mismatch_is_rejected() {
        let m = init_model(&ModelSpec::linear(3, 2), 0).unwrap();
        let bad = Tensor::matrix(2, 4, vec![0.0; 8]).unwrap();
        assert!(matches!(m.predict_logits(&bad), Err(Error::ShapeMismatch { .. })));
    }
}
