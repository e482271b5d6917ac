//! A small multilayer perceptron with hand-written backpropagation.
//!
//! The trunk is a stack of `Dense → [BatchNorm] → ReLU` blocks. The output of
//! the last trunk block is the deep feature layer (D×N, post-ReLU), where the
//! embedding loss attaches. A final linear classifier maps features to C×N
//! logits. Samples are columns throughout.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointError};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("input has {found} rows, network expects {expected}")]
    InputDim { expected: usize, found: usize },
    #[error("{what} gradient has shape {found:?}, expected {expected:?}")]
    GradShape {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("trace was recorded before the parameters last changed")]
    StaleTrace,
    #[error("backward needs a trace recorded in train mode")]
    EvalTrace,
    #[error("parameters do not match the network spec: {0}")]
    ParamShape(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub class_count: usize,
    pub use_batchnorm: bool,
    pub activation: Activation,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.input_dim == 0 || self.feature_dim == 0 || self.class_count == 0 {
            return Err(NetworkError::InvalidSpec(
                "input_dim, feature_dim and class_count must be >= 1".into(),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(NetworkError::InvalidSpec("hidden widths must be >= 1".into()));
        }
        Ok(())
    }

    /// Widths of the trunk, input first, feature layer last.
    pub fn trunk_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.feature_dim);
        dims
    }
}

/// Fully connected layer; `weight` is out×in.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(out: usize, inp: usize) -> Self {
        Self {
            weight: Matrix::zeros(out, inp),
            bias: vec![0.0; out],
        }
    }

    fn apply(&self, input: &Matrix) -> Result<Matrix, LinalgError> {
        let mut z = self.weight.matmul(input)?;
        for (i, &b) in self.bias.iter().enumerate() {
            for v in z.row_mut(i) {
                *v += b;
            }
        }
        Ok(z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }
}

/// Trainable tensors plus batchnorm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub trunk: Vec<Dense>,
    /// One per trunk layer when batchnorm is enabled, otherwise empty.
    pub norms: Vec<BatchNorm>,
    pub classifier: Dense,
}

/// What a tensor is, for optimizers that treat kinds differently.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Bias,
    BnScale,
    BnShift,
}

impl NetworkParams {
    /// Trainable tensors in a fixed order: per trunk layer weight, bias,
    /// then (with batchnorm) γ, β; finally classifier weight and bias.
    pub fn tensors_mut(&mut self) -> Vec<(TensorKind, &mut [f64])> {
        let mut out = Vec::new();
        let mut norms = self.norms.iter_mut();
        for dense in self.trunk.iter_mut() {
            out.push((TensorKind::Weight, dense.weight.as_mut_slice()));
            out.push((TensorKind::Bias, dense.bias.as_mut_slice()));
            if let Some(bn) = norms.next() {
                out.push((TensorKind::BnScale, bn.gamma.as_mut_slice()));
                out.push((TensorKind::BnShift, bn.beta.as_mut_slice()));
            }
        }
        out.push((TensorKind::Weight, self.classifier.weight.as_mut_slice()));
        out.push((TensorKind::Bias, self.classifier.bias.as_mut_slice()));
        out
    }

    pub fn tensors(&self) -> Vec<(TensorKind, &[f64])> {
        let mut out = Vec::new();
        let mut norms = self.norms.iter();
        for dense in &self.trunk {
            out.push((TensorKind::Weight, dense.weight.as_slice()));
            out.push((TensorKind::Bias, dense.bias.as_slice()));
            if let Some(bn) = norms.next() {
                out.push((TensorKind::BnScale, bn.gamma.as_slice()));
                out.push((TensorKind::BnShift, bn.beta.as_slice()));
            }
        }
        out.push((TensorKind::Weight, self.classifier.weight.as_slice()));
        out.push((TensorKind::Bias, self.classifier.bias.as_slice()));
        out
    }

    fn check_against(&self, spec: &NetworkSpec) -> Result<(), NetworkError> {
        let dims = spec.trunk_dims();
        if self.trunk.len() != dims.len() - 1 {
            return Err(NetworkError::ParamShape(format!(
                "{} trunk layers, spec has {}",
                self.trunk.len(),
                dims.len() - 1
            )));
        }
        for (l, dense) in self.trunk.iter().enumerate() {
            if dense.weight.shape() != (dims[l + 1], dims[l]) || dense.bias.len() != dims[l + 1] {
                return Err(NetworkError::ParamShape(format!("trunk layer {l}")));
            }
        }
        let expected_norms = if spec.use_batchnorm { dims.len() - 1 } else { 0 };
        if self.norms.len() != expected_norms {
            return Err(NetworkError::ParamShape("batchnorm layer count".into()));
        }
        for (l, bn) in self.norms.iter().enumerate() {
            let w = dims[l + 1];
            if bn.gamma.len() != w || bn.beta.len() != w || bn.running_mean.len() != w || bn.running_var.len() != w {
                return Err(NetworkError::ParamShape(format!("batchnorm layer {l}")));
            }
            if bn.running_var.iter().any(|&v| !(v > 0.0)) {
                return Err(NetworkError::ParamShape(format!(
                    "batchnorm layer {l} running variance must be > 0"
                )));
            }
        }
        if self.classifier.weight.shape() != (spec.class_count, spec.feature_dim)
            || self.classifier.bias.len() != spec.class_count
        {
            return Err(NetworkError::ParamShape("classifier".into()));
        }
        Ok(())
    }
}

/// Xavier-uniform weights in `±√(6/(fan_in + fan_out))`, zero biases,
/// identity batchnorm. Deterministic in `seed`.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<NetworkParams, NetworkError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = spec.trunk_dims();
    let mut xavier = |out: usize, inp: usize| {
        let bound = xavier_bound(inp, out);
        let weight = Matrix::from_fn(out, inp, |_, _| rng.random_range(-bound..=bound));
        Dense {
            weight,
            bias: vec![0.0; out],
        }
    };
    let trunk: Vec<Dense> = dims.windows(2).map(|w| xavier(w[1], w[0])).collect();
    let classifier = xavier(spec.class_count, spec.feature_dim);
    let norms = if spec.use_batchnorm {
        dims[1..].iter().map(|&w| BatchNorm::new(w)).collect()
    } else {
        Vec::new()
    };
    Ok(NetworkParams {
        trunk,
        norms,
        classifier,
    })
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Matrix,
    bn: Option<BnCache>,
    /// Post-normalization, pre-ReLU activations.
    pre_activation: Matrix,
}

/// Activations cached by [`Network::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    mode: Mode,
    version: u64,
    layers: Vec<LayerCache>,
    features: Matrix,
    logits: Matrix,
}

impl ForwardTrace {
    /// Deep features, D×N.
    pub fn features(&self) -> &Matrix {
        &self.features
    }

    /// Classifier outputs, C×N.
    pub fn logits(&self) -> &Matrix {
        &self.logits
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Inputs to each trunk ReLU (after batchnorm when enabled).
    pub fn pre_activations(&self) -> Vec<&Matrix> {
        self.layers.iter().map(|l| &l.pre_activation).collect()
    }
}

/// Gradients shaped like the trainable part of [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGrads {
    pub trunk: Vec<Dense>,
    /// (dγ, dβ) per batchnorm layer.
    pub norms: Vec<(Vec<f64>, Vec<f64>)>,
    pub classifier: Dense,
}

impl NetworkGrads {
    /// Same order as [`NetworkParams::tensors_mut`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        let mut norms = self.norms.iter();
        for dense in &self.trunk {
            out.push(dense.weight.as_slice());
            out.push(dense.bias.as_slice());
            if let Some((g, b)) = norms.next() {
                out.push(g.as_slice());
                out.push(b.as_slice());
            }
        }
        out.push(self.classifier.weight.as_slice());
        out.push(self.classifier.bias.as_slice());
        out
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0))
    }
}

/// Network spec, parameters, and a version counter that invalidates traces
/// once parameters are handed out for mutation.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    params: NetworkParams,
    version: u64,
}

impl Network {
    pub fn new(spec: NetworkSpec, params: NetworkParams) -> Result<Self, NetworkError> {
        spec.validate()?;
        params.check_against(&spec)?;
        Ok(Self {
            spec,
            params,
            version: 0,
        })
    }

    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self, NetworkError> {
        let params = init_params(&spec, seed)?;
        Self::new(spec, params)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    /// Mutable parameter access. Any trace recorded earlier becomes stale.
    pub fn params_mut(&mut self) -> &mut NetworkParams {
        self.version += 1;
        &mut self.params
    }

    /// Runs the network. Does not touch running statistics; train mode
    /// records the batch moments in the trace (see [`Network::forward_train`]).
    pub fn forward(&self, input: &Matrix, mode: Mode) -> Result<ForwardTrace, NetworkError> {
        if input.rows() != self.spec.input_dim {
            return Err(NetworkError::InputDim {
                expected: self.spec.input_dim,
                found: input.rows(),
            });
        }
        let mut layers = Vec::with_capacity(self.params.trunk.len());
        let mut act = input.clone();
        for (l, dense) in self.params.trunk.iter().enumerate() {
            let z = dense.apply(&act)?;
            let (pre, bn) = match self.params.norms.get(l) {
                None => (z, None),
                Some(norm) => {
                    let (pre, cache) = batchnorm_forward(&z, norm, mode);
                    (pre, Some(cache))
                }
            };
            let next = pre.map(|v| v.max(0.0));
            layers.push(LayerCache {
                input: act,
                bn,
                pre_activation: pre,
            });
            act = next;
        }
        let logits = self.params.classifier.apply(&act)?;
        Ok(ForwardTrace {
            mode,
            version: self.version,
            layers,
            features: act,
            logits,
        })
    }

    /// Train-mode forward that also folds the batch moments into the
    /// running statistics.
    pub fn forward_train(&mut self, input: &Matrix) -> Result<ForwardTrace, NetworkError> {
        let trace = self.forward(input, Mode::Train)?;
        for (norm, layer) in self.params.norms.iter_mut().zip(&trace.layers) {
            let cache = layer.bn.as_ref().expect("batchnorm cache");
            for i in 0..norm.running_mean.len() {
                norm.running_mean[i] = (1.0 - BN_MOMENTUM) * norm.running_mean[i] + BN_MOMENTUM * cache.batch_mean[i];
                norm.running_var[i] = (1.0 - BN_MOMENTUM) * norm.running_var[i] + BN_MOMENTUM * cache.batch_var[i];
            }
        }
        // running stats do not enter train-mode outputs, so the trace stays valid
        Ok(trace)
    }

    /// Backpropagates `feature_grad` (D×N, injected at the feature layer) and
    /// `logit_grad` (C×N). The classifier only ever sees `logit_grad`.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        feature_grad: &Matrix,
        logit_grad: &Matrix,
    ) -> Result<NetworkGrads, NetworkError> {
        if trace.version != self.version {
            return Err(NetworkError::StaleTrace);
        }
        if trace.mode != Mode::Train {
            return Err(NetworkError::EvalTrace);
        }
        if feature_grad.shape() != trace.features.shape() {
            return Err(NetworkError::GradShape {
                what: "feature",
                expected: trace.features.shape(),
                found: feature_grad.shape(),
            });
        }
        if logit_grad.shape() != trace.logits.shape() {
            return Err(NetworkError::GradShape {
                what: "logit",
                expected: trace.logits.shape(),
                found: logit_grad.shape(),
            });
        }

        let classifier = Dense {
            weight: logit_grad.matmul_t(&trace.features)?,
            bias: row_sums(logit_grad),
        };
        let mut upstream = self.params.classifier.weight.t_matmul(logit_grad)?;
        upstream.axpy(1.0, feature_grad)?;

        let n_layers = self.params.trunk.len();
        let mut trunk = vec![Dense::zeros(0, 0); n_layers];
        let mut norms = vec![(Vec::new(), Vec::new()); self.params.norms.len()];
        for l in (0..n_layers).rev() {
            let cache = &trace.layers[l];
            let mut grad = upstream;
            for (g, &pre) in grad.as_mut_slice().iter_mut().zip(cache.pre_activation.as_slice()) {
                if pre <= 0.0 {
                    *g = 0.0;
                }
            }
            if let Some(bn) = cache.bn.as_ref() {
                let (dz, dgamma, dbeta) = batchnorm_backward(&grad, bn, &self.params.norms[l]);
                norms[l] = (dgamma, dbeta);
                grad = dz;
            }
            let dense = &self.params.trunk[l];
            trunk[l] = Dense {
                weight: grad.matmul_t(&cache.input)?,
                bias: row_sums(&grad),
            };
            upstream = dense.weight.t_matmul(&grad)?;
        }
        Ok(NetworkGrads {
            trunk,
            norms,
            classifier,
        })
    }
}

fn row_sums(m: &Matrix) -> Vec<f64> {
    (0..m.rows()).map(|i| m.row(i).iter().sum()).collect()
}

fn batchnorm_forward(z: &Matrix, norm: &BatchNorm, mode: Mode) -> (Matrix, BnCache) {
    let (width, n) = z.shape();
    let (mean, var) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0; width];
            let mut var = vec![0.0; width];
            for i in 0..width {
                let row = z.row(i);
                let m = row.iter().sum::<f64>() / n as f64;
                mean[i] = m;
                var[i] = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            }
            (mean, var)
        }
        Mode::Eval => (norm.running_mean.clone(), norm.running_var.clone()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = Matrix::zeros(width, n);
    let mut out = Matrix::zeros(width, n);
    for i in 0..width {
        for j in 0..n {
            let x = (z[(i, j)] - mean[i]) * inv_std[i];
            xhat[(i, j)] = x;
            out[(i, j)] = norm.gamma[i] * x + norm.beta[i];
        }
    }
    (
        out,
        BnCache {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
        },
    )
}

/// Train-mode batchnorm backward; returns (dz, dγ, dβ).
fn batchnorm_backward(dy: &Matrix, cache: &BnCache, norm: &BatchNorm) -> (Matrix, Vec<f64>, Vec<f64>) {
    let (width, n) = dy.shape();
    let nf = n as f64;
    let mut dz = Matrix::zeros(width, n);
    let mut dgamma = vec![0.0; width];
    let mut dbeta = vec![0.0; width];
    for i in 0..width {
        let dyr = dy.row(i);
        let xr = cache.xhat.row(i);
        let sum_dy: f64 = dyr.iter().sum();
        let sum_dy_x: f64 = dyr.iter().zip(xr).map(|(a, b)| a * b).sum();
        dgamma[i] = sum_dy_x;
        dbeta[i] = sum_dy;
        let scale = norm.gamma[i] * cache.inv_std[i] / nf;
        let out = dz.row_mut(i);
        for j in 0..n {
            out[j] = scale * (nf * dyr[j] - sum_dy - xr[j] * sum_dy_x);
        }
    }
    (dz, dgamma, dbeta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(bn: bool) -> NetworkSpec {
        NetworkSpec {
            input_dim: 3,
            hidden: vec![4],
            feature_dim: 3,
            class_count: 2,
            use_batchnorm: bn,
            activation: Activation::Relu,
        }
    }

    fn random_input(d: usize, n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(d, n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn xavier_bound_and_determinism() {
        assert_eq!(xavier_bound(3, 3), 1.0);
        let s = NetworkSpec {
            input_dim: 3,
            hidden: vec![],
            feature_dim: 3,
            class_count: 3,
            use_batchnorm: true,
            activation: Activation::Relu,
        };
        let a = init_params(&s, 7).unwrap();
        assert!(a.trunk[0].weight.as_slice().iter().all(|v| v.abs() <= 1.0));
        assert_eq!(a, init_params(&s, 7).unwrap());
        assert_ne!(a, init_params(&s, 8).unwrap());
        assert!(a.trunk[0].bias.iter().all(|&b| b == 0.0));
        assert!(a.norms[0].gamma.iter().all(|&g| g == 1.0));
    }

    #[test]
    fn xavier_variance() {
        let s = NetworkSpec {
            input_dim: 100,
            hidden: vec![],
            feature_dim: 100,
            class_count: 2,
            use_batchnorm: false,
            activation: Activation::Relu,
        };
        let p = init_params(&s, 3).unwrap();
        let w = p.trunk[0].weight.as_slice();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let expected = 2.0 / 200.0;
        assert!((var - expected).abs() / expected < 0.1, "var {var}");
    }

    #[test]
    fn identity_network_passes_positive_input() {
        let s = NetworkSpec {
            input_dim: 3,
            hidden: vec![3],
            feature_dim: 3,
            class_count: 3,
            use_batchnorm: false,
            activation: Activation::Relu,
        };
        let ident = || Dense {
            weight: Matrix::identity(3),
            bias: vec![0.0; 3],
        };
        let params = NetworkParams {
            trunk: vec![ident(), ident()],
            norms: vec![],
            classifier: ident(),
        };
        let net = Network::new(s, params).unwrap();
        let x = Matrix::from_rows(&[&[1.0, 2.0], &[0.5, 3.0], &[4.0, 0.1]]);
        let t = net.forward(&x, Mode::Eval).unwrap();
        assert_eq!(t.features(), &x);
        assert_eq!(t.logits(), &x);
    }

    #[test]
    fn relu_clamps_negative() {
        let s = NetworkSpec {
            input_dim: 2,
            hidden: vec![],
            feature_dim: 2,
            class_count: 1,
            use_batchnorm: false,
            activation: Activation::Relu,
        };
        let params = NetworkParams {
            trunk: vec![Dense {
                weight: Matrix::identity(2),
                bias: vec![0.0; 2],
            }],
            norms: vec![],
            classifier: Dense {
                weight: Matrix::zeros(1, 2),
                bias: vec![0.0],
            },
        };
        let net = Network::new(s, params).unwrap();
        let t = net.forward(&Matrix::from_rows(&[&[-1.0], &[2.0]]), Mode::Eval).unwrap();
        assert_eq!(t.features().as_slice(), &[0.0, 2.0]);
    }

    #[test]
    fn batchnorm_train_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = Matrix::from_fn(4, 32, |i, _| rng.random_range(-2.0..2.0) * (i + 1) as f64 + i as f64);
        let (_, cache) = batchnorm_forward(&z, &BatchNorm::new(4), Mode::Train);
        for i in 0..4 {
            let row = cache.xhat.row(i);
            let m = row.iter().sum::<f64>() / 32.0;
            let v = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 32.0;
            assert!(m.abs() < 1e-6);
            // ε in the denominator pulls the variance slightly below 1
            let var_z = cache.batch_var[i];
            assert!((v - var_z / (var_z + BN_EPS)).abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn eval_forward_is_pure_and_train_updates_stats() {
        let mut net = Network::init(spec(true), 4).unwrap();
        let x = random_input(3, 10, 2);
        let before = net.params().clone();
        let a = net.forward(&x, Mode::Eval).unwrap();
        let b = net.forward(&x, Mode::Eval).unwrap();
        assert_eq!(a.features(), b.features());
        assert_eq!(a.logits(), b.logits());
        assert_eq!(net.params(), &before);
        net.forward_train(&x).unwrap();
        assert_ne!(net.params().norms[0].running_mean, before.norms[0].running_mean);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let net = Network::init(spec(true), 4).unwrap();
        let x = random_input(3, 6, 3);
        let t = net.forward(&x, Mode::Train).unwrap();
        let g = net.backward(&t, &Matrix::zeros(3, 6), &Matrix::zeros(2, 6)).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn feature_grad_never_reaches_classifier() {
        let net = Network::init(spec(false), 5).unwrap();
        let x = random_input(3, 6, 4);
        let t = net.forward(&x, Mode::Train).unwrap();
        let lg = random_input(2, 6, 5);
        let fg = random_input(3, 6, 6);
        let a = net.backward(&t, &Matrix::zeros(3, 6), &lg).unwrap();
        let b = net.backward(&t, &fg, &lg).unwrap();
        assert_eq!(a.classifier, b.classifier);
        assert_ne!(a.trunk[0], b.trunk[0]);
    }

    #[test]
    fn stale_and_eval_traces_are_rejected() {
        let mut net = Network::init(spec(false), 5).unwrap();
        let x = random_input(3, 4, 4);
        let eval = net.forward(&x, Mode::Eval).unwrap();
        let fg = Matrix::zeros(3, 4);
        let lg = Matrix::zeros(2, 4);
        assert_eq!(net.backward(&eval, &fg, &lg).unwrap_err(), NetworkError::EvalTrace);
        let t = net.forward(&x, Mode::Train).unwrap();
        net.params_mut().classifier.bias[0] += 1.0;
        assert_eq!(net.backward(&t, &fg, &lg).unwrap_err(), NetworkError::StaleTrace);
        assert!(matches!(
            net.forward(&random_input(2, 4, 1), Mode::Eval),
            Err(NetworkError::InputDim { .. })
        ));
    }

    /// Train-mode batchnorm couples samples, but the batch output is still a
    /// deterministic function of the parameters, so finite differences apply.
    #[test]
    fn batchnorm_backward_matches_finite_differences() {
        let net = Network::init(spec(true), 11).unwrap();
        let x = random_input(3, 8, 12);
        let probe = random_input(3, 8, 13);
        let lprobe = random_input(2, 8, 14);
        let objective = |n: &Network| {
            let t = n.forward(&x, Mode::Train).unwrap();
            t.features().inner(&probe) + t.logits().inner(&lprobe)
        };
        let t = net.forward(&x, Mode::Train).unwrap();
        let grads = net.backward(&t, &probe, &lprobe).unwrap();
        let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
        let h = 1e-6;
        let n_tensors = analytic.len();
        for k in 0..n_tensors {
            for idx in 0..analytic[k].len() {
                let mut plus = net.clone();
                plus.params_mut().tensors_mut()[k].1[idx] += h;
                let mut minus = net.clone();
                minus.params_mut().tensors_mut()[k].1[idx] -= h;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let an = analytic[k][idx];
                assert!(
                    (fd - an).abs() <= 1e-5 * fd.abs().max(an.abs()).max(1.0),
                    "tensor {k}[{idx}] fd={fd} an={an}"
                );
            }
        }
    }
}
