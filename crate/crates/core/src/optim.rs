//! SGD with Nesterov momentum, Adam, and the step learning-rate schedule.
//!
//! Weight decay is folded into the gradient (`g += μ·θ`) before any moment
//! update.

use thiserror::Error;

use crate::network::TensorKind;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("tensor {index}: parameter length {params} but gradient length {grads}")]
    ShapeMismatch { index: usize, params: usize, grads: usize },
    #[error("{params} parameter tensors but {grads} gradient tensors")]
    CountMismatch { params: usize, grads: usize },
}

/// One Nesterov step on a single tensor:
/// `g' = g + μθ; v ← m·v − lr·g'; θ ← θ + m·v − lr·g'`.
pub fn sgd_nesterov_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<(), OptimError> {
    check_len(0, params.len(), grads.len())?;
    check_len(0, params.len(), velocity.len())?;
    for ((theta, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let g = g + weight_decay * *theta;
        *v = momentum * *v - lr * g;
        *theta += momentum * *v - lr * g;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam step on a single tensor. `step` is the 1-based
/// index of this update.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    first: &mut [f64],
    second: &mut [f64],
    step: u64,
    lr: f64,
    hp: AdamParams,
    weight_decay: f64,
) -> Result<(), OptimError> {
    check_len(0, params.len(), grads.len())?;
    check_len(0, params.len(), first.len())?;
    check_len(0, params.len(), second.len())?;
    let t = step.max(1) as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i] + weight_decay * params[i];
        first[i] = hp.beta1 * first[i] + (1.0 - hp.beta1) * g;
        second[i] = hp.beta2 * second[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = first[i] / c1;
        let v_hat = second[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(())
}

/// Base rate before 50% of training, a tenth of it until 75%, a hundredth
/// after that.
pub fn step_schedule(epoch: usize, total_epochs: usize, base_lr: f64) -> f64 {
    if 2 * epoch < total_epochs {
        base_lr
    } else if 4 * epoch < 3 * total_epochs {
        base_lr * 0.1
    } else {
        base_lr * 0.01
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    SgdNesterov { momentum: f64 },
    Adam(AdamParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    #[default]
    Step,
    Constant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub base_lr: f64,
    pub weight_decay: f64,
    /// When false, biases and batchnorm γ/β are not decayed.
    pub decay_all: bool,
    pub schedule: Schedule,
}

/// Per-tensor buffers and the running step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    config: OptimizerConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
    lr: f64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, shapes: &[usize]) -> Self {
        let first = shapes.iter().map(|&n| vec![0.0; n]).collect();
        let second = match config.kind {
            OptimizerKind::Adam(_) => shapes.iter().map(|&n| vec![0.0; n]).collect(),
            OptimizerKind::SgdNesterov { .. } => Vec::new(),
        };
        let lr = config.base_lr;
        Self {
            config,
            first,
            second,
            step: 0,
            lr,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Sets the learning rate for `epoch` according to the schedule.
    pub fn begin_epoch(&mut self, epoch: usize, total_epochs: usize) -> f64 {
        self.lr = match self.config.schedule {
            Schedule::Step => step_schedule(epoch, total_epochs, self.config.base_lr),
            Schedule::Constant => self.config.base_lr,
        };
        self.lr
    }

    /// Applies one update to every tensor.
    pub fn step(&mut self, params: Vec<(TensorKind, &mut [f64])>, grads: &[&[f64]]) -> Result<(), OptimError> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(OptimError::CountMismatch {
                params: params.len(),
                grads: grads.len(),
            });
        }
        for (index, ((_, p), g)) in params.iter().zip(grads).enumerate() {
            check_len(index, p.len(), g.len())?;
            check_len(index, p.len(), self.first[index].len())?;
        }
        self.step += 1;
        for (index, (kind, p)) in params.into_iter().enumerate() {
            let decay = if self.config.decay_all || kind == TensorKind::Weight {
                self.config.weight_decay
            } else {
                0.0
            };
            match self.config.kind {
                OptimizerKind::SgdNesterov { momentum } => {
                    sgd_nesterov_step(p, grads[index], &mut self.first[index], self.lr, momentum, decay)?
                }
                OptimizerKind::Adam(hp) => adam_step(
                    p,
                    grads[index],
                    &mut self.first[index],
                    &mut self.second[index],
                    self.step,
                    self.lr,
                    hp,
                    decay,
                )?,
            }
        }
        Ok(())
    }
}

fn check_len(index: usize, params: usize, grads: usize) -> Result<(), OptimError> {
    if params == grads {
        Ok(())
    } else {
        Err(OptimError::ShapeMismatch { index, params, grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_without_momentum_is_gradient_descent() {
        let mut p = vec![1.0, -2.0];
        let mut v = vec![0.0; 2];
        sgd_nesterov_step(&mut p, &[0.5, 1.0], &mut v, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(p, vec![1.0 - 0.05, -2.0 - 0.1]);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![3.0, 4.0];
        let mut v = vec![0.0; 2];
        sgd_nesterov_step(&mut p, &[0.0, 0.0], &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p, vec![3.0, 4.0]);
        let (mut m, mut s) = (vec![0.0; 2], vec![0.0; 2]);
        adam_step(&mut p, &[0.0, 0.0], &mut m, &mut s, 1, 0.1, AdamParams::default(), 0.0).unwrap();
        assert_eq!(p, vec![3.0, 4.0]);
    }

    #[test]
    fn sgd_minimizes_quadratic() {
        let mut p = vec![1.0];
        let mut v = vec![0.0];
        for _ in 0..200 {
            let g = [2.0 * p[0]];
            sgd_nesterov_step(&mut p, &g, &mut v, 0.1, 0.9, 0.0).unwrap();
        }
        assert!(p[0].abs() <= 1e-6, "{}", p[0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        for g in [0.3, -7.0, 1e3] {
            let mut p = vec![0.0];
            let (mut m, mut s) = (vec![0.0], vec![0.0]);
            adam_step(&mut p, &[g], &mut m, &mut s, 1, 1e-3, AdamParams::default(), 0.0).unwrap();
            assert!((p[0].abs() - 1e-3).abs() < 1e-9, "{}", p[0]);
        }
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![1.0];
        let (mut m, mut s) = (vec![0.0], vec![0.0]);
        for t in 1..=2000 {
            let g = [2.0 * p[0]];
            adam_step(&mut p, &g, &mut m, &mut s, t, 1e-2, AdamParams::default(), 0.0).unwrap();
        }
        assert!(p[0].abs() <= 1e-4, "{}", p[0]);
    }

    #[test]
    fn schedule_milestones() {
        assert_eq!(step_schedule(0, 164, 0.1), 0.1);
        assert_eq!(step_schedule(81, 164, 0.1), 0.1);
        assert!((step_schedule(82, 164, 0.1) - 0.01).abs() < 1e-15);
        assert!((step_schedule(122, 164, 0.1) - 0.01).abs() < 1e-15);
        assert!((step_schedule(123, 164, 0.1) - 0.001).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for e in 0..164 {
            let lr = step_schedule(e, 164, 0.1);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn weight_decay_shrinks_monotonically() {
        let mut p = vec![2.0, -3.0];
        let mut v = vec![0.0; 2];
        let mut prev = p.clone();
        for _ in 0..50 {
            sgd_nesterov_step(&mut p, &[0.0, 0.0], &mut v, 0.1, 0.0, 1e-1).unwrap();
            for (a, b) in p.iter().zip(&prev) {
                assert!(a.abs() < b.abs());
                assert_eq!(a.signum(), b.signum());
            }
            prev = p.clone();
        }
    }

    #[test]
    fn state_respects_decay_exclusion() {
        let config = OptimizerConfig {
            kind: OptimizerKind::SgdNesterov { momentum: 0.0 },
            base_lr: 0.1,
            weight_decay: 0.5,
            decay_all: false,
            schedule: Schedule::Constant,
        };
        let mut state = OptimizerState::new(config, &[1, 1]);
        let mut w = [1.0];
        let mut b = [1.0];
        state
            .step(
                vec![(TensorKind::Weight, &mut w), (TensorKind::Bias, &mut b)],
                &[&[0.0], &[0.0]],
            )
            .unwrap();
        assert!(w[0] < 1.0);
        assert_eq!(b[0], 1.0);
        let mut w2 = [1.0, 2.0];
        assert!(state.step(vec![(TensorKind::Weight, &mut w2)], &[&[0.0]]).is_err());
    }
}
