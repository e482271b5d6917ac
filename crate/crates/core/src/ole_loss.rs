//! The orthogonal low-rank embedding loss
//!
//! ```text
//! L(X) = Σ_c max(Δ, ‖X_c‖_*) − ‖X‖_*
//! ```
//!
//! where `X` is the D×N feature matrix of a minibatch (one column per
//! sample) and `X_c` gathers the columns labelled `c`. The intra-class terms
//! pull each class toward a low-rank subspace until its nuclear norm reaches
//! `Δ`; the subtracted global term pushes the classes apart. The loss is zero
//! exactly when the class subspaces are mutually orthogonal.
//!
//! The raw value is not normalized by batch size, so its magnitude grows
//! with the batch and with the feature scale.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix, DEFAULT_SV_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("{labels} labels for {samples} samples")]
    LabelCountMismatch { labels: usize, samples: usize },
    #[error("label {label} at sample {index} is outside 0..{class_count}")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        class_count: usize,
    },
    #[error("batch has no samples")]
    EmptyBatch,
    #[error("invalid loss configuration: {0}")]
    InvalidConfig(String),
}

/// A D×N deep-feature matrix with one class label per column.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    features: Matrix,
    labels: Vec<usize>,
    class_count: usize,
}

impl FeatureBatch {
    pub fn new(features: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self, LossError> {
        check_labels(&labels, features.cols(), class_count)?;
        Ok(Self {
            features,
            labels,
            class_count,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub(crate) fn check_labels(labels: &[usize], samples: usize, class_count: usize) -> Result<(), LossError> {
    if labels.len() != samples {
        return Err(LossError::LabelCountMismatch {
            labels: labels.len(),
            samples,
        });
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
        return Err(LossError::LabelOutOfRange {
            index,
            label,
            class_count,
        });
    }
    Ok(())
}

/// Loss hyperparameters: the intra-class clamp `Δ` and the singular-value
/// cutoff `δ` of the projected subgradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OleConfig {
    pub delta_clamp: f64,
    pub sv_threshold: f64,
}

impl Default for OleConfig {
    fn default() -> Self {
        Self {
            delta_clamp: 1.0,
            sv_threshold: DEFAULT_SV_THRESHOLD,
        }
    }
}

impl OleConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.delta_clamp.is_finite() && self.delta_clamp >= 0.0) {
            return Err(LossError::InvalidConfig(format!(
                "delta_clamp must be finite and >= 0, got {}",
                self.delta_clamp
            )));
        }
        if !(self.sv_threshold.is_finite() && self.sv_threshold >= 0.0) {
            return Err(LossError::InvalidConfig(format!(
                "sv_threshold must be finite and >= 0, got {}",
                self.sv_threshold
            )));
        }
        Ok(())
    }
}

/// Column indices of each class present in `labels`, classes ascending,
/// columns in batch order.
pub fn class_columns(labels: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (j, &label) in labels.iter().enumerate() {
        groups.entry(label).or_default().push(j);
    }
    groups.into_iter().collect()
}

/// Splits the batch into its per-class feature blocks.
pub fn partition_by_class(batch: &FeatureBatch) -> Vec<(usize, Matrix)> {
    class_columns(batch.labels())
        .into_iter()
        .map(|(class, cols)| (class, batch.features().select_columns(&cols)))
        .collect()
}

fn evaluate(batch: &FeatureBatch, cfg: &OleConfig, with_grad: bool) -> Result<(f64, Option<Matrix>), LossError> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let x = batch.features();
    let mut value = 0.0;
    let mut grad = with_grad.then(|| Matrix::zeros(x.rows(), x.cols()));

    for (_, cols) in class_columns(batch.labels()) {
        let block = x.select_columns(&cols);
        match grad.as_mut() {
            None => {
                let norm = linalg::nuclear_norm(&block)?;
                value += norm.max(cfg.delta_clamp);
            }
            Some(g) => {
                let dec = linalg::svd(&block)?;
                let norm = dec.nuclear_norm();
                value += norm.max(cfg.delta_clamp);
                // flat below the clamp, including the kink itself
                if norm > cfg.delta_clamp {
                    let proj = dec.principal_projector(cfg.sv_threshold);
                    for i in 0..x.rows() {
                        let src = proj.row(i);
                        let dst = g.row_mut(i);
                        for (k, &j) in cols.iter().enumerate() {
                            dst[j] += src[k];
                        }
                    }
                }
            }
        }
    }

    match grad.as_mut() {
        None => value -= linalg::nuclear_norm(x)?,
        Some(g) => {
            let dec = linalg::svd(x)?;
            value -= dec.nuclear_norm();
            g.axpy(-1.0, &dec.principal_projector(cfg.sv_threshold))?;
        }
    }
    Ok((value, grad))
}

/// Loss value. Classes absent from the batch contribute nothing.
pub fn ole_forward(batch: &FeatureBatch, cfg: &OleConfig) -> Result<f64, LossError> {
    Ok(evaluate(batch, cfg, false)?.0)
}

/// Subgradient of the loss with respect to the features (D×N): the
/// per-class projectors `U_c1·V_c1ᵀ` scattered back to their columns, minus
/// the global projector `U₁·V₁ᵀ`. A class whose nuclear norm is at or below
/// `Δ` contributes a zero block.
pub fn ole_backward(batch: &FeatureBatch, cfg: &OleConfig) -> Result<Matrix, LossError> {
    Ok(evaluate(batch, cfg, true)?.1.expect("gradient requested"))
}

/// Value and subgradient from one set of decompositions.
pub fn ole_value_and_grad(batch: &FeatureBatch, cfg: &OleConfig) -> Result<(f64, Matrix), LossError> {
    let (value, grad) = evaluate(batch, cfg, true)?;
    Ok((value, grad.expect("gradient requested")))
}
