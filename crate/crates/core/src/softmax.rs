//! Softmax cross-entropy and its combination with the embedding loss.

use crate::linalg::Matrix;
use crate::ole_loss::{check_labels, ole_value_and_grad, FeatureBatch, LossError, OleConfig};

/// C×N class scores with one label per column.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsBatch {
    logits: Matrix,
    labels: Vec<usize>,
}

impl LogitsBatch {
    pub fn new(logits: Matrix, labels: Vec<usize>) -> Result<Self, LossError> {
        check_labels(&labels, logits.cols(), logits.rows())?;
        Ok(Self { logits, labels })
    }

    pub fn logits(&self) -> &Matrix {
        &self.logits
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Column-wise softmax with max subtraction.
pub fn softmax_columns(logits: &Matrix) -> Matrix {
    let (c, n) = logits.shape();
    let mut out = Matrix::zeros(c, n);
    for j in 0..n {
        let max = (0..c).map(|i| logits[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for i in 0..c {
            let e = (logits[(i, j)] - max).exp();
            out[(i, j)] = e;
            sum += e;
        }
        for i in 0..c {
            out[(i, j)] /= sum;
        }
    }
    out
}

/// Mean cross-entropy over the batch and its gradient `(softmax − onehot)/N`.
pub fn softmax_cross_entropy(batch: &LogitsBatch) -> Result<(f64, Matrix), LossError> {
    let logits = batch.logits();
    let (c, n) = logits.shape();
    if n == 0 {
        return Err(LossError::EmptyBatch);
    }
    let inv_n = 1.0 / n as f64;
    let mut grad = Matrix::zeros(c, n);
    let mut loss = 0.0;
    for (j, &label) in batch.labels().iter().enumerate() {
        let max = (0..c).map(|i| logits[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..c).map(|i| (logits[(i, j)] - max).exp()).sum();
        let log_sum = sum.ln();
        loss += log_sum - (logits[(label, j)] - max);
        for i in 0..c {
            let p = (logits[(i, j)] - max).exp() / sum;
            grad[(i, j)] = p * inv_n;
        }
        grad[(label, j)] -= inv_n;
    }
    Ok((loss * inv_n, grad))
}

/// Parts of `L_s + λ·L_o` together with the gradients to feed backward.
#[derive(Debug, Clone)]
pub struct CombinedLoss {
    pub total: f64,
    pub softmax: f64,
    pub ole: f64,
    /// `λ · ∂L_o/∂X`, D×N.
    pub feature_grad: Matrix,
    /// `∂L_s/∂logits`, C×N.
    pub logit_grad: Matrix,
}

/// Softmax loss plus `lambda` times the embedding loss. The embedding value
/// is always computed (for monitoring); with `lambda == 0` the feature
/// gradient is exactly zero.
pub fn combined_loss(
    features: &FeatureBatch,
    logits: &LogitsBatch,
    lambda: f64,
    cfg: &OleConfig,
) -> Result<CombinedLoss, LossError> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(LossError::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
    }
    if features.len() != logits.labels().len() {
        return Err(LossError::LabelCountMismatch {
            labels: logits.labels().len(),
            samples: features.len(),
        });
    }
    let (ls, logit_grad) = softmax_cross_entropy(logits)?;
    let (lo, ole_grad) = ole_value_and_grad(features, cfg)?;
    let feature_grad = if lambda == 0.0 {
        Matrix::zeros(ole_grad.rows(), ole_grad.cols())
    } else {
        ole_grad.scale(lambda)
    };
    Ok(CombinedLoss {
        total: ls + lambda * lo,
        softmax: ls,
        ole: lo,
        feature_grad,
        logit_grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_logits(c: usize, n: usize, seed: u64) -> LogitsBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Matrix::from_fn(c, n, |_, _| rng.random_range(-3.0..3.0));
        let labels = (0..n).map(|_| rng.random_range(0..c)).collect();
        LogitsBatch::new(m, labels).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let b = LogitsBatch::new(Matrix::zeros(10, 4), vec![0, 3, 9, 2]).unwrap();
        let (loss, _) = softmax_cross_entropy(&b).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_logit() {
        let mut m = Matrix::zeros(3, 2);
        m[(1, 0)] = 50.0;
        m[(2, 1)] = 50.0;
        let (loss, _) = softmax_cross_entropy(&LogitsBatch::new(m, vec![1, 2]).unwrap()).unwrap();
        assert!(loss <= 1e-9);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let b = random_logits(5, 7, 1);
        let (_, g) = softmax_cross_entropy(&b).unwrap();
        let h = 1e-5;
        for i in 0..5 {
            for j in 0..7 {
                let mut plus = b.logits().clone();
                plus[(i, j)] += h;
                let mut minus = b.logits().clone();
                minus[(i, j)] -= h;
                let fp = softmax_cross_entropy(&LogitsBatch::new(plus, b.labels().to_vec()).unwrap())
                    .unwrap()
                    .0;
                let fm = softmax_cross_entropy(&LogitsBatch::new(minus, b.labels().to_vec()).unwrap())
                    .unwrap()
                    .0;
                let fd = (fp - fm) / (2.0 * h);
                let denom = fd.abs().max(g[(i, j)].abs()).max(1e-8);
                assert!(
                    (fd - g[(i, j)]).abs() / denom < 1e-6,
                    "({i},{j}) fd={fd} an={}",
                    g[(i, j)]
                );
            }
        }
    }

    #[test]
    fn shift_invariance_and_zero_column_sums() {
        let b = random_logits(4, 6, 2);
        let (l0, g0) = softmax_cross_entropy(&b).unwrap();
        let mut shifted = b.logits().clone();
        for i in 0..4 {
            shifted[(i, 3)] += 17.5;
        }
        let (l1, g1) = softmax_cross_entropy(&LogitsBatch::new(shifted, b.labels().to_vec()).unwrap()).unwrap();
        assert!((l0 - l1).abs() < 1e-10);
        assert!(g0.sub(&g1).unwrap().max_abs() < 1e-10);
        for j in 0..6 {
            let s: f64 = (0..4).map(|i| g0[(i, j)]).sum();
            assert!(s.abs() < 1e-10);
        }
    }

    #[test]
    fn combined_lambda_zero_is_softmax() {
        let logits = random_logits(3, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = Matrix::from_fn(5, 4, |_, _| rng.random_range(0.0..1.0));
        let feats = FeatureBatch::new(f, logits.labels().to_vec(), 3).unwrap();
        let out = combined_loss(&feats, &logits, 0.0, &OleConfig::default()).unwrap();
        let (ls, lg) = softmax_cross_entropy(&logits).unwrap();
        assert_eq!(out.total, ls);
        assert_eq!(out.logit_grad, lg);
        assert!(out.feature_grad.is_zero());
        let part = combined_loss(&feats, &logits, 0.25, &OleConfig::default()).unwrap();
        let lo = crate::ole_loss::ole_forward(&feats, &OleConfig::default()).unwrap();
        assert!((part.total - (ls + 0.25 * lo)).abs() <= 1e-12);
        assert!(combined_loss(&feats, &logits, -1.0, &OleConfig::default()).is_err());
    }

    #[test]
    fn combined_orthogonal_features() {
        let f = Matrix::from_columns(&[vec![3.0, 0.0], vec![0.0, 2.0]]);
        let feats = FeatureBatch::new(f, vec![0, 1], 2).unwrap();
        let logits = LogitsBatch::new(Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]), vec![0, 1]).unwrap();
        let out = combined_loss(&feats, &logits, 1.0, &OleConfig::default()).unwrap();
        let (ls, _) = softmax_cross_entropy(&logits).unwrap();
        assert!((out.total - ls).abs() < 1e-12);
        assert!(out.feature_grad.frobenius_norm() < 1e-12);
    }
}
