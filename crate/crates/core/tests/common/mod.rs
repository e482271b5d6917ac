//! Reference implementations used as test oracles. Nothing here calls the
//! library's decompositions.

#![allow(dead_code)]

use ole::Matrix;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
pub fn sym_eigenvalues(a: &Matrix) -> Vec<f64> {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        let diag: f64 = (0..n).map(|i| m[i][i] * m[i][i]).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[p][q] == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Gram matrix on the smaller side.
fn small_gram(x: &Matrix) -> Matrix {
    let (r, c) = x.shape();
    if r <= c {
        Matrix::from_fn(r, r, |i, j| x.row(i).iter().zip(x.row(j)).map(|(a, b)| a * b).sum())
    } else {
        let cols: Vec<Vec<f64>> = (0..c).map(|j| x.column(j)).collect();
        Matrix::from_fn(c, c, |i, j| cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum())
    }
}

/// Singular values as square roots of Gram eigenvalues, descending.
pub fn singular_values(x: &Matrix) -> Vec<f64> {
    sym_eigenvalues(&small_gram(x))
        .into_iter()
        .map(|e| e.max(0.0).sqrt())
        .collect()
}

pub fn nuclear_norm(x: &Matrix) -> f64 {
    singular_values(x).iter().sum()
}

pub fn class_block(x: &Matrix, labels: &[usize], class: usize) -> Option<Matrix> {
    let cols: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] == class).collect();
    (!cols.is_empty()).then(|| x.select_columns(&cols))
}

/// `Σ_c max(Δ, ‖X_c‖_*) − ‖X‖_*` over the classes present.
pub fn ole_loss(x: &Matrix, labels: &[usize], class_count: usize, delta: f64) -> f64 {
    let per_class: f64 = (0..class_count)
        .filter_map(|c| class_block(x, labels, c))
        .map(|b| nuclear_norm(&b).max(delta))
        .sum();
    per_class - nuclear_norm(x)
}

/// Mean cross-entropy of column-wise softmax.
pub fn softmax_ce(logits: &Matrix, labels: &[usize]) -> f64 {
    let n = logits.cols();
    let mut total = 0.0;
    for (j, &y) in labels.iter().enumerate() {
        let col = logits.column(j);
        let m = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + col.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        total += lse - col[y];
    }
    total / n as f64
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn finite_difference(x: &Matrix, h: f64, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut probe = x.clone();
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let orig = probe[(i, j)];
            probe[(i, j)] = orig + h;
            let up = f(&probe);
            probe[(i, j)] = orig - h;
            let down = f(&probe);
            probe[(i, j)] = orig;
            out[(i, j)] = (up - down) / (2.0 * h);
        }
    }
    out
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(floor)
}

/// Orthonormal columns by modified Gram-Schmidt on a Gaussian matrix.
pub fn random_orthonormal<R: Rng>(rng: &mut R, n: usize) -> Matrix {
    loop {
        let a = gaussian(rng, n, n, 1.0);
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut ok = true;
        for j in 0..n {
            let mut v = a.column(j);
            for q in &cols {
                let d: f64 = v.iter().zip(q).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(q).for_each(|(x, y)| *x -= d * y);
            }
            let len = norm(&v);
            if len < 1e-3 {
                ok = false;
                break;
            }
            cols.push(v.into_iter().map(|x| x / len).collect());
        }
        if ok {
            return Matrix::from_columns(&cols);
        }
    }
}
