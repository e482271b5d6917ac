//! Thin SVD by one-sided (Hestenes) Jacobi rotations, plus the nuclear norm
//! and its thresholded subgradient built on top of it.
//!
//! One-sided Jacobi is slow for large matrices but accurate to working
//! precision on the small feature blocks seen per minibatch, and it is
//! deterministic: the same input bits always produce the same factors.

use super::matrix::{dot, Matrix};
use super::LinalgError;

/// Sweep cap for the Jacobi iteration.
pub const MAX_SWEEPS: usize = 100;

/// Default singular-value cutoff for the projected subgradient.
pub const DEFAULT_SV_THRESHOLD: f64 = 1e-6;

/// Thin singular value decomposition `A = U · diag(σ) · Vᵀ`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// m×k, orthonormal columns.
    pub u: Matrix,
    /// Length k = min(m, n), non-increasing, non-negative.
    pub singular_values: Vec<f64>,
    /// k×n, orthonormal rows.
    pub vt: Matrix,
}

impl SvdResult {
    /// Multiplies the factors back together.
    pub fn reconstruct(&self) -> Matrix {
        let (m, k) = self.u.shape();
        let n = self.vt.cols();
        let mut out = Matrix::zeros(m, n);
        for r in 0..k {
            let s = self.singular_values[r];
            if s == 0.0 {
                continue;
            }
            let vrow = self.vt.row(r);
            for i in 0..m {
                let coef = self.u[(i, r)] * s;
                if coef == 0.0 {
                    continue;
                }
                for (o, &v) in out.row_mut(i).iter_mut().zip(vrow) {
                    *o += coef * v;
                }
            }
        }
        out
    }

    /// `U₁·V₁ᵀ` over the singular triplets with `σ > threshold`.
    pub fn principal_projector(&self, threshold: f64) -> Matrix {
        let (m, _) = self.u.shape();
        let n = self.vt.cols();
        let mut out = Matrix::zeros(m, n);
        for (r, &s) in self.singular_values.iter().enumerate() {
            // sorted, so everything after the first miss is below threshold too
            if s <= threshold {
                break;
            }
            let vrow = self.vt.row(r);
            for i in 0..m {
                let coef = self.u[(i, r)];
                if coef == 0.0 {
                    continue;
                }
                for (o, &v) in out.row_mut(i).iter_mut().zip(vrow) {
                    *o += coef * v;
                }
            }
        }
        out
    }

    pub fn nuclear_norm(&self) -> f64 {
        self.singular_values.iter().sum()
    }
}

/// Result of orthogonalizing the columns of a tall (m ≥ n) matrix.
struct JacobiColumns {
    /// Rotated columns of A, each of length m. Column j has norm σ_j.
    cols: Vec<Vec<f64>>,
    /// Accumulated right rotations, stored as columns of V (each length n).
    v_cols: Option<Vec<Vec<f64>>>,
}

fn jacobi_tall(a: &Matrix, accumulate_v: bool) -> Result<JacobiColumns, LinalgError> {
    let (m, n) = a.shape();
    debug_assert!(m >= n);
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v_cols = accumulate_v.then(|| {
        (0..n)
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                e
            })
            .collect::<Vec<_>>()
    });
    let mut norms: Vec<f64> = cols.iter().map(|c| dot(c, c)).collect();
    // Pairs count as orthogonal below this relative inner product. Columns
    // whose norm is at rounding level relative to ‖A‖_F carry no signal and
    // are left alone; rotating them can cycle forever on rank-deficient input.
    let tol = f64::EPSILON * m as f64;
    let frob_sq: f64 = norms.iter().sum();
    let negligible_sq = (tol * tol) * frob_sq;

    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha <= negligible_sq || beta <= negligible_sq {
                    continue;
                }
                let gamma = dot(&cols[p], &cols[q]);
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;

                let (left, right) = cols.split_at_mut(q);
                rotate(&mut left[p], &mut right[0], c, s);
                if let Some(v) = v_cols.as_mut() {
                    let (vl, vr) = v.split_at_mut(q);
                    rotate(&mut vl[p], &mut vr[0], c, s);
                }
                norms[p] = dot(&cols[p], &cols[p]);
                norms[q] = dot(&cols[q], &cols[q]);
            }
        }
        if !rotated {
            return Ok(JacobiColumns { cols, v_cols });
        }
    }
    Err(LinalgError::NoConvergence {
        rows: a.rows(),
        cols: a.cols(),
        sweeps: MAX_SWEEPS,
    })
}

#[inline]
fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (xi, yi) in x.iter_mut().zip(y.iter_mut()) {
        let a = *xi;
        let b = *yi;
        *xi = c * a - s * b;
        *yi = s * a + c * b;
    }
}

/// Sorts σ descending; ties keep the original column order.
fn descending_order(sigma: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));
    order
}

/// Orthonormalizes `v` against `basis` (two Gram-Schmidt passes). Returns
/// the residual norm before normalization.
fn orthonormalize_against(v: &mut [f64], basis: &[Vec<f64>]) -> f64 {
    for _ in 0..2 {
        for b in basis {
            let proj = dot(v, b);
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= proj * bi;
            }
        }
    }
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        for vi in v.iter_mut() {
            *vi /= norm;
        }
    }
    norm
}

/// SVD of a matrix with at least as many rows as columns.
fn svd_tall(a: &Matrix) -> Result<SvdResult, LinalgError> {
    let (m, n) = a.shape();
    let jac = jacobi_tall(a, true)?;
    let v_cols = jac.v_cols.expect("requested V");
    let sigma: Vec<f64> = jac.cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let order = descending_order(&sigma);
    let sigma_max = order.first().map_or(0.0, |&i| sigma[i]);
    let negligible = sigma_max * f64::EPSILON * (m.max(n) as f64);

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        let s = sigma[j];
        if s > negligible && s > 0.0 {
            u_cols.push(jac.cols[j].iter().map(|x| x / s).collect());
        } else {
            u_cols.push(vec![0.0; m]);
            deficient.push(slot);
        }
    }
    // Complete U with basis vectors orthogonal to the accepted columns so
    // that UᵀU = I even when A is rank deficient.
    if !deficient.is_empty() {
        let mut accepted: Vec<Vec<f64>> = u_cols
            .iter()
            .enumerate()
            .filter(|(slot, _)| !deficient.contains(slot))
            .map(|(_, c)| c.clone())
            .collect();
        let mut candidate = 0usize;
        for &slot in &deficient {
            loop {
                assert!(candidate < m, "ran out of completion candidates");
                let mut e = vec![0.0; m];
                e[candidate] = 1.0;
                candidate += 1;
                if orthonormalize_against(&mut e, &accepted) > 1e-3 {
                    u_cols[slot] = e.clone();
                    accepted.push(e);
                    break;
                }
            }
        }
    }

    let mut u = Matrix::zeros(m, n);
    let mut vt = Matrix::zeros(n, n);
    let mut singular_values = Vec::with_capacity(n);
    for (slot, &j) in order.iter().enumerate() {
        singular_values.push(sigma[j]);
        u.set_column(slot, &u_cols[slot]);
        vt.row_mut(slot).copy_from_slice(&v_cols[j]);
    }
    Ok(SvdResult { u, singular_values, vt })
}

fn check_input(a: &Matrix) -> Result<(), LinalgError> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(LinalgError::Empty {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    if !a.all_finite() {
        return Err(LinalgError::NonFinite { row: 0, col: 0 });
    }
    Ok(())
}

/// Thin SVD. Singular vector signs are not canonicalized.
pub fn svd(a: &Matrix) -> Result<SvdResult, LinalgError> {
    check_input(a)?;
    if a.rows() >= a.cols() {
        svd_tall(a)
    } else {
        let t = svd_tall(&a.transpose())?;
        Ok(SvdResult {
            u: t.vt.transpose(),
            singular_values: t.singular_values,
            vt: t.u.transpose(),
        })
    }
}

/// Singular values only, non-increasing. Skips accumulating V.
pub fn singular_values(a: &Matrix) -> Result<Vec<f64>, LinalgError> {
    check_input(a)?;
    let jac = if a.rows() >= a.cols() {
        jacobi_tall(a, false)?
    } else {
        jacobi_tall(&a.transpose(), false)?
    };
    let mut sigma: Vec<f64> = jac.cols.iter().map(|c| dot(c, c).sqrt()).collect();
    sigma.sort_by(|x, y| y.total_cmp(x));
    Ok(sigma)
}

/// Sum of singular values.
pub fn nuclear_norm(a: &Matrix) -> Result<f64, LinalgError> {
    Ok(singular_values(a)?.iter().sum())
}

/// Projected subgradient `U₁·V₁ᵀ` of the nuclear norm, keeping only the
/// singular directions with `σ > sv_threshold`.
pub fn nuclear_subgradient(a: &Matrix, sv_threshold: f64) -> Result<Matrix, LinalgError> {
    check_threshold(sv_threshold)?;
    Ok(svd(a)?.principal_projector(sv_threshold))
}

/// Nuclear norm and projected subgradient from a single decomposition.
pub fn nuclear_norm_and_subgradient(a: &Matrix, sv_threshold: f64) -> Result<(f64, Matrix), LinalgError> {
    check_threshold(sv_threshold)?;
    let dec = svd(a)?;
    Ok((dec.nuclear_norm(), dec.principal_projector(sv_threshold)))
}

fn check_threshold(t: f64) -> Result<(), LinalgError> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(LinalgError::InvalidThreshold(t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn converges_on_relu_like_rank_deficient_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..200 {
            let m = rng.random_range(2..12);
            let n = rng.random_range(2..12);
            let r = rng.random_range(1..=m.min(n));
            let a = random(m, r, trial).matmul(&random(r, n, trial + 1000)).unwrap();
            let a = a.map(|v| v.max(0.0));
            let dead = rng.random_range(0..m);
            let a = Matrix::from_fn(m, n, |i, j| if i == dead { 0.0 } else { a[(i, j)] });
            let f = svd(&a).unwrap_or_else(|e| panic!("trial {trial}: {e}"));
            assert!(f.reconstruct().sub(&a).unwrap().max_abs() <= 1e-12 * (1.0 + a.max_abs()));
            assert_orthonormal_columns(&f.u, 1e-10);
        }
    }

    fn assert_orthonormal_columns(q: &Matrix, tol: f64) {
        let gram = q.t_matmul(q).unwrap();
        let err = gram.sub(&Matrix::identity(q.cols())).unwrap().max_abs();
        assert!(err <= tol, "orthogonality error {err}");
    }

    fn check_contract(a: &Matrix) {
        let dec = svd(a).unwrap();
        let k = a.rows().min(a.cols());
        assert_eq!(dec.u.shape(), (a.rows(), k));
        assert_eq!(dec.vt.shape(), (k, a.cols()));
        let resid = dec.reconstruct().sub(a).unwrap().frobenius_norm();
        assert!(resid <= 1e-10 * a.frobenius_norm().max(1.0), "residual {resid}");
        assert_orthonormal_columns(&dec.u, 1e-10);
        assert_orthonormal_columns(&dec.vt.transpose(), 1e-10);
        for w in dec.singular_values.windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert!(dec.singular_values.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn identity_and_diagonal() {
        assert_eq!(svd(&Matrix::identity(2)).unwrap().singular_values, vec![1.0, 1.0]);
        let d = svd(&Matrix::from_diag(&[3.0, -4.0])).unwrap();
        assert_eq!(d.singular_values, vec![4.0, 3.0]);
    }

    #[test]
    fn random_shapes_meet_contract() {
        for (seed, (r, c)) in [(5, 3), (3, 5), (1, 4), (4, 1), (7, 7), (12, 30)]
            .into_iter()
            .enumerate()
        {
            check_contract(&random(r, c, seed as u64));
        }
    }

    #[test]
    fn rank_deficient_meets_contract() {
        let a = Matrix::from_rows(&[&[1.0, 1.0], &[0.0, 0.0]]);
        check_contract(&a);
        let zero = Matrix::zeros(3, 2);
        check_contract(&zero);
        let dec = svd(&zero).unwrap();
        assert_eq!(dec.singular_values, vec![0.0, 0.0]);
        // rank-2 product embedded in 6x5
        let low = random(6, 2, 9).matmul(&random(2, 5, 10)).unwrap();
        check_contract(&low);
        let sv = svd(&low).unwrap().singular_values;
        assert!(sv[2] < 1e-12);
    }

    #[test]
    fn nuclear_norm_examples() {
        assert_eq!(nuclear_norm(&Matrix::identity(2)).unwrap(), 2.0);
        let a = Matrix::from_rows(&[&[1.0, 1.0], &[0.0, 0.0]]);
        assert!((nuclear_norm(&a).unwrap() - 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(nuclear_norm(&Matrix::zeros(2, 3)).unwrap(), 0.0);
    }

    #[test]
    fn subgradient_examples() {
        let g = nuclear_subgradient(&Matrix::from_diag(&[2.0, 0.0]), 1e-6).unwrap();
        let expected = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]);
        assert!(g.sub(&expected).unwrap().max_abs() < 1e-14);
        let g = nuclear_subgradient(&Matrix::identity(3), 1e-6).unwrap();
        assert!(g.sub(&Matrix::identity(3)).unwrap().max_abs() < 1e-14);
        let g = nuclear_subgradient(&Matrix::from_diag(&[0.5, 0.2]), 1.0).unwrap();
        assert!(g.is_zero());
        assert!(nuclear_subgradient(&Matrix::identity(2), -1.0).is_err());
    }

    #[test]
    fn singular_values_match_full_svd() {
        let a = random(6, 9, 3);
        let full = svd(&a).unwrap().singular_values;
        let only = singular_values(&a).unwrap();
        for (x, y) in full.iter().zip(&only) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn empty_is_rejected() {
        assert!(matches!(svd(&Matrix::zeros(0, 3)), Err(LinalgError::Empty { .. })));
    }

    #[test]
    fn deterministic() {
        let a = random(8, 5, 77);
        let x = svd(&a).unwrap();
        let y = svd(&a).unwrap();
        assert_eq!(x.u, y.u);
        assert_eq!(x.vt, y.vt);
        assert_eq!(x.singular_values, y.singular_values);
    }
}
