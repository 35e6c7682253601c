//! Dense linear-algebra helpers shared by the estimators and reconcilers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Condition number above which a symmetric system is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Largest absolute entry, 0 for an empty matrix.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Cholesky factor of a symmetric positive definite matrix with a cheap
/// conditioning guard based on the factor's diagonal.
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    pub fn new(a: &DMatrix<f64>, context: &str) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::dims("spd factor", "square matrix", format!("{}x{}", a.nrows(), a.ncols())));
        }
        let chol = Cholesky::new(a.clone()).ok_or_else(|| Error::Singular {
            context: context.to_string(),
            detail: "matrix is not positive definite".into(),
        })?;
        let l = chol.l_dirty();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for i in 0..a.nrows() {
            let d = l[(i, i)].abs();
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if a.nrows() > 0 {
            // (max L_ii / min L_ii)^2 is a lower bound on the 2-norm condition number.
            let cond = if lo > 0.0 { (hi / lo).powi(2) } else { f64::INFINITY };
            if !cond.is_finite() || cond > MAX_CONDITION {
                return Err(Error::Singular {
                    context: context.to_string(),
                    detail: format!("condition number estimate {cond:e} exceeds {MAX_CONDITION:e}"),
                });
            }
        }
        Ok(Self { chol })
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}

/// Extreme eigenvalues of a symmetric matrix.
pub fn eigen_range(a: &DMatrix<f64>) -> (f64, f64) {
    if a.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eig = SymmetricEigen::new(a.clone());
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// PSD check with relative tolerance: min eigenvalue ≥ −1e-8·max(max eigenvalue, 0).
pub fn check_psd(a: &DMatrix<f64>) -> Result<()> {
    let (min, max) = eigen_range(a);
    if min < -1e-8 * max.max(0.0) - f64::MIN_POSITIVE {
        return Err(Error::NotPositiveSemidefinite {
            min_eigenvalue: min,
            max_eigenvalue: max,
        });
    }
    Ok(())
}

/// Numerical rank of a symmetric PSD matrix.
pub fn psd_rank(a: &DMatrix<f64>) -> usize {
    if a.nrows() == 0 {
        return 0;
    }
    let eig = SymmetricEigen::new(a.clone());
    let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let tol = max * 1e-10 * a.nrows() as f64;
    eig.eigenvalues.iter().filter(|&&v| v > tol).count()
}

/// A matrix `R` with `R R' = a` for symmetric PSD `a`.
///
/// Uses a Cholesky factor when one exists; otherwise falls back to the
/// spectral square root with small negative eigenvalues clipped to zero.
/// Negativity beyond −1e-8·λ_max is an error.
pub fn psd_root(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if let Some(chol) = Cholesky::new(a.clone()) {
        return Ok(chol.l());
    }
    let eig = SymmetricEigen::new(a.clone());
    let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -1e-8 * max - f64::MIN_POSITIVE {
        return Err(Error::NotPositiveSemidefinite {
            min_eigenvalue: min,
            max_eigenvalue: max,
        });
    }
    let mut root = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        for i in 0..n {
            root[(i, j)] *= s;
        }
    }
    Ok(root)
}

/// Adds the ridge `1e-10·trace/dim` to the diagonal when the smallest
/// eigenvalue sits in the "numerically zero" band; larger negativity is an error.
pub fn ridge_if_needed(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n == 0 {
        return Ok(a.clone());
    }
    let (min, max) = eigen_range(a);
    let eps = 1e-10 * a.trace() / n as f64;
    if min < -1e-8 * max.max(0.0) - f64::MIN_POSITIVE {
        return Err(Error::NotPositiveSemidefinite {
            min_eigenvalue: min,
            max_eigenvalue: max,
        });
    }
    if min < eps {
        let mut out = a.clone();
        for i in 0..n {
            out[(i, i)] += eps;
        }
        Ok(out)
    } else {
        Ok(a.clone())
    }
}

/// Cross-product covariance of the rows of `x`.
///
/// `center` subtracts column means first; `unbiased` divides by `rows − 1`
/// instead of `rows`.
pub fn cross_covariance(x: &DMatrix<f64>, center: bool, unbiased: bool) -> DMatrix<f64> {
    let rows = x.nrows();
    let mut data = x.clone();
    if center && rows > 0 {
        for j in 0..data.ncols() {
            let mean = data.column(j).sum() / rows as f64;
            for i in 0..rows {
                data[(i, j)] -= mean;
            }
        }
    }
    let divisor = if unbiased { rows.saturating_sub(1) } else { rows }.max(1) as f64;
    let mut cov = data.transpose() * &data / divisor;
    symmetrize(&mut cov);
    cov
}

/// Least-squares solution of `a x = b` for full column rank `a` via normal equations.
pub fn full_column_pinv(a: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let gram = a.transpose() * a;
    let f = SpdFactor::new(&gram, context)?;
    Ok(f.solve(&a.transpose()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kron_matches_definition() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let k = kron(&a, &b);
        let expected = DMatrix::from_row_slice(2, 4, &[1.0, -1.0, 2.0, -2.0, 3.0, -3.0, 4.0, -4.0]);
        assert_eq!(k, expected);
    }

    #[test]
    fn psd_root_reconstructs_singular_matrix() {
        let v = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, -1.0]);
        let a = &v * v.transpose();
        let r = psd_root(&a).unwrap();
        assert!((&r * r.transpose() - &a).abs().max() < 1e-12);
    }

    #[test]
    fn indefinite_matrix_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(check_psd(&a), Err(Error::NotPositiveSemidefinite { .. })));
        assert!(psd_root(&a).is_err());
    }

    #[test]
    fn spd_factor_flags_ill_conditioning() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-14]);
        assert!(matches!(SpdFactor::new(&a, "test"), Err(Error::Singular { .. })));
    }

    #[test]
    fn ridge_applied_only_in_zero_band() {
        let v = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let a = &v * v.transpose();
        let r = ridge_if_needed(&a).unwrap();
        assert!(r[(0, 0)] > a[(0, 0)]);
        let pd = DMatrix::<f64>::identity(2, 2);
        assert_eq!(ridge_if_needed(&pd).unwrap(), pd);
    }

    #[test]
    fn covariance_divisors() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 3.0]);
        assert_eq!(cross_covariance(&x, false, false)[(0, 0)], 5.0);
        assert_eq!(cross_covariance(&x, true, false)[(0, 0)], 1.0);
        assert_eq!(cross_covariance(&x, true, true)[(0, 0)], 2.0);
    }
}
