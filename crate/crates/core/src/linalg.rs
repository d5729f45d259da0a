//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, Result};

/// Relative pivot tolerance below which a matrix is treated as singular.
pub const RANK_TOL: f64 = 1e-12;

fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Solves `a x = b` with full-pivot LU, rejecting numerically singular `a`.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != a.ncols() {
        return Err(CoreError::DimensionMismatch { expected: a.nrows(), got: a.ncols() });
    }
    if b.len() != a.nrows() {
        return Err(CoreError::DimensionMismatch { expected: a.nrows(), got: b.len() });
    }
    let scale = max_abs(a);
    if scale == 0.0 || !scale.is_finite() {
        return Err(CoreError::Singular("zero or non-finite matrix".into()));
    }
    let lu = a.clone().full_piv_lu();
    let min_pivot = lu.u().diagonal().iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
    if min_pivot <= RANK_TOL * scale * a.nrows() as f64 {
        return Err(CoreError::Singular(format!("pivot {min_pivot:e} relative to scale {scale:e}")));
    }
    lu.solve(b).ok_or_else(|| CoreError::Singular("LU solve failed".into()))
}

/// Inverse via full-pivot LU with the same singularity test as [`solve`].
pub fn inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        out.set_column(j, &solve(a, &e)?);
    }
    Ok(out)
}

/// Moore-Penrose inverse of a symmetric PSD matrix via its eigendecomposition.
pub fn pinv_sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(a).symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let cut = top * 1e-10 * a.nrows() as f64;
    let inv = eig.eigenvalues.map(|l| if l.abs() > cut { 1.0 / l } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Numerical rank of a symmetric PSD matrix.
pub fn rank_sym(a: &DMatrix<f64>) -> usize {
    let eig = symmetrize(a).symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let cut = top * 1e-10 * a.nrows() as f64;
    eig.eigenvalues.iter().filter(|l| l.abs() > cut).count()
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Symmetrizes and raises every eigenvalue to at least `floor`.
pub fn floor_eigenvalues(a: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = symmetrize(a).symmetric_eigen();
    let vals = eig.eigenvalues.map(|l| l.max(floor));
    symmetrize(&(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()))
}

/// Returns `L` with `L Lᵀ = a` for symmetric PSD `a`.
///
/// Uses Cholesky when it succeeds, otherwise a clipped eigendecomposition.
/// Fails if `a` has an eigenvalue clearly below zero.
pub fn sqrt_factor(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(CoreError::CovarianceRepair("non-finite covariance".into()));
    }
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = symmetrize(a).symmetric_eigen();
    let scale = max_abs(a).max(1.0);
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, x| m.min(*x));
    if min < -1e-10 * scale {
        return Err(CoreError::NonPsd(min));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.clone().complex_eigenvalues().iter().fold(0.0_f64, |m, z| m.max(z.norm()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_rejects_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(solve(&a, &DVector::from_vec(vec![1.0, 1.0])), Err(CoreError::Singular(_))));
    }

    #[test]
    fn solve_matches_hand_result() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let x = solve(&a, &DVector::from_vec(vec![3.0, 5.0])).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14 && (x[1] - 1.4).abs() < 1e-14);
    }

    #[test]
    fn pinv_of_rank_one() {
        let v = DVector::from_vec(vec![1.0, 2.0]);
        let a = &v * v.transpose();
        let p = pinv_sym(&a);
        assert!((&a * &p * &a - &a).norm() < 1e-12);
        assert_eq!(rank_sym(&a), 1);
    }

    #[test]
    fn sqrt_factor_handles_semidefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = sqrt_factor(&a).unwrap();
        assert!((&l * l.transpose() - &a).norm() < 1e-12);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(sqrt_factor(&bad), Err(CoreError::NonPsd(_))));
    }

    #[test]
    fn floor_lifts_small_eigenvalues() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -3.0]);
        let f = floor_eigenvalues(&a, 1e-9);
        assert!((f[(1, 1)] - 1e-9).abs() < 1e-15);
    }
}
