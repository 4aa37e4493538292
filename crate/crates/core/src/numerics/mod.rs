//! Dense-matrix kernels used throughout the design pipeline.
//!
//! Everything here is a pure function on `nalgebra` dynamic matrices:
//! matrix exponentials and zero-order-hold integrals, the discrete algebraic
//! Riccati and Lyapunov equations, a Cholesky-reduced generalized symmetric
//! eigenproblem, and the χ² distribution.

mod chi2;
mod expm;
mod geneig;
mod lyapunov;
mod riccati;

pub use chi2::{chi2_cdf, chi2_quantile, ln_gamma, regularized_lower_gamma};
pub use expm::{mat_exp, zoh_pair, zoh_process_noise};
pub use geneig::{generalized_symmetric_eig_max, GeneralizedEig};
pub use lyapunov::{solve_dlyap, solve_dlyap_with, DlyapOptions};
pub use riccati::{dare_residual, solve_dare, solve_dare_with, DareOptions};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative tolerance for symmetry checks on covariance-like inputs.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalues below `-PSD_FLOOR * max|λ|` are treated as genuinely negative.
pub const PSD_FLOOR: f64 = 1e-10;

/// Builds a matrix from row vectors, rejecting ragged or non-finite input.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::dim("from_rows", "ragged rows"));
    }
    let m = Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]);
    ensure_finite("from_rows", &m)?;
    Ok(m)
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn ensure_finite(context: &'static str, m: &Matrix) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::domain(context, "matrix contains NaN or infinite entries"))
    }
}

pub(crate) fn ensure_square(context: &'static str, m: &Matrix) -> Result<usize> {
    if m.is_square() {
        Ok(m.nrows())
    } else {
        Err(Error::dim(
            context,
            format!("expected a square matrix, got {}x{}", m.nrows(), m.ncols()),
        ))
    }
}

pub(crate) fn ensure_shape(context: &'static str, name: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.shape() == (rows, cols) {
        Ok(())
    } else {
        Err(Error::dim(
            context,
            format!("{name} must be {rows}x{cols}, got {}x{}", m.nrows(), m.ncols()),
        ))
    }
}

/// Infinity norm (maximum absolute row sum).
pub fn inf_norm(m: &Matrix) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `(m + mᵀ) / 2`
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Checks symmetry and positive semidefiniteness to the crate tolerances.
pub fn check_symmetric_psd(context: &'static str, m: &Matrix) -> Result<()> {
    ensure_square(context, m)?;
    ensure_finite(context, m)?;
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::domain(
            context,
            format!("matrix is not symmetric (max asymmetry {asym:.3e})"),
        ));
    }
    let eig = symmetrize(m).symmetric_eigenvalues();
    let top = eig.amax();
    let min = eig.min();
    if min < -PSD_FLOOR * top {
        return Err(Error::domain(
            context,
            format!("matrix is not positive semidefinite (eigenvalue {min:.3e})"),
        ));
    }
    Ok(())
}

/// Checks symmetry and strict positive definiteness.
pub fn check_symmetric_pd(context: &'static str, m: &Matrix) -> Result<()> {
    check_symmetric_psd(context, m)?;
    if m.is_empty() {
        return Ok(());
    }
    let eig = symmetrize(m).symmetric_eigenvalues();
    if eig.min() <= 1e-14 * eig.amax() {
        return Err(Error::domain(
            context,
            format!("matrix is not positive definite (eigenvalue {:.3e})", eig.min()),
        ));
    }
    Ok(())
}

/// Symmetrizes a computed covariance-like matrix and clips eigenvalues that
/// fell below the negative floor.
pub fn psd_output(m: &Matrix) -> Matrix {
    let sym = symmetrize(m);
    if sym.is_empty() {
        return sym;
    }
    let eig = sym.clone().symmetric_eigen();
    let top = eig.eigenvalues.amax();
    let min = eig.eigenvalues.min();
    if min >= -PSD_FLOOR * top {
        return sym;
    }
    log::warn!("clipping negative eigenvalue {min:.3e} (largest {top:.3e}) to zero");
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    symmetrize(&(v * Matrix::from_diagonal(&clipped) * v.transpose()))
}

/// A factor `F` with `F Fᵀ = m` for symmetric PSD `m`, via the eigendecomposition
/// so that singular covariances are handled.
pub fn psd_sqrt(m: &Matrix) -> Matrix {
    if m.is_empty() {
        return m.clone();
    }
    let eig = symmetrize(m).symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * Matrix::from_diagonal(&roots)
}

/// Solves `m x = rhs` for symmetric positive definite `m` (Cholesky), falling
/// back to LU when the factorization fails.
pub(crate) fn spd_solve(context: &'static str, m: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    if let Some(chol) = symmetrize(m).cholesky() {
        return Ok(chol.solve(rhs));
    }
    m.clone().lu().solve(rhs).ok_or_else(|| Error::Conditioning {
        context,
        detail: "matrix is singular".into(),
    })
}
