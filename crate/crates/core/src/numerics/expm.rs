//! Matrix exponential and the zero-order-hold integrals built on it.

use super::{ensure_finite, ensure_shape, ensure_square, psd_output, Matrix};
use crate::error::{Error, Result};

const MAX_TAYLOR_TERMS: usize = 40;

/// `e^{M·scale}` by scaling and squaring around a truncated Taylor series.
///
/// The argument is halved until its 1-norm is at most 1/2, the series is
/// summed until the next term no longer changes the result, and the partial
/// sum is squared back up. Nilpotent inputs terminate the series exactly.
pub fn mat_exp(m: &Matrix, scale: f64) -> Result<Matrix> {
    let n = ensure_square("mat_exp", m)?;
    if !scale.is_finite() {
        return Err(Error::domain("mat_exp", "scale must be finite"));
    }
    ensure_finite("mat_exp", m)?;
    let x = m * scale;
    let norm = x.column_iter().map(|c| c.lp_norm(1)).fold(0.0, f64::max);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let x = x / 2f64.powi(squarings as i32);

    let mut sum = Matrix::identity(n, n);
    let mut term = Matrix::identity(n, n);
    for k in 1..=MAX_TAYLOR_TERMS {
        term = &term * &x / k as f64;
        let tnorm = term.amax();
        sum += &term;
        if tnorm <= f64::EPSILON * 1e-2 * sum.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    Ok(sum)
}

/// Exact zero-order-hold pair `(A_d, B_d)` read off `exp([[A, B], [0, 0]]·T)`.
pub fn zoh_pair(a: &Matrix, b: &Matrix, period: f64) -> Result<(Matrix, Matrix)> {
    let n = ensure_square("zoh_pair", a)?;
    if b.nrows() != n {
        return Err(Error::dim(
            "zoh_pair",
            format!("B has {} rows, A is {n}x{n}", b.nrows()),
        ));
    }
    if !(period > 0.0) || !period.is_finite() {
        return Err(Error::domain("zoh_pair", "sampling period must be positive"));
    }
    let p = b.ncols();
    let mut block = Matrix::zeros(n + p, n + p);
    block.view_mut((0, 0), (n, n)).copy_from(a);
    block.view_mut((0, n), (n, p)).copy_from(b);
    let e = mat_exp(&block, period)?;
    Ok((e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, p)).into_owned()))
}

/// Discretized process-noise covariance `∫₀ᵀ e^{As} Q e^{Aᵀs} ds` by Van Loan's
/// block exponential of `[[-A, Q], [0, Aᵀ]]·T`.
pub fn zoh_process_noise(a: &Matrix, q: &Matrix, period: f64) -> Result<Matrix> {
    let n = ensure_square("zoh_process_noise", a)?;
    ensure_shape("zoh_process_noise", "Q", q, n, n)?;
    if !(period > 0.0) || !period.is_finite() {
        return Err(Error::domain("zoh_process_noise", "sampling period must be positive"));
    }
    let mut block = Matrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&(-a));
    block.view_mut((0, n), (n, n)).copy_from(q);
    block.view_mut((n, n), (n, n)).copy_from(&a.transpose());
    let e = mat_exp(&block, period)?;
    let g12 = e.view((0, n), (n, n));
    let g22 = e.view((n, n), (n, n));
    Ok(psd_output(&(g22.transpose() * g12)))
}
