//! Discrete Lyapunov equation `X = M X Mᵀ + N` for Schur-stable `M`.

use super::{ensure_shape, ensure_square, inf_norm, psd_output, spectral_radius, symmetrize, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DlyapOptions {
    /// Accepted residual, relative to `1 + ‖X‖∞`.
    pub tolerance: f64,
    pub max_refinements: usize,
}

impl Default for DlyapOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_refinements: 4,
        }
    }
}

/// Stability margin below which the series is declared divergent.
pub const STABILITY_MARGIN: f64 = 1e-9;

pub fn solve_dlyap(m: &Matrix, n: &Matrix) -> Result<Matrix> {
    solve_dlyap_with(m, n, DlyapOptions::default())
}

/// Smith doubling `X ← X + M_k X M_kᵀ`, `M_k ← M_k²`, then iterative refinement
/// on the residual.
pub fn solve_dlyap_with(m: &Matrix, n: &Matrix, opts: DlyapOptions) -> Result<Matrix> {
    let dim = ensure_square("solve_dlyap", m)?;
    ensure_shape("solve_dlyap", "N", n, dim, dim)?;
    let radius = spectral_radius(m);
    if radius >= 1.0 - STABILITY_MARGIN {
        return Err(Error::Stability {
            context: "solve_dlyap",
            radius,
        });
    }

    let mut x = smith(m, n);
    let mut residual = dlyap_residual(m, n, &x);
    let mut refinements = 0;
    while residual >= opts.tolerance * (1.0 + inf_norm(&x)) && refinements < opts.max_refinements {
        refinements += 1;
        let err = n + m * &x * m.transpose() - &x;
        x += smith(m, &symmetrize(&err));
        residual = dlyap_residual(m, n, &x);
    }
    let x = psd_output(&x);
    let residual = dlyap_residual(m, n, &x);
    if residual < opts.tolerance * (1.0 + inf_norm(&x)) {
        Ok(x)
    } else {
        Err(Error::Convergence {
            context: "solve_dlyap",
            iterations: refinements,
            residual,
        })
    }
}

fn smith(m: &Matrix, n: &Matrix) -> Matrix {
    let mut x = n.clone();
    let mut mk = m.clone();
    for _ in 0..64 {
        let inc = &mk * &x * mk.transpose();
        let done = inc.amax() <= f64::EPSILON * 1e-3 * x.amax().max(f64::MIN_POSITIVE);
        x += inc;
        if done {
            break;
        }
        mk = &mk * &mk;
    }
    symmetrize(&x)
}

/// `‖M X Mᵀ + N − X‖∞`
pub(crate) fn dlyap_residual(m: &Matrix, n: &Matrix, x: &Matrix) -> f64 {
    inf_norm(&(m * x * m.transpose() + n - x))
}
