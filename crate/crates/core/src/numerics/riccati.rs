//! Discrete algebraic Riccati equation
//!
//! `S = AᵀSA + W − AᵀSB (BᵀSB + U)⁻¹ BᵀSA`
//!
//! solved by the structure-preserving doubling iteration started at `S₀ = W`,
//! followed by Newton–Hewer polishing when the doubling fixed point misses the
//! residual target. The filter equation uses the same routine with `(Aᵀ, Cᵀ)`.

use super::lyapunov::solve_dlyap;
use super::{ensure_shape, ensure_square, inf_norm, psd_output, spd_solve, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DareOptions {
    pub max_iterations: usize,
    /// Accepted residual, relative to `1 + ‖S‖∞`.
    pub tolerance: f64,
}

impl Default for DareOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100_000,
            tolerance: 1e-10,
        }
    }
}

const NEWTON_STEPS: usize = 8;

pub fn solve_dare(a: &Matrix, b: &Matrix, w: &Matrix, u: &Matrix) -> Result<Matrix> {
    solve_dare_with(a, b, w, u, DareOptions::default())
}

pub fn solve_dare_with(a: &Matrix, b: &Matrix, w: &Matrix, u: &Matrix, opts: DareOptions) -> Result<Matrix> {
    let n = ensure_square("solve_dare", a)?;
    if b.nrows() != n {
        return Err(Error::dim(
            "solve_dare",
            format!("B has {} rows, A is {n}x{n}", b.nrows()),
        ));
    }
    let p = b.ncols();
    ensure_shape("solve_dare", "W", w, n, n)?;
    ensure_shape("solve_dare", "U", u, p, p)?;

    let id = Matrix::identity(n, n);
    let mut ak = a.clone();
    let mut g = b * spd_solve("solve_dare", u, &b.transpose())?;
    let mut h = w.clone();

    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let lu = (&id + &g * &h).lu();
        let (Some(inv_a), Some(inv_g)) = (lu.solve(&ak), lu.solve(&g)) else {
            return Err(Error::Convergence {
                context: "solve_dare",
                iterations,
                residual: f64::INFINITY,
            });
        };
        let h_next = &h + ak.transpose() * &h * &inv_a;
        let g_next = &g + &ak * inv_g * ak.transpose();
        ak = &ak * inv_a;
        let step = inf_norm(&(&h_next - &h));
        h = h_next;
        g = g_next;
        // Diverges when (A, B) is not stabilizable.
        if !h.iter().all(|v| v.is_finite()) {
            return Err(Error::Convergence {
                context: "solve_dare",
                iterations,
                residual: f64::INFINITY,
            });
        }
        if step <= 1e-15 * (1.0 + inf_norm(&h)) || inf_norm(&ak) < 1e-300 {
            break;
        }
    }

    let mut s = psd_output(&h);
    let mut residual = dare_residual(a, b, w, u, &s);
    let target = |s: &Matrix| opts.tolerance * (1.0 + inf_norm(s));
    let mut newton = 0;
    while !(residual < target(&s)) && residual.is_finite() && newton < NEWTON_STEPS {
        newton += 1;
        let Ok(next) = newton_hewer_step(a, b, w, u, &s) else {
            break;
        };
        s = next;
        residual = dare_residual(a, b, w, u, &s);
    }
    if residual < target(&s) {
        Ok(s)
    } else {
        Err(Error::Convergence {
            context: "solve_dare",
            iterations: iterations + newton,
            residual,
        })
    }
}

/// One Newton step: solve the Lyapunov equation of the closed loop induced by
/// the current iterate's gain.
fn newton_hewer_step(a: &Matrix, b: &Matrix, w: &Matrix, u: &Matrix, s: &Matrix) -> Result<Matrix> {
    let bts = b.transpose() * s;
    let gain = spd_solve("solve_dare", &(u + &bts * b), &(&bts * a))?;
    let closed = a - b * &gain;
    let rhs = w + gain.transpose() * u * &gain;
    solve_dlyap(&closed.transpose(), &psd_output(&rhs))
}

/// `‖S − (AᵀSA + W − AᵀSB (BᵀSB + U)⁻¹ BᵀSA)‖∞`
pub fn dare_residual(a: &Matrix, b: &Matrix, w: &Matrix, u: &Matrix, s: &Matrix) -> f64 {
    let bts = b.transpose() * s;
    let Ok(gain) = spd_solve("dare_residual", &(u + &bts * b), &(&bts * a)) else {
        return f64::INFINITY;
    };
    let rhs = a.transpose() * s * a + w - a.transpose() * s * b * gain;
    inf_norm(&(s - rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::spectral_radius;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    #[test]
    fn uncontrolled_scalar_is_geometric_sum() {
        let s = solve_dare(&dmatrix![0.5], &dmatrix![0.0], &dmatrix![1.0], &dmatrix![1.0]).unwrap();
        assert_relative_eq!(s[(0, 0)], 4.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn golden_ratio_fixed_point() {
        // S = S + 1 − S²/(S + 1)  ⇔  S² = S + 1.
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        let s = solve_dare(&dmatrix![1.0], &dmatrix![1.0], &dmatrix![1.0], &dmatrix![1.0]).unwrap();
        assert!((s[(0, 0)] - golden).abs() < 1e-9);
        assert!((s[(0, 0)] - 1.618_033_988_7).abs() < 1e-9);
    }

    #[test]
    fn zero_dynamics_returns_weight() {
        let w = dmatrix![2.0, 0.5, 0.0; 0.5, 1.0, 0.0; 0.0, 0.0, 3.0];
        let b = dmatrix![1.0; 0.0; 2.0];
        let s = solve_dare(&Matrix::zeros(3, 3), &b, &w, &dmatrix![1.0]).unwrap();
        assert_relative_eq!(s, w, epsilon = 1e-14);
    }

    #[test]
    fn double_integrator_is_stabilized() {
        let t = 0.1;
        let a = dmatrix![1.0, t; 0.0, 1.0];
        let b = dmatrix![t * t / 2.0; t];
        let w = Matrix::identity(2, 2);
        let u = dmatrix![0.01];
        let s = solve_dare(&a, &b, &w, &u).unwrap();
        assert!(dare_residual(&a, &b, &w, &u, &s) < 1e-10 * (1.0 + inf_norm(&s)));
        let bts = b.transpose() * &s;
        let gain = (&u + &bts * &b).try_inverse().unwrap() * bts * &a;
        assert!(spectral_radius(&(&a - &b * gain)) < 1.0);
    }

    #[test]
    fn slow_marginal_system_converges() {
        // Near-continuous sampling: eigenvalues at 1, closed loop at 1 − O(T).
        let t = 1e-4;
        let a = dmatrix![1.0, t; 0.0, 1.0];
        let b = dmatrix![t * t / 2.0; t];
        let s = solve_dare(&a, &b, &Matrix::identity(2, 2), &dmatrix![1.0]).unwrap();
        let r = dare_residual(&a, &b, &Matrix::identity(2, 2), &dmatrix![1.0], &s);
        assert!(r < 1e-10 * (1.0 + inf_norm(&s)), "residual {r}");
    }

    #[test]
    fn unstabilizable_pair_fails_to_converge() {
        let opts = DareOptions {
            max_iterations: 50,
            ..DareOptions::default()
        };
        let err = solve_dare_with(&dmatrix![2.0], &dmatrix![0.0], &dmatrix![1.0], &dmatrix![1.0], opts).unwrap_err();
        assert!(matches!(err, Error::Convergence { .. }), "{err:?}");
    }

    #[test]
    fn shape_errors() {
        let e = solve_dare(&dmatrix![1.0], &dmatrix![1.0; 1.0], &dmatrix![1.0], &dmatrix![1.0]);
        assert!(matches!(e, Err(Error::Dimension { .. })));
    }
}
