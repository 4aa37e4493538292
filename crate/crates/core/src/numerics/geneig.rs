use super::{ensure_square, symmetrize, Matrix, Vector};
use crate::error::{Error, Result};

/// Top eigenpair of the symmetric-definite pencil `(M, N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedEig {
    pub value: f64,
    /// Normalized so that `vᵀ N v = 1`.
    pub vector: Vector,
}

/// Largest `λ` with `M v = λ N v`, by Cholesky reduction `N = L Lᵀ` to the
/// standard problem `L⁻¹ M L⁻ᵀ y = λ y`, `v = L⁻ᵀ y`.
pub fn generalized_symmetric_eig_max(m: &Matrix, n: &Matrix) -> Result<GeneralizedEig> {
    let dim = ensure_square("generalized_symmetric_eig_max", m)?;
    if n.shape() != (dim, dim) {
        return Err(Error::dim(
            "generalized_symmetric_eig_max",
            format!("M is {dim}x{dim}, N is {}x{}", n.nrows(), n.ncols()),
        ));
    }
    if dim == 0 {
        return Err(Error::dim("generalized_symmetric_eig_max", "empty pencil"));
    }
    let singular = || Error::Conditioning {
        context: "generalized_symmetric_eig_max",
        detail: "N is singular to 1e-12".into(),
    };
    let chol = symmetrize(n).cholesky().ok_or_else(singular)?;
    let l = chol.l();
    let diag = l.diagonal();
    let (dmin, dmax) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(*d), hi.max(*d)));
    if dmin * dmin <= 1e-12 * dmax * dmax {
        return Err(singular());
    }

    // C = L⁻¹ M L⁻ᵀ
    let linv_m = l.solve_lower_triangular(&symmetrize(m)).ok_or_else(singular)?;
    let reduced = l.solve_lower_triangular(&linv_m.transpose()).ok_or_else(singular)?;
    let eig = symmetrize(&reduced).symmetric_eigen();
    let (idx, value) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, v)| if v > best.1 { (i, v) } else { best },
        );
    let y = eig.eigenvectors.column(idx).into_owned();
    let mut vector = l.transpose().solve_upper_triangular(&y).ok_or_else(singular)?;
    // Deterministic sign: largest-magnitude component positive.
    if let Some(pivot) = vector.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())) {
        if pivot < 0.0 {
            vector.neg_mut();
        }
    }
    Ok(GeneralizedEig { value, vector })
}
