//! Small dense helpers shared by the modules. Everything here works on
//! `DMatrix<f64>` and returns crate errors instead of `Option`s.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{shape, Error, Result};

pub(crate) fn fro(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn ensure_square(m: &DMatrix<f64>, context: &'static str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            context,
            expected: "square matrix".into(),
            found: shape(m.nrows(), m.ncols()),
        });
    }
    Ok(())
}

pub(crate) fn ensure_shape(
    m: &DMatrix<f64>,
    rows: usize,
    cols: usize,
    context: &'static str,
) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::DimensionMismatch {
            context,
            expected: shape(rows, cols),
            found: shape(m.nrows(), m.ncols()),
        });
    }
    Ok(())
}

/// Cholesky factor of the symmetric part of `m`.
pub(crate) fn spd_factor(m: &DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    ensure_square(m, what)?;
    symmetrize(m)
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { what })
}

pub(crate) fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&spd_factor(m, what)?.inverse()))
}

pub(crate) fn spd_solve(
    m: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    what: &'static str,
) -> Result<DMatrix<f64>> {
    Ok(spd_factor(m, what)?.solve(rhs))
}

/// General (non-symmetric) inverse via LU; used where the operand is a
/// product such as ΓXᵀX that is nonsingular but not symmetric.
pub(crate) fn lu_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    ensure_square(m, what)?;
    m.clone()
        .lu()
        .try_inverse()
        .ok_or(Error::Singular { what })
}

pub(crate) fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Singular values in decreasing order.
pub(crate) fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Count of singular values above `max(rank_rel * σ_max, abs_floor)`.
pub(crate) fn numerical_rank(m: &DMatrix<f64>, rank_rel: f64, abs_floor: f64) -> usize {
    let sv = singular_values(m);
    let Some(&smax) = sv.first() else { return 0 };
    let cutoff = (rank_rel * smax).max(abs_floor);
    sv.iter().filter(|&&s| s > cutoff).count()
}

/// Minimum-norm least-squares solution of `a · g = b`.
pub(crate) fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let eps = f64::EPSILON * a.nrows().max(a.ncols()) as f64 * svd.singular_values.max();
    svd.solve(b, eps)
        .unwrap_or_else(|_| DMatrix::zeros(a.ncols(), b.ncols()))
}

pub(crate) fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    debug_assert_eq!(a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    out.view_mut((0, a.ncols()), (b.nrows(), b.ncols()))
        .copy_from(b);
    out
}
