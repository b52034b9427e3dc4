//! Domain types shared by every module: the tolerance policy, the model
//! instance with its validation, and the per-condition check report.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::decomposition::NullBasis;
use crate::error::{shape, Error, Result};
use crate::linalg;

/// Thresholds governing every approximate equality in the crate.
///
/// `psd_floor` is relative: a symmetric matrix passes the semidefiniteness
/// check when its smallest eigenvalue is at least `psd_floor * ‖M‖₂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceConfig {
    pub rel_eq: f64,
    pub abs_eq: f64,
    pub rank_rel: f64,
    pub psd_floor: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            rel_eq: 1e-9,
            abs_eq: 1e-12,
            rank_rel: 1e-10,
            psd_floor: -1e-10,
        }
    }
}

impl ToleranceConfig {
    pub fn new(rel_eq: f64, abs_eq: f64, rank_rel: f64, psd_floor: f64) -> Result<Self> {
        let tol = Self {
            rel_eq,
            abs_eq,
            rank_rel,
            psd_floor,
        };
        tol.check()?;
        Ok(tol)
    }

    pub fn check(&self) -> Result<()> {
        for (name, v) in [
            ("rel_eq", self.rel_eq),
            ("abs_eq", self.abs_eq),
            ("rank_rel", self.rank_rel),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidTolerance(format!(
                    "{name} must be finite and strictly positive, got {v}"
                )));
            }
        }
        if !(self.psd_floor.is_finite() && self.psd_floor <= 0.0) {
            return Err(Error::InvalidTolerance(format!(
                "psd_floor must be finite and non-positive, got {}",
                self.psd_floor
            )));
        }
        Ok(())
    }

    fn accepts(&self, diff_norm: f64, residual: f64) -> bool {
        residual <= self.rel_eq || diff_norm <= self.abs_eq
    }
}

/// Relative Frobenius comparison with an absolute floor.
///
/// Returns `(holds, residual)` where
/// `residual = ‖a − b‖_F / max(1, ‖a‖_F, ‖b‖_F)`.
pub fn approx_equal(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    tol: &ToleranceConfig,
) -> Result<(bool, f64)> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            context: "approx_equal",
            expected: shape(a.nrows(), a.ncols()),
            found: shape(b.nrows(), b.ncols()),
        });
    }
    let diff = linalg::fro(&(a - b));
    let denom = 1f64.max(linalg::fro(a)).max(linalg::fro(b));
    let residual = diff / denom;
    Ok((tol.accepts(diff, residual), residual))
}

/// Zero test for a matrix built as a product of factors.
///
/// `scale` must bound `‖m‖_F` a priori (the product of the factors' norms),
/// so the residual `‖m‖_F / scale` lies in `[0, 1]` and is insensitive to the
/// units of the factors.
pub(crate) fn approx_zero(m: &DMatrix<f64>, scale: f64, tol: &ToleranceConfig) -> (bool, f64) {
    let norm = linalg::fro(m);
    let residual = if scale > 0.0 { norm / scale } else { 0.0 };
    (tol.accepts(norm, residual), residual)
}

/// One atomic condition of a check.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: String,
    pub residual: f64,
    pub holds: bool,
}

impl Condition {
    pub fn new(name: impl Into<String>, (holds, residual): (bool, f64)) -> Self {
        Self {
            name: name.into(),
            residual: residual.abs(),
            holds,
        }
    }
}

/// Verdicts of one checker. `verdict` is always the conjunction of the
/// condition flags.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub verdict: bool,
    pub conditions: Vec<Condition>,
    pub tolerance_used: ToleranceConfig,
    pub witness: Option<DMatrix<f64>>,
}

impl CheckReport {
    pub fn new(
        conditions: Vec<Condition>,
        tolerance_used: ToleranceConfig,
        witness: Option<DMatrix<f64>>,
    ) -> Self {
        Self {
            verdict: conditions.iter().all(|c| c.holds),
            conditions,
            tolerance_used,
            witness,
        }
    }

    pub fn condition(&self, name: &str) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.name == name)
    }

    pub fn holds(&self, name: &str) -> Option<bool> {
        self.condition(name).map(|c| c.holds)
    }
}

/// General linear model `y = Xβ + ε`, `Cov(ε) = σ²Ω`, together with the two
/// penalties under comparison: `K1` for the Ω-weighted estimator and `K2`
/// for the identity-weighted one.
///
/// `z` optionally carries a user-supplied basis of the orthogonal complement
/// of `C(X)`; the canonical basis is used otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInstance {
    pub x: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub k1: DMatrix<f64>,
    pub k2: DMatrix<f64>,
    pub y: Option<DVector<f64>>,
    pub beta: Option<DVector<f64>>,
    pub sigma2: Option<f64>,
    pub z: Option<DMatrix<f64>>,
}

impl ModelInstance {
    pub fn new(
        x: DMatrix<f64>,
        omega: DMatrix<f64>,
        k1: DMatrix<f64>,
        k2: DMatrix<f64>,
    ) -> Result<Self> {
        let inst = Self {
            x,
            omega,
            k1,
            k2,
            y: None,
            beta: None,
            sigma2: None,
            z: None,
        };
        inst.check_dimensions()?;
        Ok(inst)
    }

    pub fn with_y(mut self, y: DVector<f64>) -> Self {
        self.y = Some(y);
        self
    }

    pub fn with_beta(mut self, beta: DVector<f64>) -> Self {
        self.beta = Some(beta);
        self
    }

    pub fn with_sigma2(mut self, sigma2: f64) -> Self {
        self.sigma2 = Some(sigma2);
        self
    }

    pub fn with_z(mut self, z: DMatrix<f64>) -> Self {
        self.z = Some(z);
        self
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    /// Shape consistency of every field. A failure here is a hard error,
    /// distinct from the invariant violations reported by [`validate`].
    pub fn check_dimensions(&self) -> Result<()> {
        let (n, k) = self.x.shape();
        if n == 0 || k == 0 || k >= n {
            return Err(Error::DimensionMismatch {
                context: "X",
                expected: "n x k with n > k >= 1".into(),
                found: shape(n, k),
            });
        }
        linalg::ensure_shape(&self.omega, n, n, "Omega")?;
        linalg::ensure_shape(&self.k1, k, k, "K1")?;
        linalg::ensure_shape(&self.k2, k, k, "K2")?;
        if let Some(y) = &self.y {
            if y.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "y",
                    expected: format!("length {n}"),
                    found: format!("length {}", y.len()),
                });
            }
        }
        if let Some(beta) = &self.beta {
            if beta.len() != k {
                return Err(Error::DimensionMismatch {
                    context: "beta",
                    expected: format!("length {k}"),
                    found: format!("length {}", beta.len()),
                });
            }
        }
        if let Some(z) = &self.z {
            linalg::ensure_shape(z, n, n - k, "Z")?;
        }
        Ok(())
    }

    /// The user-supplied basis when present (validated), else the canonical one.
    pub fn null_basis(&self, tol: &ToleranceConfig) -> Result<NullBasis> {
        match &self.z {
            Some(z) => NullBasis::from_matrix(&self.x, z.clone(), tol),
            None => NullBasis::canonical(&self.x, tol),
        }
    }

    pub fn validate(&self, tol: &ToleranceConfig) -> Result<Vec<Violation>> {
        validate(self, tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Invariant {
    Finite,
    XFullColumnRank,
    OmegaSymmetric,
    OmegaPositiveDefinite,
    K1Symmetric,
    K1PositiveSemidefinite,
    K2Symmetric,
    K2PositiveSemidefinite,
    Sigma2Positive,
    NullBasis,
}

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Invariant::Finite => "all entries finite",
            Invariant::XFullColumnRank => "X not full column rank",
            Invariant::OmegaSymmetric => "Omega not symmetric",
            Invariant::OmegaPositiveDefinite => "Omega not positive definite",
            Invariant::K1Symmetric => "K1 not symmetric",
            Invariant::K1PositiveSemidefinite => "K1 not positive semidefinite",
            Invariant::K2Symmetric => "K2 not symmetric",
            Invariant::K2PositiveSemidefinite => "K2 not positive semidefinite",
            Invariant::Sigma2Positive => "sigma2 not positive",
            Invariant::NullBasis => "Z not a basis of the complement of C(X)",
        };
        f.write_str(s)
    }
}

/// A failed invariant and the quantity that measured it (for example the
/// smallest eigenvalue of Ω, or the rank deficit of X).
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub invariant: Invariant,
    pub residual: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (measured {:e})", self.invariant, self.residual)
    }
}

pub(crate) fn is_symmetric(m: &DMatrix<f64>, tol: &ToleranceConfig) -> (bool, f64) {
    approx_equal(m, &m.transpose(), tol).expect("square matrix")
}

/// Semidefiniteness by eigenvalues, so exact zero eigenvalues pass.
/// Returns `(holds, smallest eigenvalue)`.
pub(crate) fn is_psd(m: &DMatrix<f64>, tol: &ToleranceConfig) -> (bool, f64) {
    let ev = linalg::sym_eigenvalues(m);
    let (Some(&lo), Some(&hi)) = (ev.first(), ev.last()) else {
        return (true, 0.0);
    };
    let spectral = lo.abs().max(hi.abs());
    (lo >= tol.psd_floor * spectral, lo)
}

/// Definiteness: smallest eigenvalue above `rank_rel` times the largest.
pub(crate) fn is_pd(m: &DMatrix<f64>, tol: &ToleranceConfig) -> (bool, f64) {
    let ev = linalg::sym_eigenvalues(m);
    let (Some(&lo), Some(&hi)) = (ev.first(), ev.last()) else {
        return (false, 0.0);
    };
    (hi > 0.0 && lo > tol.rank_rel * hi, lo)
}

/// Checks every [`ModelInstance`] invariant. Returns an empty list iff all
/// hold; dimension inconsistencies are reported as errors instead.
pub fn validate(inst: &ModelInstance, tol: &ToleranceConfig) -> Result<Vec<Violation>> {
    inst.check_dimensions()?;
    let mut out = Vec::new();

    let all_finite = [&inst.x, &inst.omega, &inst.k1, &inst.k2]
        .iter()
        .all(|m| m.iter().all(|v| v.is_finite()))
        && inst.y.iter().flatten().all(|v| v.is_finite())
        && inst.beta.iter().flatten().all(|v| v.is_finite())
        && inst.z.iter().flatten().all(|v| v.is_finite())
        && inst.sigma2.is_none_or(f64::is_finite);
    if !all_finite {
        // Eigen/SVD routines are meaningless on NaN input.
        out.push(Violation {
            invariant: Invariant::Finite,
            residual: f64::NAN,
        });
        return Ok(out);
    }

    let k = inst.k();
    let rank = linalg::numerical_rank(&inst.x, tol.rank_rel, 0.0);
    if rank < k {
        out.push(Violation {
            invariant: Invariant::XFullColumnRank,
            residual: (k - rank) as f64,
        });
    }

    let (sym, r) = is_symmetric(&inst.omega, tol);
    if !sym {
        out.push(Violation {
            invariant: Invariant::OmegaSymmetric,
            residual: r,
        });
    }
    let (pd, lo) = is_pd(&inst.omega, tol);
    if !pd {
        out.push(Violation {
            invariant: Invariant::OmegaPositiveDefinite,
            residual: lo,
        });
    }

    for (m, sym_inv, psd_inv) in [
        (&inst.k1, Invariant::K1Symmetric, Invariant::K1PositiveSemidefinite),
        (&inst.k2, Invariant::K2Symmetric, Invariant::K2PositiveSemidefinite),
    ] {
        let (sym, r) = is_symmetric(m, tol);
        if !sym {
            out.push(Violation {
                invariant: sym_inv,
                residual: r,
            });
        }
        let (psd, lo) = is_psd(m, tol);
        if !psd {
            out.push(Violation {
                invariant: psd_inv,
                residual: lo,
            });
        }
    }

    if let Some(s2) = inst.sigma2 {
        if s2 <= 0.0 {
            out.push(Violation {
                invariant: Invariant::Sigma2Positive,
                residual: s2,
            });
        }
    }

    if let (Some(z), true) = (&inst.z, rank == k) {
        if let Some(r) = crate::decomposition::null_basis_defect(&inst.x, z, tol) {
            out.push(Violation {
                invariant: Invariant::NullBasis,
                residual: r,
            });
        }
    }

    Ok(out)
}
