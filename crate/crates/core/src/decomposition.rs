//! Coordinates of Ω in the basis `(X, Z)`, where `Z` spans the orthogonal
//! complement of `C(X)`, and the closed-form blocks of Ω⁻¹ in the dual basis
//! `(X(XᵀX)⁻¹, Z(ZᵀZ)⁻¹)`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{approx_equal, approx_zero, CheckReport, Condition, ToleranceConfig};

/// Basis of the orthogonal complement of the column space of `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct NullBasis {
    z: DMatrix<f64>,
}

impl NullBasis {
    /// Orthonormal basis taken from a full Householder factorization of `X`,
    /// with each column's first significant entry made positive.
    pub fn canonical(x: &DMatrix<f64>, tol: &ToleranceConfig) -> Result<Self> {
        let (n, k) = x.shape();
        ensure_full_rank(x, tol)?;
        // Householder QR of [X | I] reproduces the reflectors of X on the
        // first k columns and yields a full n×n orthogonal Q.
        let q = linalg::hcat(x, &DMatrix::identity(n, n)).qr().q();
        let mut z = q.columns(k, n - k).into_owned();
        for mut col in z.column_iter_mut() {
            let peak = col.amax();
            if let Some(first) = col.iter().copied().find(|v| v.abs() > 1e-8 * peak) {
                if first < 0.0 {
                    col.neg_mut();
                }
            }
        }
        Ok(Self { z })
    }

    /// Accepts a user-supplied basis after checking `XᵀZ ≈ 0` and full rank.
    pub fn from_matrix(x: &DMatrix<f64>, z: DMatrix<f64>, tol: &ToleranceConfig) -> Result<Self> {
        let (n, k) = x.shape();
        ensure_full_rank(x, tol)?;
        linalg::ensure_shape(&z, n, n - k, "Z")?;
        if let Some(r) = null_basis_defect(x, &z, tol) {
            return Err(Error::InvalidNullBasis(format!(
                "X^T Z is not zero or Z is rank deficient (measured {r:e})"
            )));
        }
        Ok(Self { z })
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.z
    }

    /// `N = Z(ZᵀZ)⁻¹Zᵀ = I − X(XᵀX)⁻¹Xᵀ`.
    pub fn projector(&self) -> Result<DMatrix<f64>> {
        let ztz = self.z.transpose() * &self.z;
        let zt = self.z.transpose();
        Ok(&self.z * linalg::spd_solve(&ztz, &zt, "Z^T Z")?)
    }
}

/// Canonical basis for `X`.
pub fn null_basis(x: &DMatrix<f64>, tol: &ToleranceConfig) -> Result<NullBasis> {
    NullBasis::canonical(x, tol)
}

fn ensure_full_rank(x: &DMatrix<f64>, tol: &ToleranceConfig) -> Result<()> {
    let (n, k) = x.shape();
    if k == 0 || k >= n {
        return Err(Error::DimensionMismatch {
            context: "X",
            expected: "n x k with n > k >= 1".into(),
            found: crate::error::shape(n, k),
        });
    }
    let rank = linalg::numerical_rank(x, tol.rank_rel, 0.0);
    if rank < k {
        return Err(Error::RankDeficient { rank, expected: k });
    }
    Ok(())
}

/// `None` when `z` is a valid basis for the complement of `C(x)`, otherwise
/// the offending measurement: the relative size of `XᵀZ`, or the rank
/// deficit of `Z`.
pub(crate) fn null_basis_defect(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    tol: &ToleranceConfig,
) -> Option<f64> {
    let (n, k) = x.shape();
    if z.shape() != (n, n - k) {
        return Some(f64::NAN);
    }
    let xtz = x.transpose() * z;
    let (zero, r) = approx_zero(&xtz, linalg::fro(x) * linalg::fro(z), tol);
    if !zero {
        return Some(r);
    }
    let rank = linalg::numerical_rank(z, tol.rank_rel, 0.0);
    if rank < n - k {
        return Some((n - k - rank) as f64);
    }
    None
}

/// Quantities of the `(X, Z)` frame reused by every block computation.
#[derive(Debug, Clone)]
pub(crate) struct Frame {
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub xtx: DMatrix<f64>,
    pub xtx_inv: DMatrix<f64>,
    pub ztz: DMatrix<f64>,
    /// `X(XᵀX)⁻¹`
    pub lx: DMatrix<f64>,
    /// `Z(ZᵀZ)⁻¹`
    pub lz: DMatrix<f64>,
}

impl Frame {
    pub fn new(x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<Self> {
        let (n, k) = x.shape();
        linalg::ensure_shape(z, n, n - k, "Z")?;
        let xtx = linalg::symmetrize(&(x.transpose() * x));
        let ztz = linalg::symmetrize(&(z.transpose() * z));
        let xtx_inv = linalg::spd_inverse(&xtx, "X^T X")?;
        let ztz_inv = linalg::spd_inverse(&ztz, "Z^T Z")?;
        Ok(Self {
            lx: x * &xtx_inv,
            lz: z * &ztz_inv,
            x: x.clone(),
            z: z.clone(),
            xtx,
            xtx_inv,
            ztz,
        })
    }

    /// `N = Z(ZᵀZ)⁻¹Zᵀ`
    pub fn projector(&self) -> DMatrix<f64> {
        linalg::symmetrize(&(&self.lz * self.z.transpose()))
    }

    /// Norm bound for `Ξ = (XᵀX)⁻¹XᵀΩZ(ZᵀZ)⁻¹`, used to scale zero tests.
    pub fn xi_scale(&self, omega: &DMatrix<f64>) -> f64 {
        linalg::fro(&self.lx) * linalg::fro(omega) * linalg::fro(&self.lz)
    }
}

/// Blocks of Ω and of Ω⁻¹ in the `(X, Z)` frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDecomposition {
    pub gamma: DMatrix<f64>,
    pub xi: DMatrix<f64>,
    pub delta: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    delta_inv: DMatrix<f64>,
    schur: DMatrix<f64>,
}

impl BlockDecomposition {
    pub(crate) fn from_frame(frame: &Frame, omega: &DMatrix<f64>) -> Result<Self> {
        let n = frame.x.nrows();
        linalg::ensure_shape(omega, n, n, "Omega")?;
        let omega_lx = omega * &frame.lx;
        let omega_lz = omega * &frame.lz;
        let gamma = linalg::symmetrize(&(frame.lx.transpose() * &omega_lx));
        let xi = frame.lx.transpose() * &omega_lz;
        let delta = linalg::symmetrize(&(frame.lz.transpose() * &omega_lz));

        let delta_inv = linalg::spd_inverse(&delta, "Delta")?;
        let xi_dinv = &xi * &delta_inv;
        let schur = linalg::symmetrize(&(&gamma - &xi_dinv * xi.transpose()));
        let a = linalg::spd_inverse(&schur, "Gamma - Xi Delta^-1 Xi^T")?;
        let b = -(&a * &xi_dinv);
        let c = b.transpose();
        let d = linalg::symmetrize(&(&delta_inv + &c * &schur * &b));
        Ok(Self {
            gamma,
            xi,
            delta,
            a,
            b,
            c,
            d,
            delta_inv,
            schur,
        })
    }

    /// `A⁻¹ = Γ − ΞΔ⁻¹Ξᵀ`, available without inverting `A`.
    pub fn a_inverse(&self) -> &DMatrix<f64> {
        &self.schur
    }

    pub fn delta_inverse(&self) -> &DMatrix<f64> {
        &self.delta_inv
    }

    /// `ΞΔ⁻¹Ξᵀ`
    pub fn xi_delta_xi(&self) -> DMatrix<f64> {
        linalg::symmetrize(&(&self.xi * &self.delta_inv * self.xi.transpose()))
    }

    /// Re-derives every inverse block from `(Γ, Ξ, Δ)` by generic inversion
    /// and tests it against the stored one, plus definiteness of Γ, Δ, A.
    pub fn check_invariants(&self, tol: &ToleranceConfig) -> Result<CheckReport> {
        let delta_inv = linalg::lu_inverse(&self.delta, "Delta")?;
        let e = &self.xi * &delta_inv * self.xi.transpose();
        let a = linalg::lu_inverse(&(&self.gamma - e), "Gamma - Xi Delta^-1 Xi^T")?;
        let b = -(&a * &self.xi * &delta_inv);
        let a_inv = linalg::lu_inverse(&a, "A")?;
        let d = &delta_inv + b.transpose() * a_inv * &b;
        let conditions = vec![
            Condition::new("A", approx_equal(&self.a, &a, tol)?),
            Condition::new("B", approx_equal(&self.b, &b, tol)?),
            Condition::new("C", approx_equal(&self.c, &self.b.transpose(), tol)?),
            Condition::new("D", approx_equal(&self.d, &d, tol)?),
            Condition::new("Gamma_pd", crate::model::is_pd(&self.gamma, tol)),
            Condition::new("Delta_pd", crate::model::is_pd(&self.delta, tol)),
            Condition::new("A_pd", crate::model::is_pd(&self.a, tol)),
        ];
        Ok(CheckReport::new(conditions, *tol, None))
    }
}

/// `Γ = (XᵀX)⁻¹XᵀΩX(XᵀX)⁻¹`, `Ξ = (XᵀX)⁻¹XᵀΩZ(ZᵀZ)⁻¹`,
/// `Δ = (ZᵀZ)⁻¹ZᵀΩZ(ZᵀZ)⁻¹` and the matching inverse blocks.
pub fn omega_blocks(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    omega: &DMatrix<f64>,
) -> Result<BlockDecomposition> {
    BlockDecomposition::from_frame(&Frame::new(x, z)?, omega)
}

fn ensure_block_shapes(x: &DMatrix<f64>, z: &DMatrix<f64>, bl: &BlockDecomposition) -> Result<()> {
    let (n, k) = x.shape();
    let m = n - k;
    linalg::ensure_shape(z, n, m, "Z")?;
    linalg::ensure_shape(&bl.gamma, k, k, "Gamma")?;
    linalg::ensure_shape(&bl.xi, k, m, "Xi")?;
    linalg::ensure_shape(&bl.delta, m, m, "Delta")?;
    linalg::ensure_shape(&bl.a, k, k, "A")?;
    linalg::ensure_shape(&bl.b, k, m, "B")?;
    linalg::ensure_shape(&bl.c, m, k, "C")?;
    linalg::ensure_shape(&bl.d, m, m, "D")
}

/// `XΓXᵀ + XΞZᵀ + ZΞᵀXᵀ + ZΔZᵀ`.
pub fn reconstruct_omega(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    blocks: &BlockDecomposition,
) -> Result<DMatrix<f64>> {
    ensure_block_shapes(x, z, blocks)?;
    Ok(assemble(
        x,
        z,
        &blocks.gamma,
        &blocks.xi,
        &blocks.delta,
    ))
}

/// Ω from raw `(Γ, Ξ, Δ)` blocks; the generators build instances this way.
pub(crate) fn assemble(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    xi: &DMatrix<f64>,
    delta: &DMatrix<f64>,
) -> DMatrix<f64> {
    let cross = x * xi * z.transpose();
    let out = x * gamma * x.transpose() + &cross + cross.transpose() + z * delta * z.transpose();
    linalg::symmetrize(&out)
}

/// `Ω⁻¹ = [X(XᵀX)⁻¹, Z(ZᵀZ)⁻¹] [A B; C D] [X(XᵀX)⁻¹, Z(ZᵀZ)⁻¹]ᵀ`.
pub fn omega_inverse_via_blocks(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    blocks: &BlockDecomposition,
) -> Result<DMatrix<f64>> {
    ensure_block_shapes(x, z, blocks)?;
    let frame = Frame::new(x, z)?;
    let (lx, lz) = (&frame.lx, &frame.lz);
    let out = lx * &blocks.a * lx.transpose()
        + lx * &blocks.b * lz.transpose()
        + lz * &blocks.c * lx.transpose()
        + lz * &blocks.d * lz.transpose();
    Ok(linalg::symmetrize(&out))
}
