//! General ridge estimators `(XᵀΦ⁻¹X + K)⁻¹XᵀΦ⁻¹y` as explicit linear maps,
//! and the quantities derived from them.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{approx_equal, ModelInstance, ToleranceConfig};

/// The weighting matrix Φ of an estimator.
#[derive(Debug, Clone, Copy)]
pub enum Phi<'a> {
    Identity,
    Omega(&'a DMatrix<f64>),
}

impl Phi<'_> {
    pub fn kind(&self) -> PhiKind {
        match self {
            Phi::Identity => PhiKind::Identity,
            Phi::Omega(_) => PhiKind::Omega,
        }
    }

    /// `Φ⁻¹M` without forming Φ⁻¹.
    pub(crate) fn solve(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            Phi::Identity => Ok(m.clone()),
            Phi::Omega(omega) => {
                linalg::ensure_shape(omega, m.nrows(), m.nrows(), "Phi")?;
                linalg::spd_solve(omega, m, "Phi")
            }
        }
    }

    fn matrix(&self, n: usize) -> DMatrix<f64> {
        match self {
            Phi::Identity => DMatrix::identity(n, n),
            Phi::Omega(omega) => (*omega).clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiKind {
    Identity,
    Omega,
}

/// `P` with `β̂ = P·y`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeMap {
    pub p: DMatrix<f64>,
    pub phi_kind: PhiKind,
    pub k: DMatrix<f64>,
}

/// `XᵀΦ⁻¹` and `XᵀΦ⁻¹X`.
fn weighted(x: &DMatrix<f64>, phi: Phi) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let wt = phi.solve(x)?.transpose();
    let gram = linalg::symmetrize(&(&wt * x));
    Ok((wt, gram))
}

fn check_penalty(x: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<()> {
    linalg::ensure_shape(k, x.ncols(), x.ncols(), "K")
}

impl RidgeMap {
    pub fn new(x: &DMatrix<f64>, phi: Phi, k: &DMatrix<f64>) -> Result<Self> {
        check_penalty(x, k)?;
        let (wt, gram) = weighted(x, phi)?;
        let p = linalg::spd_solve(&(gram + k), &wt, "X^T Phi^-1 X + K")?;
        Ok(Self {
            p,
            phi_kind: phi.kind(),
            k: k.clone(),
        })
    }

    /// Tests `(XᵀΦ⁻¹X + K)·P ≈ XᵀΦ⁻¹`.
    pub fn check(&self, x: &DMatrix<f64>, phi: Phi, tol: &ToleranceConfig) -> Result<(bool, f64)> {
        let (wt, gram) = weighted(x, phi)?;
        approx_equal(&((gram + &self.k) * &self.p), &wt, tol)
    }
}

pub fn ridge_map(x: &DMatrix<f64>, phi: Phi, k: &DMatrix<f64>) -> Result<RidgeMap> {
    RidgeMap::new(x, phi, k)
}

pub fn estimate(map: &RidgeMap, y: &DVector<f64>) -> Result<DVector<f64>> {
    if y.len() != map.p.ncols() {
        return Err(Error::DimensionMismatch {
            context: "y",
            expected: format!("length {}", map.p.ncols()),
            found: format!("length {}", y.len()),
        });
    }
    Ok(&map.p * y)
}

/// `R = I − XP`, so that `y − Xβ̂ = R·y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMap {
    pub r: DMatrix<f64>,
}

impl ResidualMap {
    pub fn new(x: &DMatrix<f64>, map: &RidgeMap) -> Self {
        let n = x.nrows();
        Self {
            r: DMatrix::identity(n, n) - x * &map.p,
        }
    }
}

/// `RᵀΦ⁻¹R`, the matrix of the quadratic form `y ↦ RSS(Φ, K)`.
pub fn rss_form(x: &DMatrix<f64>, phi: Phi, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let map = ridge_map(x, phi, k)?;
    let r = ResidualMap::new(x, &map).r;
    Ok(linalg::symmetrize(&(r.transpose() * phi.solve(&r)?)))
}

/// `(y − Xβ̂)ᵀΦ⁻¹(y − Xβ̂)`.
pub fn rss(x: &DMatrix<f64>, phi: Phi, k: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    let map = ridge_map(x, phi, k)?;
    let e = y - x * estimate(&map, y)?;
    let e = DMatrix::from_column_slice(e.len(), 1, e.as_slice());
    let q = (e.transpose() * phi.solve(&e)?)[(0, 0)];
    Ok(q.max(0.0))
}

/// `M = PX`, so that `E[β̂] = Mβ`.
pub fn expectation_map(x: &DMatrix<f64>, phi: Phi, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(ridge_map(x, phi, k)?.p * x)
}

/// Bias `E[β̂] − β`, computed as `Mβ − β` and as `−(XᵀΦ⁻¹X + K)⁻¹Kβ`.
/// Disagreement between the two is reported as an error.
pub fn bias(
    x: &DMatrix<f64>,
    phi: Phi,
    k: &DMatrix<f64>,
    beta: &DVector<f64>,
    tol: &ToleranceConfig,
) -> Result<DVector<f64>> {
    check_penalty(x, k)?;
    if beta.len() != x.ncols() {
        return Err(Error::DimensionMismatch {
            context: "beta",
            expected: format!("length {}", x.ncols()),
            found: format!("length {}", beta.len()),
        });
    }
    let via_map = expectation_map(x, phi, k)? * beta - beta;
    let (_, gram) = weighted(x, phi)?;
    let kb = k * beta;
    let kb = DMatrix::from_column_slice(kb.len(), 1, kb.as_slice());
    let direct = -linalg::spd_solve(&(gram + k), &kb, "X^T Phi^-1 X + K")?;
    let via_map_m = DMatrix::from_column_slice(via_map.len(), 1, via_map.as_slice());
    let (agree, r) = approx_equal(&via_map_m, &direct, tol)?;
    if !agree {
        return Err(Error::RouteDisagreement {
            check: "bias",
            detail: format!("expectation-map and closed-form bias differ (residual {r:e})"),
        });
    }
    Ok(via_map)
}

/// `PΩPᵀ`, the covariance of `β̂` per unit σ².
pub fn estimator_covariance(
    x: &DMatrix<f64>,
    omega_true: &DMatrix<f64>,
    phi: Phi,
    k: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    linalg::ensure_shape(omega_true, x.nrows(), x.nrows(), "Omega")?;
    let p = ridge_map(x, phi, k)?.p;
    Ok(linalg::symmetrize(&(&p * omega_true * p.transpose())))
}

/// The two maps under comparison: `(P₁, P₂)` for `(Ω, K₁)` and `(I, K₂)`.
pub(crate) fn map_pair(inst: &ModelInstance) -> Result<(RidgeMap, RidgeMap)> {
    Ok((
        ridge_map(&inst.x, Phi::Omega(&inst.omega), &inst.k1)?,
        ridge_map(&inst.x, Phi::Identity, &inst.k2)?,
    ))
}

/// Second moment of `β̂(I, K₂) − β̂(Ω, K₁)`:
/// `DXββᵀXᵀDᵀ + σ²DΩDᵀ` with `D = P₂ − P₁`.
pub fn d1_matrix(inst: &ModelInstance, beta: &DVector<f64>, sigma2: f64) -> Result<DMatrix<f64>> {
    let (p1, p2) = map_pair(inst)?;
    d1_from_maps(inst, &p1.p, &p2.p, beta, sigma2)
}

pub(crate) fn d1_from_maps(
    inst: &ModelInstance,
    p1: &DMatrix<f64>,
    p2: &DMatrix<f64>,
    beta: &DVector<f64>,
    sigma2: f64,
) -> Result<DMatrix<f64>> {
    if beta.len() != inst.k() {
        return Err(Error::DimensionMismatch {
            context: "beta",
            expected: format!("length {}", inst.k()),
            found: format!("length {}", beta.len()),
        });
    }
    let d = p2 - p1;
    let v = &d * (&inst.x * beta);
    let out = &v * v.transpose() + (&d * &inst.omega * d.transpose()) * sigma2;
    Ok(linalg::symmetrize(&out))
}

/// [`d1_matrix`] at the instance's own `beta` and `sigma2`.
pub fn d1_matrix_of(inst: &ModelInstance) -> Result<DMatrix<f64>> {
    let beta = inst.beta.as_ref().ok_or(Error::Missing("beta"))?;
    let sigma2 = inst.sigma2.ok_or(Error::Missing("sigma2"))?;
    d1_matrix(inst, beta, sigma2)
}

/// Singular values above `max(rank_rel · σ_max, abs_eq)`. The absolute floor
/// keeps roundoff in an exactly-zero difference from counting as rank.
pub fn d1_rank(d1: &DMatrix<f64>, tol: &ToleranceConfig) -> usize {
    linalg::numerical_rank(d1, tol.rank_rel, tol.abs_eq)
}

/// `Φ^{-1/2}` by eigendecomposition. Reference implementation for tests and
/// diagnostics; the RSS path never forms it.
pub fn inverse_sqrt(phi: Phi, n: usize) -> Result<DMatrix<f64>> {
    let m = linalg::symmetrize(&phi.matrix(n));
    let eig = m.symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(Error::NotPositiveDefinite { what: "Phi" });
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::omega_blocks;
    use crate::instances;
    use nalgebra::{dmatrix, dvector};

    fn tol() -> ToleranceConfig {
        ToleranceConfig::default()
    }

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.amax()
    }

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn diagonal_weighting_halves_first_two_coordinates() {
        let x = dmatrix![1.0, 0.0; 0.0, 1.0; 0.0, 0.0];
        let expected = dmatrix![0.5, 0.0, 0.0; 0.0, 0.5, 0.0];
        for a in [0.5, 1.0, 7.3] {
            let omega = diag(&[1.0, 0.5, a]);
            let m = ridge_map(&x, Phi::Omega(&omega), &diag(&[1.0, 2.0])).unwrap();
            assert!(max_abs(&(&m.p - &expected)) < 1e-15);
            assert!(m.check(&x, Phi::Omega(&omega), &tol()).unwrap().0);
            assert_eq!(m.phi_kind, PhiKind::Omega);
        }
        let m = ridge_map(&x, Phi::Identity, &DMatrix::identity(2, 2)).unwrap();
        assert!(max_abs(&(&m.p - &expected)) < 1e-15);
    }

    #[test]
    fn ridge_map_closed_form_in_lambda() {
        let x = dmatrix![1.0, 2.0; 1.0, 0.0; 0.0, 1.0];
        for l in [0.5, 1.0, 3.0] {
            let m = ridge_map(&x, Phi::Identity, &(DMatrix::identity(2, 2) * l)).unwrap();
            let expected = dmatrix![
                l + 1.0, l + 5.0, -2.0;
                2.0 * (l + 1.0), -2.0, l + 2.0
            ] / ((l + 1.0) * (l + 6.0));
            assert!(max_abs(&(m.p - expected)) < 1e-15);
        }
    }

    #[test]
    fn ols_map_is_left_inverse() {
        let x = dmatrix![1.0, 2.0; 3.0, 1.0; 0.0, 1.0; 1.0, 1.0];
        let m = ridge_map(&x, Phi::Identity, &DMatrix::zeros(2, 2)).unwrap();
        assert!(max_abs(&(&m.p * &x - DMatrix::identity(2, 2))) < 1e-14);
        let b = dvector![0.3, -1.2];
        let y = &x * &b;
        assert!((estimate(&m, &y).unwrap() - b).amax() < 1e-14);
        assert!(rss(&x, Phi::Identity, &DMatrix::zeros(2, 2), &y).unwrap() < 1e-26);
    }

    #[test]
    fn estimate_examples() {
        let x = dmatrix![1.0, 0.0; 0.0, 1.0; 0.0, 0.0];
        let m = ridge_map(&x, Phi::Identity, &DMatrix::identity(2, 2)).unwrap();
        let b = estimate(&m, &dvector![2.0, 4.0, 6.0]).unwrap();
        assert!((b - dvector![1.0, 2.0]).amax() < 1e-15);
        assert_eq!(estimate(&m, &DVector::zeros(3)).unwrap(), DVector::zeros(2));
        assert!(matches!(
            estimate(&m, &DVector::zeros(2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn estimate_at_unit_lambda() {
        let inst = instances::omega_fixes_x_instance(1.0);
        let m = ridge_map(&inst.x, Phi::Identity, &inst.k1).unwrap();
        let b = estimate(&m, &dvector![1.0, 0.0, 0.0]).unwrap();
        assert!((b - dvector![1.0 / 7.0, 2.0 / 7.0]).amax() < 1e-15);
    }

    /// Entries of the identity-weighted RSS form for the equal-RSS instance,
    /// worked out by hand from `T = I − X(XᵀX + √3 I)⁻¹Xᵀ`.
    fn equal_rss_form() -> DMatrix<f64> {
        let s = 3f64.sqrt();
        dmatrix![
            6.0 - 2.0 * s, -s, -s;
            -s, 12.0 - 5.0 * s, -6.0 + 4.0 * s;
            -s, -6.0 + 4.0 * s, 12.0 - 5.0 * s
        ] / 6.0
    }

    #[test]
    fn rss_form_matches_hand_computation() {
        let inst = instances::equal_rss_instance();
        let t = rss_form(&inst.x, Phi::Identity, &inst.k2).unwrap();
        assert!(max_abs(&(&t - equal_rss_form())) < 1e-14);
        let s = rss_form(&inst.x, Phi::Omega(&inst.omega), &inst.k1).unwrap();
        assert!(max_abs(&(&s - equal_rss_form())) < 1e-14);
        let y = dvector![1.0, 1.0, 1.0];
        let direct = rss(&inst.x, Phi::Identity, &inst.k2, &y).unwrap();
        let quad = (y.transpose() * &t * &y)[(0, 0)];
        assert!((direct - quad).abs() < 1e-14);
    }

    #[test]
    fn rss_matches_square_root_definition() {
        let x = dmatrix![1.0, 0.5; -1.0, 2.0; 0.0, 1.0; 2.0, 0.0];
        let omega = dmatrix![
            2.0, 0.3, 0.0, 0.1;
            0.3, 1.0, 0.2, 0.0;
            0.0, 0.2, 1.5, 0.4;
            0.1, 0.0, 0.4, 1.0
        ];
        let k = dmatrix![0.7, 0.2; 0.2, 0.3];
        let y = dvector![1.0, -2.0, 0.5, 3.0];
        let root = inverse_sqrt(Phi::Omega(&omega), 4).unwrap();
        let b = estimate(&ridge_map(&x, Phi::Omega(&omega), &k).unwrap(), &y).unwrap();
        let e = &root * (&y - &x * b);
        let brute = e.norm_squared();
        let got = rss(&x, Phi::Omega(&omega), &k, &y).unwrap();
        assert!((got - brute).abs() < 1e-12 * brute.max(1.0));
    }

    #[test]
    fn unpenalized_maps_are_unbiased() {
        let x = dmatrix![1.0, 2.0; 1.0, 0.0; 0.0, 1.0];
        let m = expectation_map(&x, Phi::Identity, &DMatrix::zeros(2, 2)).unwrap();
        assert!(max_abs(&(m - DMatrix::identity(2, 2))) < 1e-15);
        let beta = dvector![1.0, -3.0];
        let b = bias(&x, Phi::Identity, &DMatrix::zeros(2, 2), &beta, &tol()).unwrap();
        assert!(b.amax() < 1e-15);
        let b = bias(&x, Phi::Identity, &DMatrix::identity(2, 2), &DVector::zeros(2), &tol()).unwrap();
        assert_eq!(b, DVector::zeros(2));
    }

    #[test]
    fn expectation_maps_of_diagonal_instance() {
        let inst = instances::diag_omega_instance(3.0);
        let m1 = expectation_map(&inst.x, Phi::Omega(&inst.omega), &inst.k1).unwrap();
        let m2 = expectation_map(&inst.x, Phi::Identity, &inst.k2).unwrap();
        let half = DMatrix::identity(2, 2) * 0.5;
        assert!(max_abs(&(m1 - &half)) < 1e-15);
        assert!(max_abs(&(m2 - &half)) < 1e-15);
    }

    #[test]
    fn bias_two_ways() {
        let inst = instances::omega_fixes_x_instance(1.0);
        let beta = dvector![1.0, 1.0];
        let b = bias(&inst.x, Phi::Identity, &inst.k2, &beta, &tol()).unwrap();
        // −(XᵀX + I)⁻¹β with XᵀX + I = [[3, 2], [2, 6]].
        let expected = -dmatrix![3.0, 2.0; 2.0, 6.0].try_inverse().unwrap() * beta;
        assert!((b - expected).amax() < 1e-15);
    }

    #[test]
    fn covariance_special_cases() {
        let x = dmatrix![1.0, 2.0; 1.0, 0.0; 0.0, 1.0];
        let i3 = DMatrix::identity(3, 3);
        let z2 = DMatrix::zeros(2, 2);
        let c = estimator_covariance(&x, &i3, Phi::Identity, &z2).unwrap();
        let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
        assert!(max_abs(&(c - xtx_inv)) < 1e-15);

        let omega = dmatrix![2.0, -1.0, 0.5; -1.0, 2.0, 0.3; 0.5, 0.3, 5.0];
        let c = estimator_covariance(&x, &omega, Phi::Omega(&omega), &z2).unwrap();
        let z = crate::decomposition::null_basis(&x, &tol()).unwrap().into_inner();
        let bl = omega_blocks(&x, &z, &omega).unwrap();
        assert!(max_abs(&(c - bl.a_inverse())) < 1e-13);
    }

    #[test]
    fn d1_vanishes_when_maps_coincide() {
        for a in [0.5, 2.0, 7.3] {
            let inst = instances::diag_omega_instance(a);
            let d1 = d1_matrix(&inst, &dvector![1.0, -2.0], 0.7).unwrap();
            assert!(max_abs(&d1) < 1e-15);
            assert_eq!(d1_rank(&d1, &tol()), 0);
        }
        let x = dmatrix![1.0, 2.0; 1.0, 0.0; 0.0, 1.0];
        let k = dmatrix![1.0, 0.2; 0.2, 0.5];
        let inst = ModelInstance::new(x, DMatrix::identity(3, 3), k.clone(), k).unwrap();
        assert!(max_abs(&d1_matrix(&inst, &dvector![3.0, 1.0], 2.0).unwrap()) < 1e-15);
    }

    #[test]
    fn d1_requires_beta_and_sigma2() {
        let inst = instances::diag_omega_instance(1.0);
        assert!(matches!(d1_matrix_of(&inst), Err(Error::Missing("beta"))));
        let inst = inst.with_beta(dvector![1.0, 1.0]);
        assert!(matches!(d1_matrix_of(&inst), Err(Error::Missing("sigma2"))));
        assert!(d1_matrix_of(&inst.with_sigma2(1.0)).is_ok());
    }

    #[test]
    fn d1_rank_examples() {
        assert_eq!(d1_rank(&DMatrix::zeros(2, 2), &tol()), 0);
        assert_eq!(d1_rank(&diag(&[1.0, 0.0]), &tol()), 1);
    }
}
