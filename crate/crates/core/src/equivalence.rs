//! Exact oracles for "for every y" equalities and checkers for the algebraic
//! conditions characterizing them.
//!
//! Oracles compare the underlying linear maps or quadratic-form matrices, so
//! they decide the statement for all `y` at once. Checkers evaluate every
//! atomic condition and report its residual, and where several equivalent
//! routes exist they are all evaluated and required to agree.

use nalgebra::{DMatrix, DVector};

use crate::decomposition::{BlockDecomposition, Frame, NullBasis};
use crate::error::{Error, Result};
use crate::estimators::{self, map_pair, Phi};
use crate::linalg;
use crate::model::{
    approx_equal, approx_zero, is_pd, is_psd, is_symmetric, CheckReport, Condition, ModelInstance,
    ToleranceConfig,
};

/// A checker's algebraic verdict next to the oracle's.
#[derive(Debug, Clone)]
pub struct EquivalenceVerdict {
    pub oracle_holds: bool,
    pub theorem_holds: bool,
    pub report: CheckReport,
    pub agreement: bool,
    pub oracle_residual: f64,
}

impl EquivalenceVerdict {
    fn new(report: CheckReport, (oracle_holds, oracle_residual): (bool, f64)) -> Self {
        let theorem_holds = report.verdict;
        Self {
            oracle_holds,
            theorem_holds,
            agreement: oracle_holds == theorem_holds,
            report,
            oracle_residual,
        }
    }
}

/// Outcome of a one-directional check: when the estimators coincide for
/// idempotent penalties, BLUE must equal OLS and the penalties must agree.
#[derive(Debug, Clone)]
pub struct NecessityReport {
    pub antecedent: bool,
    pub blue_ols: bool,
    pub penalties_equal: bool,
    /// Conditions `R2E=>OBE` and `R2E=>K1=K2`, each `!antecedent || consequent`.
    pub report: CheckReport,
}

/// Frame and blocks of an instance, computed once per checker call.
struct Ctx<'a> {
    inst: &'a ModelInstance,
    frame: Frame,
    blocks: BlockDecomposition,
    tol: ToleranceConfig,
}

impl<'a> Ctx<'a> {
    fn new(inst: &'a ModelInstance, tol: &ToleranceConfig) -> Result<Self> {
        inst.check_dimensions()?;
        let basis = inst.null_basis(tol)?;
        Self::with_basis(inst, &basis, tol)
    }

    fn with_basis(inst: &'a ModelInstance, basis: &NullBasis, tol: &ToleranceConfig) -> Result<Self> {
        let frame = Frame::new(&inst.x, basis.z())?;
        let blocks = BlockDecomposition::from_frame(&frame, &inst.omega)?;
        Ok(Self {
            inst,
            frame,
            blocks,
            tol: *tol,
        })
    }

    fn xi_zero(&self) -> Condition {
        let scale = self.frame.xi_scale(&self.inst.omega);
        Condition::new("Xi", approx_zero(&self.blocks.xi, scale, &self.tol))
    }

    /// `ZᵀΩZ ≈ ZᵀZ`, the form of `Δ = (ZᵀZ)⁻¹` that does not depend on the
    /// choice of `Z`.
    fn delta_cond(&self, name: &str) -> Result<Condition> {
        let z = &self.frame.z;
        let ztoz = linalg::symmetrize(&(z.transpose() * &self.inst.omega * z));
        Ok(Condition::new(name, approx_equal(&ztoz, &self.frame.ztz, &self.tol)?))
    }

    /// `XᵀX·A⁻¹·K₁ = K₂`.
    fn th33(&self) -> Result<Condition> {
        let lhs = &self.frame.xtx * self.blocks.a_inverse() * &self.inst.k1;
        Ok(Condition::new("Th33", approx_equal(&lhs, &self.inst.k2, &self.tol)?))
    }

    /// `A + K₁EK₁ = (I − K₁E)Γ⁻¹(I − EK₁)` with `E = ΞΔ⁻¹Ξᵀ`.
    fn pr35(&self) -> Result<Condition> {
        let k1 = &self.inst.k1;
        let e = self.blocks.xi_delta_xi();
        let id = DMatrix::identity(k1.nrows(), k1.nrows());
        let gamma_inv = linalg::spd_inverse(&self.blocks.gamma, "Gamma")?;
        let lhs = &self.blocks.a + k1 * &e * k1;
        let rhs = (&id - k1 * &e) * gamma_inv * (&id - &e * k1);
        Ok(Condition::new("Pr35", approx_equal(&lhs, &rhs, &self.tol)?))
    }

    /// Direct comparison of the two expectation maps `P₁X` and `P₂X`.
    fn bias_maps(&self, p1: &DMatrix<f64>, p2: &DMatrix<f64>) -> Result<Condition> {
        let x = &self.inst.x;
        Ok(Condition::new(
            "bias_maps",
            approx_equal(&(p1 * x), &(p2 * x), &self.tol)?,
        ))
    }

    fn covariances(&self, p1: &DMatrix<f64>, p2: &DMatrix<f64>) -> Result<Condition> {
        let om = &self.inst.omega;
        let c1 = linalg::symmetrize(&(p1 * om * p1.transpose()));
        let c2 = linalg::symmetrize(&(p2 * om * p2.transpose()));
        Ok(Condition::new("covariances", approx_equal(&c1, &c2, &self.tol)?))
    }
}

fn disagreement(check: &'static str, detail: String) -> Error {
    Error::RouteDisagreement { check, detail }
}

fn require(ok: bool, check: &'static str, reason: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Precondition {
            check,
            reason: reason(),
        })
    }
}

/// `β̂(Ω, K₁) = β̂(I, K₂)` for every `y`, decided by comparing the maps.
pub fn oracle_estimator_equality(inst: &ModelInstance, tol: &ToleranceConfig) -> Result<(bool, f64)> {
    inst.check_dimensions()?;
    let (p1, p2) = map_pair(inst)?;
    approx_equal(&p1.p, &p2.p, tol)
}

/// `RSS(Ω, K₁) = RSS(I, K₂)` for every `y`, decided by comparing the
/// quadratic-form matrices `SᵀΩ⁻¹S` and `TT`.
pub fn oracle_rss_equality(inst: &ModelInstance, tol: &ToleranceConfig) -> Result<(bool, f64)> {
    inst.check_dimensions()?;
    let s = estimators::rss_form(&inst.x, Phi::Omega(&inst.omega), &inst.k1)?;
    let t = estimators::rss_form(&inst.x, Phi::Identity, &inst.k2)?;
    approx_equal(&s, &t, tol)
}

/// BLUE equals OLS. Three equivalent routes are evaluated: `Ξ ≈ 0`,
/// `rank(X | ΩX) = k`, and a least-squares `G` with `ΩXG ≈ X`.
pub fn check_blue_ols(
    x: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    basis: &NullBasis,
    tol: &ToleranceConfig,
) -> Result<CheckReport> {
    let (n, k) = x.shape();
    linalg::ensure_shape(omega, n, n, "Omega")?;
    let frame = Frame::new(x, basis.z())?;
    let blocks = BlockDecomposition::from_frame(&frame, omega)?;
    blue_ols_report(x, omega, &frame, &blocks, k, tol)
}

/// Least-squares `G` with `ΩX·G ≈ X`, and the condition `X ∈ C(ΩX)`.
///
/// The residual is the projection `‖X − QQᵀX‖` from a QR factorization of
/// `ΩX`, which stays accurate when `ΩX` is badly conditioned; multiplying
/// `ΩX` by the solved `G` would amplify roundoff by its condition number.
fn range_fit(
    ox: &DMatrix<f64>,
    x: &DMatrix<f64>,
    tol: &ToleranceConfig,
) -> Result<(Condition, DMatrix<f64>)> {
    let qr = ox.clone().qr();
    let q = qr.q();
    let qtx = q.transpose() * x;
    let g = qr
        .r()
        .solve_upper_triangular(&qtx)
        .unwrap_or_else(|| linalg::lstsq(ox, x));
    let fit = Condition::new("X=OmegaXG", approx_equal(x, &(&q * qtx), tol)?);
    Ok((fit, g))
}

fn blue_ols_report(
    x: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    frame: &Frame,
    blocks: &BlockDecomposition,
    k: usize,
    tol: &ToleranceConfig,
) -> Result<CheckReport> {
    let xi = Condition::new(
        "Xi",
        approx_zero(&blocks.xi, frame.xi_scale(omega), tol),
    );

    // An orthonormal basis of C(X) next to unit-norm columns of ΩX: the
    // (k+1)-th singular value then only sees components of ΩX outside C(X),
    // not the conditioning of X or dependence among the columns of ΩX.
    let ox = omega * x;
    let qx = x.clone().qr().q();
    let mut unit = ox.clone();
    for mut col in unit.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    let sv = linalg::singular_values(&linalg::hcat(&qx, &unit));
    let spread = sv.get(k).copied().unwrap_or(0.0) / sv[0];
    let rank = sv.iter().filter(|&&s| s > tol.rank_rel * sv[0]).count();
    let colspace = Condition {
        name: "column_space".into(),
        residual: spread,
        holds: rank == k,
    };

    let (fit, g) = range_fit(&ox, x, tol)?;

    if xi.holds != colspace.holds || xi.holds != fit.holds {
        return Err(disagreement(
            "blue_ols",
            format!(
                "Xi {} ({:e}), column space {} ({:e}), X=OmegaXG {} ({:e})",
                xi.holds, xi.residual, colspace.holds, colspace.residual, fit.holds, fit.residual
            ),
        ));
    }
    let witness = xi.holds.then_some(g);
    Ok(CheckReport::new(vec![xi, colspace, fit], *tol, witness))
}

/// Estimator equality through `X = ΩXG`, `K₁ = K₂G` with `G = (ΓXᵀX)⁻¹`.
pub fn check_gre_equality(inst: &ModelInstance, tol: &ToleranceConfig) -> Result<EquivalenceVerdict> {
    let ctx = Ctx::new(inst, tol)?;
    let xi = ctx.xi_zero();
    let ox = &inst.omega * &inst.x;
    let (fit, kg, g) = if xi.holds {
        // Both equalities are tested multiplied through by G⁻¹ = ΓXᵀX, which
        // needs no inverse: ΩX = XΓXᵀX and K₁ΓXᵀX = K₂.
        let g_inv = &ctx.blocks.gamma * &ctx.frame.xtx;
        let fit = Condition::new("X=OmegaXG", approx_equal(&ox, &(&inst.x * &g_inv), tol)?);
        let kg = Condition::new("K1=K2G", approx_equal(&(&inst.k1 * &g_inv), &inst.k2, tol)?);
        (fit, kg, linalg::lu_inverse(&g_inv, "Gamma X^T X")?)
    } else {
        // No G exists; the least-squares fit only gives the residuals a value.
        let (fit, g) = range_fit(&ox, &inst.x, tol)?;
        let kg = Condition::new("K1=K2G", approx_equal(&inst.k1, &(&inst.k2 * &g), tol)?);
        (fit, kg, g)
    };
    let holds = xi.holds && fit.holds && kg.holds;
    let report = CheckReport::new(vec![xi, fit, kg], *tol, holds.then_some(g));
    Ok(EquivalenceVerdict::new(
        report,
        oracle_estimator_equality(inst, tol)?,
    ))
}

/// Estimator equality through `Ξ ≈ 0` together with equal biases.
pub fn check_gre_equality_via_bias(
    inst: &ModelInstance,
    tol: &ToleranceConfig,
) -> Result<EquivalenceVerdict> {
    let ctx = Ctx::new(inst, tol)?;
    let report = CheckReport::new(vec![ctx.xi_zero(), ctx.th33()?], *tol, None);
    Ok(EquivalenceVerdict::new(
        report,
        oracle_estimator_equality(inst, tol)?,
    ))
}

/// Equal expectations, `XᵀX·A⁻¹·K₁ = K₂`, cross-checked against a direct
/// comparison of the expectation maps.
pub fn check_bias_equality(inst: &ModelInstance, tol: &ToleranceConfig) -> Result<CheckReport> {
    let ctx = Ctx::new(inst, tol)?;
    let (p1, p2) = map_pair(inst)?;
    let th33 = ctx.th33()?;
    let maps = ctx.bias_maps(&p1.p, &p2.p)?;
    if th33.holds != maps.holds {
        return Err(disagreement(
            "bias",
            format!(
                "Th33 {} ({:e}) but expectation maps {} ({:e})",
                th33.holds, th33.residual, maps.holds, maps.residual
            ),
        ));
    }
    Ok(CheckReport::new(vec![th33, maps], *tol, None))
}

/// Equal expectations and equal covariances.
pub fn check_bias_cov_equality(inst: &ModelInstance, tol: &ToleranceConfig) -> Result<CheckReport> {
    let ctx = Ctx::new(inst, tol)?;
    let (p1, p2) = map_pair(inst)?;
    let th33 = ctx.th33()?;
    let pr35 = ctx.pr35()?;
    let maps = ctx.bias_maps(&p1.p, &p2.p)?;
    let cov = ctx.covariances(&p1.p, &p2.p)?;
    if (th33.holds && pr35.holds) != (maps.holds && cov.holds) {
        return Err(disagreement(
            "bias_cov",
            format!(
                "Th33 {} Pr35 {} but expectation maps {} covariances {}",
                th33.holds, pr35.holds, maps.holds, cov.holds
            ),
        ));
    }
    Ok(CheckReport::new(vec![th33, pr35, maps, cov], *tol, None))
}

/// `d₁ ≈ 0` at every sampled `(βᵢ, σ²ᵢ)`, cross-checked against
/// [`check_bias_cov_equality`].
pub fn check_d1_zero(
    inst: &ModelInstance,
    betas: &[DVector<f64>],
    sigma2s: &[f64],
    tol: &ToleranceConfig,
) -> Result<CheckReport> {
    require(!betas.is_empty(), "d1", || "no (beta, sigma2) samples".into())?;
    require(betas.len() == sigma2s.len(), "d1", || {
        format!("{} beta samples but {} sigma2 samples", betas.len(), sigma2s.len())
    })?;
    require(sigma2s.iter().all(|&s| s > 0.0), "d1", || {
        "sigma2 samples must be positive".into()
    })?;
    inst.check_dimensions()?;
    let (p1, p2) = map_pair(inst)?;
    let pn = linalg::fro(&p1.p) + linalg::fro(&p2.p);
    let omega_n = linalg::fro(&inst.omega);
    let mut conditions = Vec::with_capacity(betas.len());
    for (i, (beta, &s2)) in betas.iter().zip(sigma2s).enumerate() {
        let d1 = estimators::d1_from_maps(inst, &p1.p, &p2.p, beta, s2)?;
        let xb = (&inst.x * beta).norm_squared();
        let scale = pn * pn * (xb + s2 * omega_n);
        conditions.push(Condition::new(format!("d1[{i}]"), approx_zero(&d1, scale, tol)));
    }
    let report = CheckReport::new(conditions, *tol, None);
    let moments = check_bias_cov_equality(inst, tol)?;
    if moments.verdict != report.verdict {
        return Err(disagreement(
            "d1",
            format!(
                "d1 zero {} but bias and covariance equality {}",
                report.verdict, moments.verdict
            ),
        ));
    }
    Ok(report)
}

fn is_idempotent_psd(k: &DMatrix<f64>, tol: &ToleranceConfig) -> Result<bool> {
    Ok(is_symmetric(k, tol).0 && is_psd(k, tol).0 && approx_equal(&(k * k), k, tol)?.0)
}

/// For idempotent PSD penalties: estimator equality implies BLUE = OLS and
/// `K₁ = K₂`. Only the implication is reported.
pub fn check_idempotent_necessity(
    inst: &ModelInstance,
    tol: &ToleranceConfig,
) -> Result<NecessityReport> {
    inst.check_dimensions()?;
    require(is_idempotent_psd(&inst.k1, tol)?, "idempotent", || {
        "K1 is not a symmetric idempotent PSD matrix".into()
    })?;
    require(is_idempotent_psd(&inst.k2, tol)?, "idempotent", || {
        "K2 is not a symmetric idempotent PSD matrix".into()
    })?;
    let (antecedent, oracle_r) = oracle_estimator_equality(inst, tol)?;
    let basis = inst.null_basis(tol)?;
    let obe = check_blue_ols(&inst.x, &inst.omega, &basis, tol)?;
    let (penalties_equal, k_r) = approx_equal(&inst.k1, &inst.k2, tol)?;
    let obe_r = obe.condition("Xi").map_or(0.0, |c| c.residual);
    let conditions = vec![
        Condition::new("R2E=>OBE", (!antecedent || obe.verdict, if antecedent { obe_r } else { oracle_r })),
        Condition::new("R2E=>K1=K2", (!antecedent || penalties_equal, if antecedent { k_r } else { oracle_r })),
    ];
    Ok(NecessityReport {
        antecedent,
        blue_ols: obe.verdict,
        penalties_equal,
        report: CheckReport::new(conditions, *tol, None),
    })
}

/// Equal unpenalized RSS: `ZᵀΩZ ≈ ZᵀZ`, cross-checked against the RSS
/// oracle at `K₁ = K₂ = 0` and against `NΩN ≈ N`.
pub fn check_rss0_equality(
    x: &DMatrix<f64>,
    basis: &NullBasis,
    omega: &DMatrix<f64>,
    tol: &ToleranceConfig,
) -> Result<CheckReport> {
    let (n, k) = x.shape();
    linalg::ensure_shape(omega, n, n, "Omega")?;
    let frame = Frame::new(x, basis.z())?;
    let z = &frame.z;
    let ztoz = linalg::symmetrize(&(z.transpose() * omega * z));
    let delta = Condition::new("Delta", approx_equal(&ztoz, &frame.ztz, tol)?);

    let zero = DMatrix::zeros(k, k);
    let s = estimators::rss_form(x, Phi::Omega(omega), &zero)?;
    let t = estimators::rss_form(x, Phi::Identity, &zero)?;
    let oracle = Condition::new("RSS_oracle", approx_equal(&s, &t, tol)?);

    let proj = frame.projector();
    let non = linalg::symmetrize(&(&proj * omega * &proj));
    let kruskal = Condition::new("Kruskal", approx_equal(&non, &proj, tol)?);

    if delta.holds != oracle.holds || delta.holds != kruskal.holds {
        return Err(disagreement(
            "rss0",
            format!(
                "Delta {} ({:e}), RSS oracle {} ({:e}), Kruskal {} ({:e})",
                delta.holds, delta.residual, oracle.holds, oracle.residual, kruskal.holds,
                kruskal.residual
            ),
        ));
    }
    Ok(CheckReport::new(vec![delta, oracle, kruskal], *tol, None))
}

/// `K(A+K)⁻¹M(A+K)⁻¹K` for SPD `M` and PSD `K`.
fn penalized_sandwich(m: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let w = linalg::spd_solve(&(m + k), k, "M + K")?;
    Ok(linalg::symmetrize(&(w.transpose() * m * w)))
}

/// Equal penalized RSS through three conditions on `(K₁, K₂, Ξ, Δ)`.
pub fn check_rss_equality(inst: &ModelInstance, tol: &ToleranceConfig) -> Result<EquivalenceVerdict> {
    let ctx = Ctx::new(inst, tol)?;
    let (k1, k2) = (&inst.k1, &inst.k2);
    let xtx = &ctx.frame.xtx;

    let lhs = penalized_sandwich(&ctx.blocks.a, k1)?;
    let rhs = penalized_sandwich(xtx, k2)?;
    let c21 = Condition::new("Mcond21", approx_equal(&lhs, &rhs, tol)?);

    let v = k2 * linalg::spd_solve(&(xtx + k2), k2, "X^T X + K2")?;
    let scale = linalg::fro(&v) * ctx.frame.xi_scale(&inst.omega);
    let c22 = Condition::new("Mcond22", approx_zero(&(&v * &ctx.blocks.xi), scale, tol));

    let c23 = ctx.delta_cond("Mcond23")?;
    let report = CheckReport::new(vec![c21, c22, c23], *tol, None);
    Ok(EquivalenceVerdict::new(report, oracle_rss_equality(inst, tol)?))
}

/// Equal penalized RSS for a shared SPD penalty `K`: `Ξ ≈ 0`, `ZᵀΩZ ≈ ZᵀZ`
/// (jointly, `Ω = XΓXᵀ + Z(ZᵀZ)⁻¹Zᵀ`), and
/// `K(Γ − (XᵀX)⁻¹)K = XᵀX − Γ⁻¹`.
pub fn check_rss_equality_same_k(
    inst: &ModelInstance,
    tol: &ToleranceConfig,
) -> Result<EquivalenceVerdict> {
    let ctx = Ctx::new(inst, tol)?;
    let (same, r) = approx_equal(&inst.k1, &inst.k2, tol)?;
    require(same, "rss_same_k", || format!("K1 differs from K2 (residual {r:e})"))?;
    let k = linalg::symmetrize(&((&inst.k1 + &inst.k2) * 0.5));
    require(is_pd(&k, tol).0, "rss_same_k", || "K is not positive definite".into())?;

    let xi = ctx.xi_zero();
    let delta = ctx.delta_cond("Delta")?;

    let x = &inst.x;
    let gamma = &ctx.blocks.gamma;
    let split = x * gamma * x.transpose() + ctx.frame.projector();
    let c432 = Condition::new("Cr432", approx_equal(&inst.omega, &split, tol)?);
    if c432.holds != (xi.holds && delta.holds) {
        return Err(disagreement(
            "rss_same_k",
            format!(
                "Cr432 {} ({:e}) but Xi {} and Delta {}",
                c432.holds, c432.residual, xi.holds, delta.holds
            ),
        ));
    }

    let gamma_inv = linalg::spd_inverse(gamma, "Gamma")?;
    let lhs = &k * (gamma - &ctx.frame.xtx_inv) * &k;
    let rhs = &ctx.frame.xtx - gamma_inv;
    let c431 = Condition::new("Cr431", approx_equal(&lhs, &rhs, tol)?);

    let report = CheckReport::new(vec![xi, delta, c432, c431], *tol, None);
    Ok(EquivalenceVerdict::new(report, oracle_rss_equality(inst, tol)?))
}

/// Estimator equality for SPD penalties: `X = ΩXK₂⁻¹K₁`, and additionally
/// `X = ΩX` when `K₁ ≈ K₂`.
pub fn check_pd_special(inst: &ModelInstance, tol: &ToleranceConfig) -> Result<EquivalenceVerdict> {
    inst.check_dimensions()?;
    require(is_pd(&inst.k1, tol).0, "pd_special", || "K1 is not positive definite".into())?;
    require(is_pd(&inst.k2, tol).0, "pd_special", || "K2 is not positive definite".into())?;
    let x = &inst.x;
    let ox = &inst.omega * x;
    let ratio = linalg::spd_solve(&inst.k2, &inst.k1, "K2")?;
    let mut conditions = vec![Condition::new(
        "X=OmegaXK2^-1K1",
        approx_equal(x, &(&ox * ratio), tol)?,
    )];
    if approx_equal(&inst.k1, &inst.k2, tol)?.0 {
        conditions.push(Condition::new("X=OmegaX", approx_equal(x, &ox, tol)?));
    }
    let report = CheckReport::new(conditions, *tol, None);
    Ok(EquivalenceVerdict::new(
        report,
        oracle_estimator_equality(inst, tol)?,
    ))
}

/// Block decomposition of an instance in its own basis (user-supplied or
/// canonical).
pub fn instance_blocks(inst: &ModelInstance, tol: &ToleranceConfig) -> Result<BlockDecomposition> {
    Ok(Ctx::new(inst, tol)?.blocks)
}
