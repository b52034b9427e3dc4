//! Seeded instances that satisfy (or, for the "only" kinds, satisfy one
//! condition and violate its complement) a chosen condition by construction.
//!
//! All randomness comes from `ChaCha8Rng` seeded with `GenSpec::seed` and
//! uniform draws, so a `GenSpec` maps to a bit-identical instance on every
//! platform.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decomposition::{assemble, NullBasis};
use crate::equivalence::{
    check_blue_ols, check_gre_equality_via_bias, check_rss0_equality, oracle_estimator_equality,
    oracle_rss_equality,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{is_pd, validate, ModelInstance, ToleranceConfig};

const ATTEMPTS: usize = 16;
const MAX_COND_X: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GenKind {
    /// Random SPD Ω and random PSD penalties; no condition targeted.
    RandomSPD,
    /// `Ξ = 0` with penalties that break the bias condition.
    RcondOnly,
    /// Estimators coincide.
    GreEquality,
    /// Residual sums of squares coincide.
    RssEquality,
    /// Equal biases with `Ξ ≠ 0`.
    BiasOnly,
    /// `Ω = N + Λ − NΛN`, so unpenalized RSS coincide.
    KruskalForm,
}

impl GenKind {
    pub const ALL: [GenKind; 6] = [
        GenKind::RandomSPD,
        GenKind::RcondOnly,
        GenKind::GreEquality,
        GenKind::RssEquality,
        GenKind::BiasOnly,
        GenKind::KruskalForm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GenKind::RandomSPD => "random",
            GenKind::RcondOnly => "rcond",
            GenKind::GreEquality => "gre-eq",
            GenKind::RssEquality => "rss-eq",
            GenKind::BiasOnly => "bias",
            GenKind::KruskalForm => "kruskal",
        }
    }
}

impl fmt::Display for GenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GenKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        GenKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown kind {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenSpec {
    pub n: usize,
    pub k: usize,
    pub kind: GenKind,
    pub seed: u64,
    pub scale: f64,
}

impl GenSpec {
    pub fn new(n: usize, k: usize, kind: GenKind, seed: u64) -> Self {
        Self {
            n,
            k,
            kind,
            seed,
            scale: 1.0,
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    fn check(&self) -> Result<()> {
        if !(self.k >= 1 && self.n > self.k) {
            return Err(Error::DimensionMismatch {
                context: "GenSpec",
                expected: "n > k >= 1".into(),
                found: crate::error::shape(self.n, self.k),
            });
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::InvalidTolerance(format!(
                "scale must be finite and positive, got {}",
                self.scale
            )));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.random_range(-1.0..1.0))
}

fn spd(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> DMatrix<f64> {
    let m = uniform(rng, dim, dim, scale);
    linalg::symmetrize(&(m.transpose() * m + DMatrix::identity(dim, dim) * (0.1 * scale)))
}

/// `MᵀM + 0.1·scale·I` with `M` uniform on `[−scale, scale]`; smallest
/// eigenvalue at least `0.1·scale`.
pub fn gen_random_spd(dim: usize, seed: u64, scale: f64) -> DMatrix<f64> {
    spd(&mut ChaCha8Rng::seed_from_u64(seed), dim, scale)
}

/// `BBᵀ` with `B` of `rank` columns.
fn psd_of_rank(rng: &mut ChaCha8Rng, dim: usize, rank: usize, scale: f64) -> DMatrix<f64> {
    let b = uniform(rng, dim, rank, scale.sqrt());
    linalg::symmetrize(&(&b * b.transpose()))
}

fn positive(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn design(rng: &mut ChaCha8Rng, n: usize, k: usize, scale: f64) -> DMatrix<f64> {
    loop {
        let x = uniform(rng, n, k, scale);
        let sv = linalg::singular_values(&x);
        if sv[k - 1] > 0.0 && sv[0] / sv[k - 1] <= MAX_COND_X {
            return x;
        }
    }
}

/// Orthonormal `Q` (n×k) and the matching complement `Z`.
fn orthonormal_design(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    uniform(rng, n, n, 1.0).qr().q().columns(0, k).into_owned()
}

/// Congruence `W = L⁻ᵀU` that maps `XᵀX = LLᵀ` to `I` and `K` to
/// `diag(eig)`; returns `(L·U, eig)` so that `K = (LU) diag(eig) (LU)ᵀ`.
fn pencil(m: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let l = linalg::spd_factor(m, "X^T X")?.l();
    let l_inv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(m.nrows(), m.nrows()))
        .ok_or(Error::Singular { what: "X^T X" })?;
    let reduced = linalg::symmetrize(&(&l_inv * k * l_inv.transpose()));
    let eig = reduced.symmetric_eigen();
    Ok((l * eig.eigenvectors, eig.eigenvalues))
}

/// `F diag(d) Fᵀ`.
fn sandwich(f: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    linalg::symmetrize(&(f * DMatrix::from_diagonal(d) * f.transpose()))
}

struct Draft {
    x: DMatrix<f64>,
    omega: DMatrix<f64>,
    k1: DMatrix<f64>,
    k2: DMatrix<f64>,
}

/// Builds one instance of the requested kind. Instances are redrawn until
/// they validate and the targeted condition is confirmed.
pub fn gen_instance(spec: &GenSpec) -> Result<ModelInstance> {
    gen_instance_with(spec, &ToleranceConfig::default())
}

pub fn gen_instance_with(spec: &GenSpec, tol: &ToleranceConfig) -> Result<ModelInstance> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for _ in 0..ATTEMPTS {
        let Ok(draft) = draw(&mut rng, spec, tol) else {
            continue;
        };
        let beta = DVector::from_iterator(spec.k, (0..spec.k).map(|_| rng.random_range(-1.0..1.0)));
        let sigma2 = positive(&mut rng, 0.1, 2.0);
        let Ok(inst) = ModelInstance::new(draft.x, draft.omega, draft.k1, draft.k2) else {
            continue;
        };
        let noise = DVector::from_iterator(spec.n, (0..spec.n).map(|_| rng.random_range(-1.0..1.0)));
        let y = &inst.x * &beta + noise * sigma2.sqrt();
        let inst = inst.with_beta(beta).with_sigma2(sigma2).with_y(y);
        if accepted(&inst, spec.kind, tol).unwrap_or(false) {
            return Ok(inst);
        }
    }
    Err(Error::Generation {
        kind: spec.kind,
        seed: spec.seed,
        attempts: ATTEMPTS,
    })
}

fn accepted(inst: &ModelInstance, kind: GenKind, tol: &ToleranceConfig) -> Result<bool> {
    if !validate(inst, tol)?.is_empty() {
        return Ok(false);
    }
    let basis = inst.null_basis(tol)?;
    Ok(match kind {
        GenKind::RandomSPD => true,
        GenKind::GreEquality => oracle_estimator_equality(inst, tol)?.0,
        GenKind::RssEquality => oracle_rss_equality(inst, tol)?.0,
        GenKind::KruskalForm => check_rss0_equality(&inst.x, &basis, &inst.omega, tol)?.verdict,
        GenKind::RcondOnly | GenKind::BiasOnly => {
            let v = check_gre_equality_via_bias(inst, tol)?;
            let xi = v.report.holds("Xi") == Some(true);
            let th33 = v.report.holds("Th33") == Some(true);
            let obe = check_blue_ols(&inst.x, &inst.omega, &basis, tol)?.verdict;
            match kind {
                GenKind::RcondOnly => xi && obe && !th33,
                _ => th33 && !xi && !obe,
            }
        }
    })
}

fn draw(rng: &mut ChaCha8Rng, spec: &GenSpec, tol: &ToleranceConfig) -> Result<Draft> {
    let GenSpec { n, k, scale, .. } = *spec;
    let m = n - k;
    match spec.kind {
        GenKind::RandomSPD => {
            let x = design(rng, n, k, scale);
            let omega = spd(rng, n, scale);
            let r1 = rng.random_range(0..=k);
            let r2 = rng.random_range(0..=k);
            Ok(Draft {
                x,
                omega,
                k1: psd_of_rank(rng, k, r1, scale),
                k2: psd_of_rank(rng, k, r2, scale),
            })
        }
        GenKind::RcondOnly => {
            let x = design(rng, n, k, scale);
            let z = NullBasis::canonical(&x, tol)?.into_inner();
            let gamma = spd(rng, k, scale);
            let delta = spd(rng, m, scale);
            let omega = assemble(&x, &z, &gamma, &DMatrix::zeros(k, m), &delta);
            Ok(Draft {
                x,
                omega,
                k1: spd(rng, k, scale),
                k2: spd(rng, k, scale),
            })
        }
        GenKind::BiasOnly => {
            let x = design(rng, n, k, scale);
            let omega = spd(rng, n, scale);
            let xtx = x.transpose() * &x;
            let a = linalg::symmetrize(&(x.transpose() * linalg::spd_solve(&omega, &x, "Omega")?));
            // Th33 holds iff K₁ = A(XᵀX)⁻¹K₂; both are diagonal in the
            // congruence that reduces A to I and XᵀX to diag(μ).
            let (f, mu) = pencil(&a, &xtx)?;
            let s = DVector::from_iterator(k, (0..k).map(|_| positive(rng, 0.0, 2.0) * scale));
            let k1 = sandwich(&f, &s);
            let k2 = sandwich(&f, &mu.component_mul(&s));
            Ok(Draft { x, omega, k1, k2 })
        }
        GenKind::GreEquality => gre_draft(rng, spec, tol),
        GenKind::RssEquality => rss_draft(rng, spec, tol),
        GenKind::KruskalForm => {
            let x = design(rng, n, k, scale);
            let proj = NullBasis::canonical(&x, tol)?.projector()?;
            let pert = uniform(rng, n, n, 0.5 * scale);
            let mut pert = linalg::symmetrize(&pert);
            let id = DMatrix::identity(n, n);
            for _ in 0..60 {
                let lambda = &id + &pert;
                let omega = linalg::symmetrize(&(&proj + &lambda - &proj * &lambda * &proj));
                if is_pd(&omega, tol).0 && linalg::sym_eigenvalues(&omega)[0] > 1e-3 {
                    return Ok(Draft {
                        x,
                        omega,
                        k1: psd_of_rank(rng, k, k, scale),
                        k2: psd_of_rank(rng, k, k, scale),
                    });
                }
                pert *= 0.5;
            }
            Err(Error::NotPositiveDefinite { what: "N + Lambda - N Lambda N" })
        }
    }
}

/// Three sub-families with `Ξ = 0`, each satisfying `K₁ = K₂(ΓXᵀX)⁻¹`:
/// scalar `Γ = c(XᵀX)⁻¹`, diagonal blocks with orthogonal design columns,
/// and general `Γ` with penalties built in the congruence basis.
fn gre_draft(rng: &mut ChaCha8Rng, spec: &GenSpec, tol: &ToleranceConfig) -> Result<Draft> {
    let GenSpec { n, k, scale, .. } = *spec;
    let m = n - k;
    match rng.random_range(0..3u8) {
        0 => {
            let x = design(rng, n, k, scale);
            let z = NullBasis::canonical(&x, tol)?.into_inner();
            let c = positive(rng, 0.2, 5.0);
            let gamma = linalg::spd_inverse(&(x.transpose() * &x), "X^T X")? * c;
            let delta = spd(rng, m, scale);
            let omega = assemble(&x, &z, &gamma, &DMatrix::zeros(k, m), &delta);
            let r = rng.random_range(0..=k);
            let k2 = psd_of_rank(rng, k, r, scale);
            let k1 = &k2 / c;
            Ok(Draft { x, omega, k1, k2 })
        }
        1 => {
            let q = orthonormal_design(rng, n, k);
            let d = DVector::from_iterator(k, (0..k).map(|_| positive(rng, 0.5, 2.0) * scale));
            let x = &q * DMatrix::from_diagonal(&d);
            let z = NullBasis::canonical(&x, tol)?.into_inner();
            let g = DVector::from_iterator(k, (0..k).map(|_| positive(rng, 0.1, 2.0) * scale));
            let delta = DVector::from_iterator(m, (0..m).map(|_| positive(rng, 0.1, 2.0) * scale));
            let omega = assemble(
                &x,
                &z,
                &DMatrix::from_diagonal(&g),
                &DMatrix::zeros(k, m),
                &DMatrix::from_diagonal(&delta),
            );
            let k2 = DVector::from_iterator(k, (0..k).map(|_| positive(rng, 0.0, 2.0) * scale));
            // K₁ = K₂G with G = (ΓXᵀX)⁻¹ = diag(1 / (gᵢdᵢ²)).
            let k1 = DVector::from_iterator(k, (0..k).map(|i| k2[i] / (g[i] * d[i] * d[i])));
            Ok(Draft {
                x,
                omega,
                k1: DMatrix::from_diagonal(&k1),
                k2: DMatrix::from_diagonal(&k2),
            })
        }
        _ => {
            let x = design(rng, n, k, scale);
            let z = NullBasis::canonical(&x, tol)?.into_inner();
            let gamma = spd(rng, k, scale);
            let delta = spd(rng, m, scale);
            let omega = assemble(&x, &z, &gamma, &DMatrix::zeros(k, m), &delta);
            let a = linalg::spd_inverse(&gamma, "Gamma")?;
            let (f, mu) = pencil(&a, &(x.transpose() * &x))?;
            let s = DVector::from_iterator(k, (0..k).map(|_| positive(rng, 0.0, 2.0) * scale));
            Ok(Draft {
                x,
                omega,
                k1: sandwich(&f, &s),
                k2: sandwich(&f, &mu.component_mul(&s)),
            })
        }
    }
}

/// `Ξ = 0`, `Δ = (ZᵀZ)⁻¹`, and Γ chosen per direction of the congruence
/// basis (where `XᵀX = I`, `K₂ = diag(c)`, `Γ = diag(γ)`) so that
/// `k²γ⁻¹/(γ⁻¹+k)²` agrees between the two sides.
///
/// With a shared penalty the admissible values are `γ ∈ {1, 1/c²}`. With
/// distinct penalties, any `γ < 1/r²` where `r = c/(1+c)` works with
/// `K₁`-eigenvalue `r/(√γ − rγ)`.
fn rss_draft(rng: &mut ChaCha8Rng, spec: &GenSpec, tol: &ToleranceConfig) -> Result<Draft> {
    let GenSpec { n, k, scale, .. } = *spec;
    let x = design(rng, n, k, scale);
    let z = NullBasis::canonical(&x, tol)?.into_inner();
    let xtx = x.transpose() * &x;
    let ztz_inv = linalg::spd_inverse(&(z.transpose() * &z), "Z^T Z")?;
    let mode = rng.random_range(0..3u8);
    let k2 = match mode {
        0 => DMatrix::identity(k, k) * (positive(rng, 0.2, 3.0) * scale),
        _ => spd(rng, k, scale),
    };
    let (f, c) = pencil(&xtx, &k2)?;
    // Γ = W diag(γ) Wᵀ with W = L⁻ᵀU = F⁻ᵀ.
    let f_inv_t = linalg::lu_inverse(&f, "congruence")?.transpose();
    let (gamma_diag, k1) = if mode < 2 {
        let mut g = DVector::from_element(k, 1.0);
        let nontrivial = rng.random_range(0..k);
        for i in 0..k {
            if i == nontrivial || rng.random_bool(0.5) {
                g[i] = 1.0 / (c[i] * c[i]);
            }
        }
        (g, k2.clone())
    } else {
        let mut g = DVector::zeros(k);
        let mut kappa = DVector::zeros(k);
        for i in 0..k {
            let r = c[i] / (1.0 + c[i]);
            // Upper end at 0.9/r² keeps √γ − rγ away from zero; the cap at 5
            // keeps Ω well conditioned when r is small.
            let hi = (0.9 / (r * r)).min(5.0);
            let gi = positive(rng, 0.2 * hi, hi);
            g[i] = gi;
            kappa[i] = r / (gi.sqrt() - r * gi);
        }
        (g, sandwich(&f, &kappa))
    };
    let gamma = sandwich(&f_inv_t, &gamma_diag);
    let omega = assemble(&x, &z, &gamma, &DMatrix::zeros(k, n - k), &ztz_inv);
    Ok(Draft { x, omega, k1, k2 })
}

/// Which atomic condition [`perturb`] breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// `Ω + εZZᵀ`: changes Δ only.
    Delta,
    /// `Ω + ε(XEZᵀ + ZEᵀXᵀ)`: changes Ξ only.
    Xi,
    /// `K₂ + εI`: changes the penalty relation only.
    KRelation,
}

/// Breaks exactly one condition of `inst`. For [`Fault::Xi`] the step is
/// halved until Ω stays positive definite.
pub fn perturb(
    inst: &ModelInstance,
    fault: Fault,
    eps: f64,
    tol: &ToleranceConfig,
) -> Result<ModelInstance> {
    let mut out = inst.clone();
    let z = inst.null_basis(tol)?.into_inner();
    match fault {
        Fault::Delta => {
            out.omega = linalg::symmetrize(&(&inst.omega + &z * z.transpose() * eps));
        }
        Fault::Xi => {
            let e = DMatrix::from_element(inst.k(), inst.n() - inst.k(), 1.0);
            let cross = &inst.x * e * z.transpose();
            let step = &cross + cross.transpose();
            let mut eps = eps;
            loop {
                let omega = linalg::symmetrize(&(&inst.omega + &step * eps));
                if is_pd(&omega, tol).0 {
                    out.omega = omega;
                    break;
                }
                eps *= 0.5;
                if eps == 0.0 {
                    return Err(Error::NotPositiveDefinite { what: "perturbed Omega" });
                }
            }
        }
        Fault::KRelation => {
            out.k2 = &inst.k2 + DMatrix::identity(inst.k(), inst.k()) * eps;
        }
    }
    Ok(out)
}
