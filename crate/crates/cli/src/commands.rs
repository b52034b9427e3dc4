use std::path::Path;

use clap::ValueEnum;
use nalgebra::DMatrix;
use ridge_equiv::{
    approx_equal, check_bias_cov_equality, check_bias_equality, check_blue_ols, check_d1_zero,
    check_gre_equality, check_gre_equality_via_bias, check_idempotent_necessity,
    check_pd_special, check_rss0_equality, check_rss_equality, check_rss_equality_same_k,
    d1_matrix, d1_rank, estimate as apply_map, gen_instance_with, omega_blocks,
    omega_inverse_via_blocks, oracle_estimator_equality, oracle_rss_equality,
    reconstruct_omega, ridge_map, rss, validate, CheckReport, Error, EquivalenceVerdict, GenKind,
    GenSpec, ModelInstance, Phi, ToleranceConfig,
};

use crate::model_file::ModelFile;
use crate::report::{BlocksJson, ConditionJson, OracleJson, Report};
use crate::sci::{self, Sci};
use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhiArg {
    Identity,
    Omega,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PenaltyArg {
    K1,
    K2,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum What {
    Obe,
    Gre,
    GreBias,
    Bias,
    BiasCov,
    D1,
    Idem,
    Rss0,
    Rss,
    RssSameK,
    PdSpecial,
    All,
}

impl What {
    const CHECKS: [What; 11] = [
        What::Obe,
        What::Gre,
        What::GreBias,
        What::Bias,
        What::BiasCov,
        What::D1,
        What::Idem,
        What::Rss0,
        What::Rss,
        What::RssSameK,
        What::PdSpecial,
    ];

    fn name(self) -> &'static str {
        match self {
            What::Obe => "obe",
            What::Gre => "gre",
            What::GreBias => "gre-bias",
            What::Bias => "bias",
            What::BiasCov => "bias-cov",
            What::D1 => "d1",
            What::Idem => "idem",
            What::Rss0 => "rss0",
            What::Rss => "rss",
            What::RssSameK => "rss-same-k",
            What::PdSpecial => "pd-special",
            What::All => "all",
        }
    }
}

/// A finished command: the report and its exit code (0, 1 or 4).
pub struct Outcome {
    pub report: Report,
    pub code: u8,
}

impl Outcome {
    fn new(report: Report) -> Self {
        let code = if report.agreement == Some(false) {
            4
        } else if report.verdict {
            0
        } else {
            1
        };
        Self { report, code }
    }
}

/// Loads a model file and rejects it unless every invariant holds.
pub fn load(path: &Path, tol: &ToleranceConfig) -> Result<ModelInstance, Failure> {
    let inst = ModelFile::load(path)?.to_instance()?;
    let violations = validate(&inst, tol)?;
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|v| format!("  {v}")).collect();
        return Err(Failure::invalid(format!("invalid model:\n{}", list.join("\n"))));
    }
    Ok(inst)
}

pub fn estimate(
    path: &Path,
    phi: PhiArg,
    penalty: PenaltyArg,
    tol: &ToleranceConfig,
) -> Result<Outcome, Failure> {
    let inst = load(path, tol)?;
    let y = inst
        .y
        .as_ref()
        .ok_or_else(|| Failure::usage("model file has no \"y\"; estimate needs observations"))?;
    let k = match penalty {
        PenaltyArg::K1 => inst.k1.clone(),
        PenaltyArg::K2 => inst.k2.clone(),
        PenaltyArg::Zero => DMatrix::zeros(inst.k(), inst.k()),
    };
    let phi = match phi {
        PhiArg::Identity => Phi::Identity,
        PhiArg::Omega => Phi::Omega(&inst.omega),
    };
    let map = ridge_map(&inst.x, phi, &k)?;
    let (holds, residual) = map.check(&inst.x, phi, tol)?;

    let mut report = Report::new("estimate", tol);
    report.conditions.push(ConditionJson::new("ridge_map", holds, residual));
    report.verdict = holds;
    report.estimate = Some(sci::dvector(&apply_map(&map, y)?));
    report.rss = Some(Sci(rss(&inst.x, phi, &k, y)?));
    Ok(Outcome::new(report))
}

/// One checker's result in a common shape.
struct Checked {
    verdict: bool,
    conditions: Vec<ConditionJson>,
    oracle: Option<(bool, f64)>,
    witness: Option<DMatrix<f64>>,
    d1_rank: Option<usize>,
}

impl Checked {
    fn plain(r: CheckReport) -> Self {
        Self {
            verdict: r.verdict,
            conditions: r.conditions.iter().map(|c| ConditionJson::prefixed("", c)).collect(),
            oracle: None,
            witness: r.witness,
            d1_rank: None,
        }
    }

    fn with_oracle(v: EquivalenceVerdict) -> Self {
        Self {
            oracle: Some((v.oracle_holds, v.oracle_residual)),
            ..Self::plain(v.report)
        }
    }

    fn agreement(&self) -> Option<bool> {
        self.oracle.map(|(o, _)| o == self.verdict)
    }
}

fn d1_sample(inst: &ModelInstance) -> Result<(nalgebra::DVector<f64>, f64), Failure> {
    match (&inst.beta, inst.sigma2) {
        (Some(b), Some(s)) => Ok((b.clone(), s)),
        _ => Err(Failure::missing("d1 needs \"beta\" and \"sigma2\" in the model file")),
    }
}

fn run_check(inst: &ModelInstance, what: What, tol: &ToleranceConfig) -> Result<Checked, Failure> {
    let basis = || inst.null_basis(tol);
    Ok(match what {
        What::Obe => Checked::plain(check_blue_ols(&inst.x, &inst.omega, &basis()?, tol)?),
        What::Gre => Checked::with_oracle(check_gre_equality(inst, tol)?),
        What::GreBias => Checked::with_oracle(check_gre_equality_via_bias(inst, tol)?),
        What::Bias => Checked::plain(check_bias_equality(inst, tol)?),
        What::BiasCov => Checked::plain(check_bias_cov_equality(inst, tol)?),
        What::D1 => {
            let (beta, s2) = d1_sample(inst)?;
            let rank = d1_rank(&d1_matrix(inst, &beta, s2)?, tol);
            Checked {
                d1_rank: Some(rank),
                ..Checked::plain(check_d1_zero(inst, &[beta], &[s2], tol)?)
            }
        }
        What::Idem => Checked::plain(check_idempotent_necessity(inst, tol)?.report),
        What::Rss0 => Checked::plain(check_rss0_equality(&inst.x, &basis()?, &inst.omega, tol)?),
        What::Rss => Checked::with_oracle(check_rss_equality(inst, tol)?),
        What::RssSameK => Checked::with_oracle(check_rss_equality_same_k(inst, tol)?),
        What::PdSpecial => Checked::with_oracle(check_pd_special(inst, tol)?),
        What::All => unreachable!("expanded by the caller"),
    })
}

pub fn check(path: &Path, what: What, tol: &ToleranceConfig) -> Result<Outcome, Failure> {
    let inst = load(path, tol)?;
    let mut report = Report::new("check", tol);
    report.what = Some(what.name());
    if what == What::All {
        return check_all(&inst, report, tol);
    }
    let c = run_check(&inst, what, tol)?;
    report.verdict = c.verdict;
    report.agreement = c.agreement();
    report.oracle = c.oracle.map(|(holds, r)| OracleJson {
        holds,
        residual: Sci(r),
    });
    report.d1_rank = c.d1_rank;
    report.conditions = c.conditions;
    Ok(Outcome::new(report.witness(c.witness.as_ref())))
}

/// Every checker whose preconditions hold, both oracles, and agreement
/// across all of them. The verdict is the conjunction of the checker
/// verdicts.
fn check_all(inst: &ModelInstance, mut report: Report, tol: &ToleranceConfig) -> Result<Outcome, Failure> {
    let mut verdict = true;
    let mut agreement = true;
    for what in What::CHECKS {
        let c = match run_check(inst, what, tol) {
            Ok(c) => c,
            Err(f) if f.skippable => continue,
            Err(f) => return Err(f),
        };
        let worst = c
            .conditions
            .iter()
            .map(|c| c.residual.0)
            .fold(0.0, f64::max);
        report.conditions.push(ConditionJson::new(what.name(), c.verdict, worst));
        verdict &= c.verdict;
        agreement &= c.agreement().unwrap_or(true);
        for cond in c.conditions {
            let name = format!("{}/{}", what.name(), cond.name);
            report.conditions.push(ConditionJson { name, ..cond });
        }
        if c.d1_rank.is_some() {
            report.d1_rank = c.d1_rank;
        }
    }
    let (e, er) = oracle_estimator_equality(inst, tol)?;
    let (r, rr) = oracle_rss_equality(inst, tol)?;
    report.conditions.push(ConditionJson::new("oracle/estimator", e, er));
    report.conditions.push(ConditionJson::new("oracle/rss", r, rr));
    report.verdict = verdict;
    report.agreement = Some(agreement);
    Ok(Outcome::new(report))
}

pub fn decompose(path: &Path, tol: &ToleranceConfig) -> Result<Outcome, Failure> {
    let inst = load(path, tol)?;
    let basis = inst.null_basis(tol)?;
    let z = basis.z();
    let n = inst.n();
    let bl = omega_blocks(&inst.x, z, &inst.omega)?;
    let rec = reconstruct_omega(&inst.x, z, &bl)?;
    let (rec_ok, rec_r) = approx_equal(&rec, &inst.omega, tol)?;
    let inv = omega_inverse_via_blocks(&inst.x, z, &bl)?;
    let (inv_ok, inv_r) = approx_equal(&(inv * &inst.omega), &DMatrix::identity(n, n), tol)?;
    let inner = bl.check_invariants(tol)?;

    let mut report = Report::new("decompose", tol);
    report.conditions = inner.conditions.iter().map(|c| ConditionJson::prefixed("", c)).collect();
    report.conditions.push(ConditionJson::new("reconstruction", rec_ok, rec_r));
    report.conditions.push(ConditionJson::new("inverse", inv_ok, inv_r));
    report.verdict = inner.verdict && rec_ok && inv_ok;
    report.blocks = Some(BlocksJson::new(&bl, rec_r, inv_r));
    Ok(Outcome::new(report))
}

pub fn generate(
    kind: GenKind,
    n: usize,
    k: usize,
    seed: u64,
    out: Option<&Path>,
    tol: &ToleranceConfig,
) -> Result<(), Failure> {
    if !(k >= 1 && n > k) {
        return Err(Failure::usage(format!("need n > k >= 1, got n = {n}, k = {k}")));
    }
    let inst = gen_instance_with(&GenSpec::new(n, k, kind, seed), tol).map_err(|e| Failure {
        code: 5,
        message: format!("generation failed for kind {kind}, seed {seed}: {e}"),
        skippable: false,
    })?;
    let file = ModelFile::from_instance(&inst);
    match out {
        Some(path) => file.write(path),
        None => crate::emit(&file.to_json()?),
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Precondition { .. } | Error::Missing(_) | Error::InvalidTolerance(_) => 2,
            Error::DimensionMismatch { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::Singular { .. }
            | Error::RankDeficient { .. }
            | Error::InvalidNullBasis(_) => 3,
            Error::RouteDisagreement { .. } => 4,
            Error::Generation { .. } => 5,
        };
        Failure {
            code,
            skippable: matches!(e, Error::Precondition { .. } | Error::Missing(_)),
            message: e.to_string(),
        }
    }
}
