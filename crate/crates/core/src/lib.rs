//! General ridge estimators for the linear model `y = Xβ + ε`,
//! `Cov(ε) = σ²Ω`, and exact decision procedures for when the Ω-weighted and
//! the unweighted estimator (or their residual sums of squares) coincide.

pub mod decomposition;
pub mod equivalence;
pub mod error;
pub mod estimators;
pub mod generators;
pub mod instances;
mod linalg;
pub mod model;

pub use decomposition::{
    null_basis, omega_blocks, omega_inverse_via_blocks, reconstruct_omega, BlockDecomposition,
    NullBasis,
};
pub use equivalence::{
    check_bias_cov_equality, check_bias_equality, check_blue_ols, check_d1_zero,
    check_gre_equality, check_gre_equality_via_bias, check_idempotent_necessity,
    check_pd_special, check_rss0_equality, check_rss_equality, check_rss_equality_same_k,
    instance_blocks, oracle_estimator_equality, oracle_rss_equality, EquivalenceVerdict,
    NecessityReport,
};
pub use error::{Error, Result};
pub use estimators::{
    bias, d1_matrix, d1_matrix_of, d1_rank, estimate, estimator_covariance, expectation_map,
    ridge_map, rss, rss_form, Phi, PhiKind, ResidualMap, RidgeMap,
};
pub use generators::{gen_instance, gen_instance_with, gen_random_spd, perturb, Fault, GenKind, GenSpec};
pub use model::{
    approx_equal, validate, CheckReport, Condition, Invariant, ModelInstance, ToleranceConfig,
    Violation,
};
