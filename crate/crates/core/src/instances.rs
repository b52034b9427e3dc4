//! Small hand-checkable instances with known answers.

use nalgebra::{dmatrix, DMatrix, DVector};

use crate::model::ModelInstance;

/// `X = [e₁ e₂]`, `Ω = diag(1, 1/2, a)`, `K₁ = diag(1, 2)`, `K₂ = I`.
/// Both estimators equal `½[e₁ e₂]ᵀ` for every `a > 0`.
pub fn diag_omega_instance(a: f64) -> ModelInstance {
    ModelInstance::new(
        dmatrix![1.0, 0.0; 0.0, 1.0; 0.0, 0.0],
        DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5, a])),
        DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])),
        DMatrix::identity(2, 2),
    )
    .expect("consistent shapes")
}

/// A dense Ω with `ΩX = X`, and `K₁ = K₂ = λI`.
pub fn omega_fixes_x_instance(lambda: f64) -> ModelInstance {
    let k = DMatrix::identity(2, 2) * lambda;
    ModelInstance::new(
        dmatrix![1.0, 2.0; 1.0, 0.0; 0.0, 1.0],
        dmatrix![2.0, -1.0, -2.0; -1.0, 2.0, 2.0; -2.0, 2.0, 5.0],
        k.clone(),
        k,
    )
    .expect("consistent shapes")
}

/// Equal residual sums of squares with `K₁ = K₂ = √3·I` although Ω ≠ I.
/// Carries the non-orthonormal complement basis `Z = (1, −1, −1)ᵀ`.
pub fn equal_rss_instance() -> ModelInstance {
    let k = DMatrix::identity(2, 2) * 3f64.sqrt();
    ModelInstance::new(
        dmatrix![1.0, 1.0; 1.0, 0.0; 0.0, 1.0],
        dmatrix![3.0, 0.0, 0.0; 0.0, 2.0, 1.0; 0.0, 1.0, 2.0] / 3.0,
        k.clone(),
        k,
    )
    .expect("consistent shapes")
    .with_z(dmatrix![1.0; -1.0; -1.0])
}
