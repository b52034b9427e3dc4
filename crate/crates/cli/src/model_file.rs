use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ridge_equiv::ModelInstance;
use serde::{Deserialize, Serialize};

use crate::sci;
use crate::Failure;

/// On-disk model: matrices as row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub n: usize,
    pub k: usize,
    #[serde(rename = "X", serialize_with = "sci::rows")]
    pub x: Vec<Vec<f64>>,
    #[serde(rename = "Omega", serialize_with = "sci::rows")]
    pub omega: Vec<Vec<f64>>,
    #[serde(rename = "K1", serialize_with = "sci::rows")]
    pub k1: Vec<Vec<f64>>,
    #[serde(rename = "K2", serialize_with = "sci::rows")]
    pub k2: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none", serialize_with = "sci::opt_vector")]
    pub y: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none", serialize_with = "sci::opt_vector")]
    pub beta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none", serialize_with = "sci::opt_scalar")]
    pub sigma2: Option<f64>,
    #[serde(rename = "Z", default, skip_serializing_if = "Option::is_none", serialize_with = "sci::opt_rows")]
    pub z: Option<Vec<Vec<f64>>>,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn to_matrix(rows: &[Vec<f64>], r: usize, c: usize, name: &str) -> Result<DMatrix<f64>, Failure> {
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        let found: Vec<usize> = rows.iter().map(Vec::len).collect();
        return Err(Failure::invalid(format!(
            "{name} must be {r}x{c}, found {} rows with lengths {found:?}",
            rows.len()
        )));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn to_vector(v: &[f64], len: usize, name: &str) -> Result<DVector<f64>, Failure> {
    if v.len() != len {
        return Err(Failure::invalid(format!(
            "{name} must have length {len}, found {}",
            v.len()
        )));
    }
    Ok(DVector::from_column_slice(v))
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Failure::usage(format!("cannot parse {}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<(), Failure> {
        fs::write(path, self.to_json()? + "\n")
            .map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String, Failure> {
        serde_json::to_string_pretty(self).map_err(|e| Failure::usage(e.to_string()))
    }

    /// Shapes are checked against `n` and `k`; the numerical invariants are
    /// left to `validate`.
    pub fn to_instance(&self) -> Result<ModelInstance, Failure> {
        let (n, k) = (self.n, self.k);
        if !(k >= 1 && n > k) {
            return Err(Failure::invalid(format!("need n > k >= 1, got n = {n}, k = {k}")));
        }
        let mut inst = ModelInstance::new(
            to_matrix(&self.x, n, k, "X")?,
            to_matrix(&self.omega, n, n, "Omega")?,
            to_matrix(&self.k1, k, k, "K1")?,
            to_matrix(&self.k2, k, k, "K2")?,
        )
        .map_err(Failure::from)?;
        if let Some(y) = &self.y {
            inst = inst.with_y(to_vector(y, n, "y")?);
        }
        if let Some(b) = &self.beta {
            inst = inst.with_beta(to_vector(b, k, "beta")?);
        }
        if let Some(s) = self.sigma2 {
            inst = inst.with_sigma2(s);
        }
        if let Some(z) = &self.z {
            inst = inst.with_z(to_matrix(z, n, n - k, "Z")?);
        }
        Ok(inst)
    }

    pub fn from_instance(inst: &ModelInstance) -> Self {
        Self {
            n: inst.n(),
            k: inst.k(),
            x: to_rows(&inst.x),
            omega: to_rows(&inst.omega),
            k1: to_rows(&inst.k1),
            k2: to_rows(&inst.k2),
            y: inst.y.as_ref().map(|v| v.as_slice().to_vec()),
            beta: inst.beta.as_ref().map(|v| v.as_slice().to_vec()),
            sigma2: inst.sigma2,
            z: inst.z.as_ref().map(to_rows),
        }
    }
}
