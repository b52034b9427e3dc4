use nalgebra::DMatrix;
use ridge_equiv::{BlockDecomposition, Condition, ToleranceConfig};
use serde::Serialize;

use crate::sci::{self, Sci};

#[derive(Debug, Serialize)]
pub struct ToleranceJson {
    pub rel_eq: Sci,
    pub abs_eq: Sci,
    pub rank_rel: Sci,
    pub psd_floor: Sci,
}

impl From<&ToleranceConfig> for ToleranceJson {
    fn from(t: &ToleranceConfig) -> Self {
        Self {
            rel_eq: Sci(t.rel_eq),
            abs_eq: Sci(t.abs_eq),
            rank_rel: Sci(t.rank_rel),
            psd_floor: Sci(t.psd_floor),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ConditionJson {
    pub name: String,
    pub residual: Sci,
    pub holds: bool,
}

impl ConditionJson {
    pub fn new(name: impl Into<String>, holds: bool, residual: f64) -> Self {
        Self {
            name: name.into(),
            residual: Sci(residual),
            holds,
        }
    }

    pub fn prefixed(prefix: &str, c: &Condition) -> Self {
        let name = if prefix.is_empty() {
            c.name.clone()
        } else {
            format!("{prefix}/{}", c.name)
        };
        Self::new(name, c.holds, c.residual)
    }
}

#[derive(Debug, Serialize)]
pub struct OracleJson {
    pub holds: bool,
    pub residual: Sci,
}

#[derive(Debug, Serialize)]
pub struct BlocksJson {
    #[serde(rename = "Gamma")]
    pub gamma: Vec<Vec<Sci>>,
    #[serde(rename = "Xi")]
    pub xi: Vec<Vec<Sci>>,
    #[serde(rename = "Delta")]
    pub delta: Vec<Vec<Sci>>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<Sci>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<Sci>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<Sci>>,
    #[serde(rename = "D")]
    pub d: Vec<Vec<Sci>>,
    pub reconstruction_residual: Sci,
    pub inverse_residual: Sci,
}

impl BlocksJson {
    pub fn new(bl: &BlockDecomposition, reconstruction: f64, inverse: f64) -> Self {
        Self {
            gamma: sci::matrix(&bl.gamma),
            xi: sci::matrix(&bl.xi),
            delta: sci::matrix(&bl.delta),
            a: sci::matrix(&bl.a),
            b: sci::matrix(&bl.b),
            c: sci::matrix(&bl.c),
            d: sci::matrix(&bl.d),
            reconstruction_residual: Sci(reconstruction),
            inverse_residual: Sci(inverse),
        }
    }
}

/// Every key is always present; fields that do not apply to a command are
/// `null`.
#[derive(Debug, Serialize)]
pub struct Report {
    pub command: &'static str,
    pub what: Option<&'static str>,
    pub tolerance: ToleranceJson,
    pub verdict: bool,
    pub conditions: Vec<ConditionJson>,
    pub oracle: Option<OracleJson>,
    pub agreement: Option<bool>,
    #[serde(rename = "witness_G")]
    pub witness_g: Option<Vec<Vec<Sci>>>,
    pub estimate: Option<Vec<Sci>>,
    pub rss: Option<Sci>,
    pub d1_rank: Option<usize>,
    pub blocks: Option<BlocksJson>,
}

impl Report {
    pub fn new(command: &'static str, tol: &ToleranceConfig) -> Self {
        Self {
            command,
            what: None,
            tolerance: tol.into(),
            verdict: false,
            conditions: Vec::new(),
            oracle: None,
            agreement: None,
            witness_g: None,
            estimate: None,
            rss: None,
            d1_rank: None,
            blocks: None,
        }
    }

    pub fn witness(mut self, g: Option<&DMatrix<f64>>) -> Self {
        self.witness_g = g.map(sci::matrix);
        self
    }
}
