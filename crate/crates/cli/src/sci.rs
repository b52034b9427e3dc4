//! Floats written as `{:.16e}`: 17 significant digits, so every double
//! survives a write/read cycle bit for bit.

use nalgebra::{DMatrix, DVector};
use serde::ser::Error as _;
use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

/// A float serialized in scientific notation. Non-finite values become `null`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sci(pub f64);

impl Serialize for Sci {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return s.serialize_none();
        }
        RawValue::from_string(format!("{:.16e}", self.0))
            .map_err(S::Error::custom)?
            .serialize(s)
    }
}

pub fn vector(v: &[f64]) -> Vec<Sci> {
    v.iter().copied().map(Sci).collect()
}

pub fn dvector(v: &DVector<f64>) -> Vec<Sci> {
    vector(v.as_slice())
}

pub fn matrix(m: &DMatrix<f64>) -> Vec<Vec<Sci>> {
    m.row_iter().map(|r| r.iter().copied().map(Sci).collect()).collect()
}

pub fn rows<S: Serializer>(rows: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(rows.iter().map(|r| vector(r)))
}

pub fn opt_rows<S: Serializer>(rows: &Option<Vec<Vec<f64>>>, s: S) -> Result<S::Ok, S::Error> {
    match rows {
        Some(r) => self::rows(r, s),
        None => s.serialize_none(),
    }
}

pub fn opt_vector<S: Serializer>(v: &Option<Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.collect_seq(v.iter().copied().map(Sci)),
        None => s.serialize_none(),
    }
}

pub fn opt_scalar<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    v.map(Sci).serialize(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extremes_round_trip() {
        let values = [
            0.0,
            -0.0,
            1.0 / 3.0,
            f64::MIN_POSITIVE,
            f64::MIN_POSITIVE / 3.0,
            f64::MAX,
            -f64::EPSILON,
            0.1 + 0.2,
        ];
        let text = serde_json::to_string(&vector(&values)).unwrap();
        let back: Vec<f64> = serde_json::from_str(&text).unwrap();
        for (a, b) in values.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits(), "{a:e} -> {b:e}");
        }
    }

    #[test]
    fn non_finite_is_null() {
        let text = serde_json::to_string(&[Sci(f64::NAN), Sci(f64::INFINITY)]).unwrap();
        assert_eq!(text, "[null,null]");
    }
}
