//! Stable JSON output: floats rounded to 12 significant digits.

use serde::Serializer;
use serde_json::Value;

use crate::matrix::{Mat, Vector};

pub fn sig12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

/// Rounds every float in `value` to 12 significant digits.
pub fn rounded(value: Value) -> Value {
    match value {
        Value::Number(n) if n.is_f64() => {
            let x = sig12(n.as_f64().unwrap_or(f64::NAN));
            serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(rounded).collect()),
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, rounded(v))).collect()),
        other => other,
    }
}

/// Serializes `value` with rounded floats.
pub fn to_value<T: serde::Serialize>(value: &T) -> serde_json::Result<Value> {
    Ok(rounded(serde_json::to_value(value)?))
}

pub fn to_string_pretty<T: serde::Serialize>(value: &T) -> serde_json::Result<String> {
    serde_json::to_string_pretty(&to_value(value)?)
}

pub fn vec_to_list(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

pub fn serialize_vector<S: Serializer>(v: &Vector, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter())
}

pub fn serialize_matrix<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(crate::matrix::to_rows(m))
}
