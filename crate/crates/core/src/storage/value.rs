use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use chrono::{DateTime, NaiveDate, Utc};
use serde_json::Value as Json;

use crate::model::ScalarType;
use crate::render::{parse_date, parse_timestamp, timestamp_rfc3339};

/// A typed scalar. `List` only appears in aggregate results.
#[derive(Debug, Clone)]
pub enum Value {
    Null,
    Text(String),
    Int(i64),
    Float(f64),
    Bool(bool),
    Date(NaiveDate),
    Timestamp(DateTime<Utc>),
    List(Vec<Value>),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Bool(_) => 0,
            Value::Int(_) => 1,
            Value::Float(_) => 2,
            Value::Date(_) => 3,
            Value::Timestamp(_) => 4,
            Value::Text(_) => 5,
            Value::List(_) => 6,
            Value::Null => 7,
        }
    }

    pub fn matches_type(&self, ty: ScalarType) -> bool {
        matches!(
            (self, ty),
            (Value::Null, _)
                | (Value::Text(_), ScalarType::Text | ScalarType::Markdown)
                | (Value::Int(_), ScalarType::Int)
                | (Value::Float(_), ScalarType::Float)
                | (Value::Bool(_), ScalarType::Boolean)
                | (Value::Date(_), ScalarType::Date)
                | (Value::Timestamp(_), ScalarType::Timestamp)
        )
    }

    /// Converts a JSON value for a column of type `ty`. Strings are accepted
    /// for every type so CSV cells and form values coerce.
    pub fn from_json(json: &Json, ty: ScalarType) -> Result<Value, String> {
        let bad = || format!("expected {ty}, got {json}");
        Ok(match (json, ty) {
            (Json::Null, _) => Value::Null,
            (Json::String(s), ScalarType::Text | ScalarType::Markdown) => Value::Text(s.clone()),
            (Json::String(s), _) => return Value::from_text(s, ty),
            (Json::Number(n), ScalarType::Int) => Value::Int(n.as_i64().ok_or_else(bad)?),
            (Json::Number(n), ScalarType::Float) => Value::Float(n.as_f64().ok_or_else(bad)?),
            (Json::Bool(b), ScalarType::Boolean) => Value::Bool(*b),
            _ => return Err(bad()),
        })
    }

    /// Parses a textual cell. The empty string is null for non-text types.
    pub fn from_text(s: &str, ty: ScalarType) -> Result<Value, String> {
        let bad = || format!("cannot read {s:?} as {ty}");
        if s.is_empty() && !ty.is_textual() {
            return Ok(Value::Null);
        }
        Ok(match ty {
            ScalarType::Text | ScalarType::Markdown => Value::Text(s.to_string()),
            ScalarType::Int => Value::Int(s.trim().parse().map_err(|_| bad())?),
            ScalarType::Float => {
                let f: f64 = s.trim().parse().map_err(|_| bad())?;
                if !f.is_finite() {
                    return Err(bad());
                }
                Value::Float(f)
            }
            ScalarType::Boolean => match s.trim().to_ascii_lowercase().as_str() {
                "true" | "t" | "yes" | "1" => Value::Bool(true),
                "false" | "f" | "no" | "0" => Value::Bool(false),
                _ => return Err(bad()),
            },
            ScalarType::Date => Value::Date(parse_date(s.trim()).ok_or_else(bad)?),
            ScalarType::Timestamp => Value::Timestamp(parse_timestamp(s.trim()).ok_or_else(bad)?),
        })
    }

    pub fn to_json(&self) -> Json {
        match self {
            Value::Null => Json::Null,
            Value::Text(s) => Json::String(s.clone()),
            Value::Int(i) => Json::from(*i),
            Value::Float(f) => serde_json::Number::from_f64(*f).map_or(Json::Null, Json::Number),
            Value::Bool(b) => Json::Bool(*b),
            Value::Date(d) => Json::String(d.format("%Y-%m-%d").to_string()),
            Value::Timestamp(ts) => Json::String(timestamp_rfc3339(ts)),
            Value::List(items) => Json::Array(items.iter().map(Value::to_json).collect()),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => Ok(()),
            Value::Text(s) => f.write_str(s),
            other => match other.to_json() {
                Json::String(s) => f.write_str(&s),
                j => write!(f, "{j}"),
            },
        }
    }
}

fn float_bits(f: f64) -> u64 {
    if f == 0.0 {
        0
    } else {
        f.to_bits()
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.rank().hash(state);
        match self {
            Value::Null => {}
            Value::Text(s) => s.hash(state),
            Value::Int(i) => i.hash(state),
            Value::Float(f) => float_bits(*f).hash(state),
            Value::Bool(b) => b.hash(state),
            Value::Date(d) => d.hash(state),
            Value::Timestamp(t) => t.hash(state),
            Value::List(items) => items.hash(state),
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Total order: within a type the natural order; across types by a fixed
/// rank with null greatest (so ascending sorts put nulls last).
impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Float(a), Value::Float(b)) => {
                if a == b {
                    Ordering::Equal
                } else {
                    a.total_cmp(b)
                }
            }
            (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
            (Value::Date(a), Value::Date(b)) => a.cmp(b),
            (Value::Timestamp(a), Value::Timestamp(b)) => a.cmp(b),
            (Value::List(a), Value::List(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn coercions() {
        assert_eq!(Value::from_json(&Json::from("12"), ScalarType::Int).unwrap(), Value::Int(12));
        assert_eq!(Value::from_text("", ScalarType::Int).unwrap(), Value::Null);
        assert_eq!(Value::from_text("", ScalarType::Text).unwrap(), Value::Text(String::new()));
        assert!(Value::from_json(&Json::from(1.5), ScalarType::Int).is_err());
        assert!(Value::from_json(&Json::from(true), ScalarType::Text).is_err());
        assert_eq!(Value::from_text("t", ScalarType::Boolean).unwrap(), Value::Bool(true));
    }

    #[test]
    fn null_sorts_last() {
        let mut v = vec![Value::Null, Value::Int(3), Value::Int(-1)];
        v.sort();
        assert_eq!(v, vec![Value::Int(-1), Value::Int(3), Value::Null]);
    }

    proptest! {
        #[test]
        fn date_round_trip(days in -100_000i32..100_000) {
            let d = NaiveDate::from_num_days_from_ce_opt(730_000 + days).unwrap();
            let v = Value::Date(d);
            let text = crate::render::format_value(&v, ScalarType::Date);
            prop_assert_eq!(Value::from_text(&text, ScalarType::Date).unwrap(), v.clone());
            prop_assert_eq!(Value::from_json(&v.to_json(), ScalarType::Date).unwrap(), v);
        }

        #[test]
        fn timestamp_round_trip(micros in 0i64..4_000_000_000_000_000, minutes in 0i64..50_000_000) {
            let ts = DateTime::from_timestamp_micros(micros).unwrap();
            let v = Value::Timestamp(ts);
            prop_assert_eq!(Value::from_json(&v.to_json(), ScalarType::Timestamp).unwrap(), v);
            // The display form keeps minutes, so minute-aligned values round-trip through it.
            let aligned = Value::Timestamp(DateTime::from_timestamp(minutes * 60, 0).unwrap());
            let text = crate::render::format_value(&aligned, ScalarType::Timestamp);
            prop_assert_eq!(Value::from_text(&text, ScalarType::Timestamp).unwrap(), aligned);
        }
    }
}
