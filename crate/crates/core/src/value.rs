//! Attribute values and extraction timestamps.

use std::fmt;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};
use rust_decimal::Decimal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::schema::AttributeType;

/// A value conforming to an [`AttributeType`].
///
/// Decimals are kept normalized so that structural equality is the change
/// detection relation (`1.50` and `1.5` compare equal). Sets and lists are
/// both carried as ordered lists.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Value {
    Str(String),
    Int(i64),
    Dec(Decimal),
    Bool(bool),
    Date(NaiveDate),
    Tuple(Vec<(String, Value)>),
    List(Vec<Value>),
}

impl Value {
    pub fn dec(d: Decimal) -> Self {
        Value::Dec(d.normalize())
    }

    pub fn is_simple(&self) -> bool {
        !matches!(self, Value::Tuple(_) | Value::List(_))
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Str(_) => "string",
            Value::Int(_) => "integer",
            Value::Dec(_) => "decimal",
            Value::Bool(_) => "boolean",
            Value::Date(_) => "date",
            Value::Tuple(_) => "tuple",
            Value::List(_) => "list",
        }
    }

    /// Numeric view; integers widen to decimals.
    pub fn as_decimal(&self) -> Option<Decimal> {
        match self {
            Value::Int(i) => Some(Decimal::from(*i)),
            Value::Dec(d) => Some(*d),
            _ => None,
        }
    }

    /// Canonicalize nested decimals.
    pub fn normalized(self) -> Self {
        match self {
            Value::Dec(d) => Value::Dec(d.normalize()),
            Value::Tuple(parts) => Value::Tuple(
                parts
                    .into_iter()
                    .map(|(n, v)| (n, v.normalized()))
                    .collect(),
            ),
            Value::List(items) => Value::List(items.into_iter().map(Value::normalized).collect()),
            other => other,
        }
    }

    /// Parse a JSON value against an attribute type.
    ///
    /// Decimals are accepted as JSON numbers or numeric strings; dates as
    /// ISO-8601 strings. Tuple components may be omitted (absent).
    pub fn from_json(json: &serde_json::Value, ty: &AttributeType) -> Result<Value, String> {
        use serde_json::Value as J;
        let expected = || ty.to_string();
        match (ty, json) {
            (AttributeType::String, J::String(s)) => Ok(Value::Str(s.clone())),
            (AttributeType::Integer, J::Number(n)) => {
                n.as_i64().map(Value::Int).ok_or_else(expected)
            }
            (AttributeType::Decimal, J::Number(n)) => parse_decimal(&n.to_string())
                .map(Value::dec)
                .ok_or_else(expected),
            (AttributeType::Decimal, J::String(s)) => {
                parse_decimal(s).map(Value::dec).ok_or_else(expected)
            }
            (AttributeType::Boolean, J::Bool(b)) => Ok(Value::Bool(*b)),
            (AttributeType::Date, J::String(s)) => NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .map(Value::Date)
                .map_err(|_| expected()),
            (AttributeType::Tuple(components), J::Object(map)) => {
                for key in map.keys() {
                    if !components.iter().any(|c| &c.name == key) {
                        return Err(expected());
                    }
                }
                let mut parts = Vec::new();
                for c in components {
                    if let Some(v) = map.get(&c.name) {
                        if !v.is_null() {
                            parts.push((c.name.clone(), Value::from_json(v, &c.ty)?));
                        }
                    }
                }
                Ok(Value::Tuple(parts))
            }
            (AttributeType::Set(elem) | AttributeType::List(elem), J::Array(items)) => items
                .iter()
                .map(|i| Value::from_json(i, elem))
                .collect::<Result<Vec<_>, _>>()
                .map(Value::List),
            _ => Err(expected()),
        }
    }

    /// JSON rendering used by all export formats. Decimals are rendered as
    /// strings to stay exact.
    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::Value as J;
        match self {
            Value::Str(s) => J::String(s.clone()),
            Value::Int(i) => J::from(*i),
            Value::Dec(d) => J::String(d.normalize().to_string()),
            Value::Bool(b) => J::Bool(*b),
            Value::Date(d) => J::String(d.format("%Y-%m-%d").to_string()),
            Value::Tuple(parts) => J::Object(
                parts
                    .iter()
                    .map(|(n, v)| (n.clone(), v.to_json()))
                    .collect(),
            ),
            Value::List(items) => J::Array(items.iter().map(Value::to_json).collect()),
        }
    }

    /// Does this value conform to the given type?
    pub fn conforms_to(&self, ty: &AttributeType) -> bool {
        match (self, ty) {
            (Value::Str(_), AttributeType::String)
            | (Value::Int(_), AttributeType::Integer)
            | (Value::Dec(_), AttributeType::Decimal)
            | (Value::Int(_), AttributeType::Decimal)
            | (Value::Bool(_), AttributeType::Boolean)
            | (Value::Date(_), AttributeType::Date) => true,
            (Value::Tuple(parts), AttributeType::Tuple(components)) => {
                parts.iter().all(|(n, v)| {
                    components
                        .iter()
                        .find(|c| &c.name == n)
                        .is_some_and(|c| v.conforms_to(&c.ty))
                })
            }
            (Value::List(items), AttributeType::Set(elem) | AttributeType::List(elem)) => {
                items.iter().all(|i| i.conforms_to(elem))
            }
            _ => false,
        }
    }
}

fn parse_decimal(s: &str) -> Option<Decimal> {
    Decimal::from_str(s)
        .ok()
        .or_else(|| Decimal::from_scientific(s).ok())
}

/// Canonical text form: the one used for formula literals and dimension keys.
impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Str(s) => write!(f, "'{}'", s.replace('\'', "''")),
            Value::Int(i) => write!(f, "{i}"),
            Value::Dec(d) => {
                let d = d.normalize();
                if d.scale() == 0 {
                    write!(f, "{d}.0")
                } else {
                    write!(f, "{d}")
                }
            }
            Value::Bool(b) => write!(f, "{b}"),
            Value::Date(d) => write!(f, "{}", d.format("%Y-%m-%d")),
            Value::Tuple(parts) => {
                write!(f, "(")?;
                for (i, (n, v)) in parts.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{n}: {v}")?;
                }
                write!(f, ")")
            }
            Value::List(items) => {
                write!(f, "[")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, "]")
            }
        }
    }
}

/// An extraction instant. Serialized as `YYYY-MM-DD` when it falls on
/// midnight, otherwise as `YYYY-MM-DDTHH:MM:SS`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(pub NaiveDateTime);

impl Timestamp {
    pub fn from_date(d: NaiveDate) -> Self {
        Timestamp(d.and_time(NaiveTime::MIN))
    }

    pub fn date(&self) -> NaiveDate {
        self.0.date()
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.time() == NaiveTime::MIN {
            write!(f, "{}", self.0.format("%Y-%m-%d"))
        } else {
            write!(f, "{}", self.0.format("%Y-%m-%dT%H:%M:%S"))
        }
    }
}

impl FromStr for Timestamp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
            return Ok(Timestamp::from_date(d));
        }
        for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S"] {
            if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
                return Ok(Timestamp(dt));
            }
        }
        Err(format!("invalid ISO-8601 timestamp '{s}'"))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
