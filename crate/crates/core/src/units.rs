//! Physical unit signatures with rational exponents.

use std::collections::BTreeMap;
use std::fmt;

use num_rational::Rational64;
use serde::de::{self, Deserializer};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

/// Exponents over named base dimensions, e.g. `{kg: 1, m: 2, s: -2}`.
///
/// Zero exponents are never stored, so the empty map is the dimensionless
/// signature and structural equality is unit equality.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct UnitSignature {
    exponents: BTreeMap<String, Rational64>,
}

impl UnitSignature {
    pub fn dimensionless() -> Self {
        Self::default()
    }

    /// Signature of a single base dimension raised to the first power.
    pub fn base(name: &str) -> Self {
        Self::dimensionless().with(name, Rational64::from_integer(1))
    }

    pub fn with(mut self, name: &str, exponent: Rational64) -> Self {
        let entry = self
            .exponents
            .entry(name.to_string())
            .or_insert_with(|| Rational64::from_integer(0));
        *entry += exponent;
        if *entry == Rational64::from_integer(0) {
            self.exponents.remove(name);
        }
        self
    }

    pub fn is_dimensionless(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponent(&self, name: &str) -> Rational64 {
        self.exponents
            .get(name)
            .copied()
            .unwrap_or_else(|| Rational64::from_integer(0))
    }

    pub fn exponents(&self) -> impl Iterator<Item = (&str, Rational64)> {
        self.exponents.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (name, e) in &other.exponents {
            out = out.with(name, *e);
        }
        out
    }

    pub fn div(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (name, e) in &other.exponents {
            out = out.with(name, -*e);
        }
        out
    }
}

impl fmt::Display for UnitSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.exponents.is_empty() {
            return f.write_str("1");
        }
        let parts: Vec<String> = self
            .exponents
            .iter()
            .map(|(name, e)| {
                if *e == Rational64::from_integer(1) {
                    name.clone()
                } else {
                    format!("{name}^{e}")
                }
            })
            .collect();
        f.write_str(&parts.join("·"))
    }
}

// Exponents serialize as integers when integral and as "p/q" strings otherwise.
impl Serialize for UnitSignature {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.exponents.len()))?;
        for (name, e) in &self.exponents {
            if e.is_integer() {
                map.serialize_entry(name, &e.to_integer())?;
            } else {
                map.serialize_entry(name, &e.to_string())?;
            }
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for UnitSignature {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Exponent {
            Int(i64),
            Text(String),
        }
        let raw: BTreeMap<String, Exponent> = BTreeMap::deserialize(deserializer)?;
        let mut out = UnitSignature::dimensionless();
        for (name, e) in raw {
            let value = match e {
                Exponent::Int(i) => Rational64::from_integer(i),
                Exponent::Text(s) => s
                    .trim()
                    .parse::<Rational64>()
                    .map_err(|_| de::Error::custom(format!("bad exponent `{s}` for `{name}`")))?,
            };
            out = out.with(&name, value);
        }
        Ok(out)
    }
}

/// A unit that may not yet be determinable from a partial expression.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Unit {
    Known(UnitSignature),
    Unknown,
}

impl Unit {
    pub fn dimensionless() -> Self {
        Unit::Known(UnitSignature::dimensionless())
    }

    pub fn known(&self) -> Option<&UnitSignature> {
        match self {
            Unit::Known(u) => Some(u),
            Unit::Unknown => None,
        }
    }
}
