use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A parameter that is either given explicitly or derived from the data.
///
/// Serialized as a bare number, or as the string `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Auto {
    #[default]
    Auto,
    Value(f64),
}

impl Auto {
    pub fn value(self) -> Option<f64> {
        match self {
            Auto::Auto => None,
            Auto::Value(v) => Some(v),
        }
    }
}

/// Target mass of the barycenter: the mean mass of the inputs or a fixed value.
///
/// Serialized as a bare number, or as the string `"mean"`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum TargetMass {
    #[default]
    Mean,
    Value(f64),
}

impl TargetMass {
    pub fn value(self) -> Option<f64> {
        match self {
            TargetMass::Mean => None,
            TargetMass::Value(v) => Some(v),
        }
    }
}

fn parse_keyword_or_number(s: &str, keyword: &str) -> Result<Option<f64>> {
    let s = s.trim();
    if s.eq_ignore_ascii_case(keyword) {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::InvalidConfig(format!("expected '{keyword}' or a number, got '{s}'")))
}

impl FromStr for Auto {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(parse_keyword_or_number(s, "auto")?.map_or(Auto::Auto, Auto::Value))
    }
}

impl FromStr for TargetMass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(parse_keyword_or_number(s, "mean")?.map_or(TargetMass::Mean, TargetMass::Value))
    }
}

impl fmt::Display for Auto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Auto::Auto => f.write_str("auto"),
            Auto::Value(v) => write!(f, "{v}"),
        }
    }
}

impl fmt::Display for TargetMass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetMass::Mean => f.write_str("mean"),
            TargetMass::Value(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum KeywordOrNumber {
    Number(f64),
    Keyword(String),
}

impl Serialize for Auto {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Auto::Auto => s.serialize_str("auto"),
            Auto::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Auto {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match KeywordOrNumber::deserialize(d)? {
            KeywordOrNumber::Number(v) => Ok(Auto::Value(v)),
            KeywordOrNumber::Keyword(k) => k.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl Serialize for TargetMass {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TargetMass::Mean => s.serialize_str("mean"),
            TargetMass::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for TargetMass {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match KeywordOrNumber::deserialize(d)? {
            KeywordOrNumber::Number(v) => Ok(TargetMass::Value(v)),
            KeywordOrNumber::Keyword(k) => k.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Parameters of the barycenter solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Exponent applied to the augmented ground cost.
    pub p: f64,
    /// Entropic regularization; `Auto` is `100 / median` of the metric.
    pub lambda: Auto,
    /// Percentile of off-diagonal distances used for the virtual cost.
    pub q: f64,
    /// Step size of the multiplicative update; `Auto` is `1 / quantile(M, q)`.
    pub step: Auto,
    pub tol_outer: f64,
    pub max_outer: usize,
    pub tol_sinkhorn: f64,
    pub max_sinkhorn: usize,
    pub rho: TargetMass,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            p: 1.0,
            lambda: Auto::Auto,
            q: 95.0,
            step: Auto::Auto,
            tol_outer: 1e-6,
            max_outer: 500,
            tol_sinkhorn: 1e-9,
            max_sinkhorn: 10_000,
            rho: TargetMass::Mean,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return bad(format!("p must be >= 1, got {}", self.p));
        }
        if let Auto::Value(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return bad(format!("lambda must be positive, got {l}"));
            }
        }
        if !(self.q > 0.0 && self.q <= 100.0) {
            return bad(format!("q must lie in (0, 100], got {}", self.q));
        }
        if let Auto::Value(c) = self.step {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("step must be positive, got {c}"));
            }
        }
        if !(self.tol_outer >= 0.0) || !(self.tol_sinkhorn >= 0.0) {
            return bad("tolerances must be non-negative".into());
        }
        if self.max_outer == 0 || self.max_sinkhorn == 0 {
            return bad("iteration caps must be positive".into());
        }
        if let TargetMass::Value(r) = self.rho {
            if !(r > 0.0 && r <= 1.0) {
                return bad(format!("rho must lie in (0, 1], got {r}"));
            }
        }
        Ok(())
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = Auto::Value(lambda);
        self
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = TargetMass::Value(rho);
        self
    }
}
