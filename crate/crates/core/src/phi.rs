//! Named test functions evaluated on particle locations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// A bounded or polynomial test function on a one-dimensional state.
///
/// Discrete states are encoded as `0.0, 1.0, ...`, so `state<k>` is the
/// indicator of state `k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TestFunction {
    /// Constant one.
    One,
    /// Identity, `x`.
    X,
    /// Square, `x^2`.
    X2,
    /// Tail indicator `1(|x| > 1)`.
    Tail,
    /// Indicator of discrete state `k`.
    State(usize),
}

impl TestFunction {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            TestFunction::One => 1.0,
            TestFunction::X => x,
            TestFunction::X2 => x * x,
            TestFunction::Tail => {
                if x.abs() > 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            TestFunction::State(k) => {
                if x == k as f64 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestFunction::One => f.write_str("one"),
            TestFunction::X => f.write_str("x"),
            TestFunction::X2 => f.write_str("x2"),
            TestFunction::Tail => f.write_str("tail"),
            TestFunction::State(k) => write!(f, "state{k}"),
        }
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "one" | "1" => Ok(TestFunction::One),
            "x" => Ok(TestFunction::X),
            "x2" => Ok(TestFunction::X2),
            "tail" => Ok(TestFunction::Tail),
            _ => s
                .strip_prefix("state")
                .and_then(|k| k.parse().ok())
                .map(TestFunction::State)
                .ok_or_else(|| Error::UnknownTestFunction(s.to_string())),
        }
    }
}

impl Serialize for TestFunction {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TestFunction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
