//! Slowly varying factors `V(y)`.
//!
//! Every tail formula in this crate carries a factor `V(ln u)` that varies
//! slowly at infinity. Instead of accepting arbitrary callbacks we work with a
//! small closed grammar whose members are all slowly varying and positive on
//! the whole half-line `[0, ∞)`:
//!
//! | term        | expression syntax | value                              |
//! |-------------|-------------------|------------------------------------|
//! | constant    | `c(k)`            | `k` (must be > 0)                  |
//! | log power   | `lp(r)`           | `(1 + ln(1 + y))^r`                |
//! | iterated    | `ilp(r)`          | `(1 + ln(1 + ln(1 + y)))^r`        |
//! | product     | `a*b`             | `a(y) · b(y)`                      |
//!
//! The `1 + ln(1 + ·)` regularization keeps each factor finite and positive
//! near zero without changing its behaviour at infinity.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum SlowlyVarying {
    Constant(f64),
    LogPower(f64),
    IterLogPower(f64),
    Product(Box<SlowlyVarying>, Box<SlowlyVarying>),
}

impl SlowlyVarying {
    pub fn constant(c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return domain(format!("constant factor must be finite and positive, got {c}"));
        }
        Ok(Self::Constant(c))
    }

    pub fn log_power(r: f64) -> Result<Self> {
        if !r.is_finite() {
            return domain("log-power exponent must be finite");
        }
        Ok(Self::LogPower(r))
    }

    pub fn iter_log_power(r: f64) -> Result<Self> {
        if !r.is_finite() {
            return domain("iterated log-power exponent must be finite");
        }
        Ok(Self::IterLogPower(r))
    }

    pub fn one() -> Self {
        Self::Constant(1.0)
    }

    pub fn times(self, other: SlowlyVarying) -> Self {
        Self::Product(Box::new(self), Box::new(other))
    }

    /// `V(y)` for `y ≥ 0`.
    pub fn eval(&self, y: f64) -> Result<f64> {
        if !y.is_finite() || y < 0.0 {
            return domain(format!("slowly varying factor needs finite y >= 0, got {y}"));
        }
        Ok(self.ln_at(y).exp())
    }

    /// `ln V(y)`; `y` is assumed finite and nonnegative.
    pub(crate) fn ln_at(&self, y: f64) -> f64 {
        match self {
            Self::Constant(c) => c.ln(),
            Self::LogPower(r) => r * y.ln_1p().ln_1p(),
            Self::IterLogPower(r) => r * y.ln_1p().ln_1p().ln_1p(),
            Self::Product(a, b) => a.ln_at(y) + b.ln_at(y),
        }
    }

    /// `d/dy ln V(y)`.
    pub(crate) fn d_ln_at(&self, y: f64) -> f64 {
        match self {
            Self::Constant(_) => 0.0,
            Self::LogPower(r) => r / ((1.0 + y.ln_1p()) * (1.0 + y)),
            Self::IterLogPower(r) => {
                let l1 = y.ln_1p();
                r / ((1.0 + l1.ln_1p()) * (1.0 + l1) * (1.0 + y))
            }
            Self::Product(a, b) => a.d_ln_at(y) + b.d_ln_at(y),
        }
    }

    /// Sums of the `lp` and `ilp` exponents over the whole tree.
    pub fn log_exponents(&self) -> (f64, f64) {
        match self {
            Self::Constant(_) => (0.0, 0.0),
            Self::LogPower(r) => (*r, 0.0),
            Self::IterLogPower(r) => (0.0, *r),
            Self::Product(a, b) => {
                let (la, ia) = a.log_exponents();
                let (lb, ib) = b.log_exponents();
                (la + lb, ia + ib)
            }
        }
    }

    /// Sum of absolute exponents, an upper bound on `|y · d/dy ln V(y)|`-type
    /// growth used when locating monotone regions.
    pub(crate) fn abs_exponent_mass(&self) -> f64 {
        match self {
            Self::Constant(_) => 0.0,
            Self::LogPower(r) | Self::IterLogPower(r) => r.abs(),
            Self::Product(a, b) => a.abs_exponent_mass() + b.abs_exponent_mass(),
        }
    }

    /// Decides `lim_{y→∞} V(y) = 0` symbolically from the exponent sums.
    pub fn limit_at_infinity_is_zero(&self) -> bool {
        let (lp, ilp) = self.log_exponents();
        lp < 0.0 || (lp == 0.0 && ilp < 0.0)
    }

    /// True when the tree contains no logarithmic factor, i.e. `V` is a
    /// positive constant.
    pub fn is_constant(&self) -> bool {
        match self {
            Self::Constant(_) => true,
            Self::LogPower(r) | Self::IterLogPower(r) => *r == 0.0,
            Self::Product(a, b) => a.is_constant() && b.is_constant(),
        }
    }
}

impl fmt::Display for SlowlyVarying {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "c({c})"),
            Self::LogPower(r) => write!(f, "lp({r})"),
            Self::IterLogPower(r) => write!(f, "ilp({r})"),
            Self::Product(a, b) => write!(f, "{a}*{b}"),
        }
    }
}

impl FromStr for SlowlyVarying {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Parser { src: s, pos: 0 }.expression()
    }
}

impl Serialize for SlowlyVarying {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SlowlyVarying {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn expression(&mut self) -> Result<SlowlyVarying> {
        let mut acc = self.factor()?;
        loop {
            self.skip_ws();
            if self.pos == self.src.len() {
                return Ok(acc);
            }
            if self.rest().starts_with('*') {
                self.pos += 1;
                let rhs = self.factor()?;
                acc = acc.times(rhs);
            } else {
                return self.fail("expected `*` or end of expression");
            }
        }
    }

    fn factor(&mut self) -> Result<SlowlyVarying> {
        self.skip_ws();
        let start = self.pos;
        let name_len = self
            .rest()
            .find(|c: char| !c.is_ascii_alphabetic())
            .unwrap_or(self.rest().len());
        let name = &self.src[start..start + name_len];
        if name.is_empty() {
            return self.fail("expected one of `c`, `lp`, `ilp`");
        }
        self.pos += name_len;
        self.skip_ws();
        if !self.rest().starts_with('(') {
            return self.fail("expected `(`");
        }
        self.pos += 1;
        let arg_start = self.pos;
        let close = match self.rest().find(')') {
            Some(i) => i,
            None => return self.fail("unclosed `(`"),
        };
        let raw = self.src[arg_start..arg_start + close].trim();
        let value: f64 = match raw.parse() {
            Ok(v) => v,
            Err(_) => {
                return Err(Error::Parse {
                    offset: arg_start,
                    token: raw.to_string(),
                    message: "invalid number".into(),
                })
            }
        };
        self.pos = arg_start + close + 1;
        let built = match name {
            "c" => SlowlyVarying::constant(value),
            "lp" => SlowlyVarying::log_power(value),
            "ilp" => SlowlyVarying::iter_log_power(value),
            other => {
                return Err(Error::Parse {
                    offset: start,
                    token: other.to_string(),
                    message: "unknown factor, expected `c`, `lp` or `ilp`".into(),
                })
            }
        };
        built.map_err(|e| Error::Parse {
            offset: arg_start,
            token: raw.to_string(),
            message: e.to_string(),
        })
    }

    fn rest(&self) -> &str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn fail<T>(&self, message: &str) -> Result<T> {
        let token: String = self.rest().chars().take(8).collect();
        Err(Error::Parse {
            offset: self.pos,
            token: if token.is_empty() { "<end>".into() } else { token },
            message: message.into(),
        })
    }
}
