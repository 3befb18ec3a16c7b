//! Fractional Calderón–Zygmund kernels: Hilbert, Riesz components, the Riesz
//! vector and the Cauchy kernel.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    /// `1 / (y - x)` on the line.
    Hilbert,
    /// `K_j^α(x, y) = (x^j - y^j) / |x - y|^{n+1-α}` for the zero-based axis `j`.
    Riesz(usize),
    /// All `n` Riesz components.
    RieszVector,
    /// `1 / (z - w)` in the plane as the pair `(K_1^1, -K_2^1)`.
    Cauchy,
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelFamily::Hilbert => write!(f, "hilbert"),
            KernelFamily::Riesz(j) => write!(f, "riesz:{j}"),
            KernelFamily::RieszVector => write!(f, "riesz_vector"),
            KernelFamily::Cauchy => write!(f, "cauchy"),
        }
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hilbert" => Ok(KernelFamily::Hilbert),
            "riesz_vector" => Ok(KernelFamily::RieszVector),
            "cauchy" => Ok(KernelFamily::Cauchy),
            other => other
                .strip_prefix("riesz:")
                .and_then(|j| j.parse().ok())
                .map(KernelFamily::Riesz)
                .ok_or_else(|| Error::Kernel(format!("unknown kernel family {other:?}"))),
        }
    }
}

impl Serialize for KernelFamily {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for KernelFamily {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A kernel with its order, dimension and truncation radius.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    /// Family.
    pub family: KernelFamily,
    /// Fractional order `α`.
    pub alpha: f64,
    /// Ambient dimension.
    pub n: usize,
    /// Pairs at distance `<= truncation` contribute nothing.
    #[serde(default)]
    pub truncation: f64,
}

/// Result of evaluating a kernel at a pair of points.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelValue {
    /// The components of `K(x, y)`.
    Value(Vec<f64>),
    /// The pair lies within the truncation radius; every component is zero.
    Truncated(usize),
}

impl KernelValue {
    /// Components, with zeros for truncated pairs.
    pub fn components(self) -> Vec<f64> {
        match self {
            KernelValue::Value(v) => v,
            KernelValue::Truncated(c) => vec![0.0; c],
        }
    }
}

impl KernelSpec {
    /// Builds and validates a kernel.
    pub fn new(family: KernelFamily, n: usize, alpha: f64) -> Result<Self> {
        let k = KernelSpec { family, alpha, n, truncation: 0.0 };
        k.validate()?;
        Ok(k)
    }

    /// The same kernel with truncation radius `delta`.
    pub fn truncated(mut self, delta: f64) -> Self {
        self.truncation = delta;
        self
    }

    /// Checks that family, dimension and order are compatible.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha < self.n as f64) {
            return Err(Error::AlphaOutOfRange { alpha: self.alpha, n: self.n });
        }
        if !(self.truncation >= 0.0) {
            return Err(Error::Kernel(format!("truncation {} is negative", self.truncation)));
        }
        match self.family {
            KernelFamily::Hilbert if self.n != 1 || self.alpha != 0.0 => {
                Err(Error::Kernel("the Hilbert kernel needs n = 1 and alpha = 0".into()))
            }
            KernelFamily::Cauchy if self.n != 2 || self.alpha != 1.0 => {
                Err(Error::Kernel("the Cauchy kernel needs n = 2 and alpha = 1".into()))
            }
            KernelFamily::Riesz(j) if j >= self.n => {
                Err(Error::Kernel(format!("Riesz component {j} in dimension {}", self.n)))
            }
            _ => Ok(()),
        }
    }

    /// Number of output components.
    pub fn components(&self) -> usize {
        match self.family {
            KernelFamily::Hilbert | KernelFamily::Riesz(_) => 1,
            KernelFamily::RieszVector => self.n,
            KernelFamily::Cauchy => 2,
        }
    }

    /// Evaluates `K(x, y)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<KernelValue> {
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        if d2 == 0.0 {
            return Err(Error::Singular);
        }
        if d2.sqrt() <= self.truncation {
            return Ok(KernelValue::Truncated(self.components()));
        }
        let mut out = vec![0.0; self.components()];
        self.write(x, y, d2, &mut out);
        Ok(KernelValue::Value(out))
    }

    /// Writes the components of `K(x, y)` for `|x - y|^2 = d2 > 0`, ignoring truncation.
    pub fn write(&self, x: &[f64], y: &[f64], d2: f64, out: &mut [f64]) {
        match self.family {
            KernelFamily::Hilbert => out[0] = 1.0 / (y[0] - x[0]),
            KernelFamily::Riesz(j) => out[0] = (x[j] - y[j]) * self.riesz_scale(d2),
            KernelFamily::RieszVector => {
                let s = self.riesz_scale(d2);
                for (o, (a, b)) in out.iter_mut().zip(x.iter().zip(y)) {
                    *o = (a - b) * s;
                }
            }
            KernelFamily::Cauchy => {
                out[0] = (x[0] - y[0]) / d2;
                out[1] = -(x[1] - y[1]) / d2;
            }
        }
    }

    fn riesz_scale(&self, d2: f64) -> f64 {
        d2.powf(-(self.n as f64 + 1.0 - self.alpha) / 2.0)
    }

    /// Components of `K(x, y)` with zeros inside the truncation radius; `x = y` gives zeros too.
    pub fn eval_or_zero(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.eval(x, y).map_or_else(|_| vec![0.0; self.components()], KernelValue::components)
    }

    /// Euclidean size `|K(x, y)|`.
    pub fn magnitude(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(self.eval(x, y)?.components().iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    /// The size bound `|x - y|^{α - n}`.
    pub fn size_bound(&self, x: &[f64], y: &[f64]) -> f64 {
        let d: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        d.powf(self.alpha - self.n as f64)
    }

    /// The single-component kernels whose stack forms this kernel.
    pub fn split(&self) -> Vec<KernelSpec> {
        match self.family {
            KernelFamily::RieszVector => {
                (0..self.n).map(|j| KernelSpec { family: KernelFamily::Riesz(j), ..*self }).collect()
            }
            KernelFamily::Cauchy => vec![
                KernelSpec { family: KernelFamily::Riesz(0), ..*self },
                KernelSpec { family: KernelFamily::Riesz(1), ..*self },
            ],
            _ => vec![*self],
        }
    }

    /// Stable name used in reports and calibration keys.
    pub fn name(&self) -> String {
        self.family.to_string()
    }
}
