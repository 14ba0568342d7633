//! Points on the probability simplex Δ^m.
//!
//! A [`SimplexVector`] weights the `m` preference dimensions. Every constructor
//! in this module routes through [`SimplexVector::validate`], so a value of the
//! type always has nonnegative entries summing to one.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entries above this negative bound are treated as floating-point leakage and clamped to zero.
pub const NEGATIVE_CLAMP: f64 = -1e-12;
/// Allowed deviation of the sum from one.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    pub fn validate(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyVector);
        }
        let mut out = Vec::with_capacity(weights.len());
        for (index, &value) in weights.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NotNormalized { sum: value });
            }
            if value < NEGATIVE_CLAMP {
                return Err(Error::NegativeWeight { index, value });
            }
            out.push(value.max(0.0));
        }
        let sum: f64 = out.iter().sum();
        if !sum.is_finite() || (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::NotNormalized { sum });
        }
        if sum != 1.0 {
            for w in &mut out {
                *w /= sum;
            }
        }
        Ok(Self(out))
    }

    /// The vertex `e_k` of Δ^m.
    pub fn one_hot(m: usize, k: usize) -> Result<Self> {
        if k >= m {
            return Err(Error::IndexOutOfRange { index: k, len: m });
        }
        let mut w = vec![0.0; m];
        w[k] = 1.0;
        Ok(Self(w))
    }

    /// The barycenter `(1/m, ..., 1/m)`.
    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::EmptyVector);
        }
        Self::validate(&vec![1.0 / m as f64; m])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Index of the vertex this vector sits on, if it is one-hot.
    pub fn vertex(&self) -> Option<usize> {
        let mut hit = None;
        for (i, &w) in self.0.iter().enumerate() {
            if w == 1.0 {
                hit = Some(i);
            } else if w != 0.0 {
                return None;
            }
        }
        hit
    }
}

impl TryFrom<Vec<f64>> for SimplexVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::validate(&v)
    }
}

impl From<SimplexVector> for Vec<f64> {
    fn from(v: SimplexVector) -> Self {
        v.0
    }
}

impl AsRef<[f64]> for SimplexVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Comma-separated weights, e.g. `0.25,0.25,0.25,0.25`.
impl fmt::Display for SimplexVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, w) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{w}")?;
        }
        Ok(())
    }
}

impl FromStr for SimplexVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let weights = parse_reals(s)?;
        Self::validate(&weights)
    }
}

pub(crate) fn parse_reals(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| Error::InvalidConfig(format!("bad number {t:?}: {e}")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DirichletParams(Vec<f64>);

impl DirichletParams {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::EmptyVector);
        }
        if let Some((index, &value)) = alpha
            .iter()
            .enumerate()
            .find(|(_, a)| !(a.is_finite() && **a > 0.0))
        {
            return Err(Error::InvalidConcentration { index, value });
        }
        Ok(Self(alpha))
    }

    /// All-ones concentration: the uniform distribution on Δ^m.
    pub fn flat(m: usize) -> Result<Self> {
        Self::new(vec![1.0; m])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for DirichletParams {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DirichletParams> for Vec<f64> {
    fn from(v: DirichletParams) -> Self {
        v.0
    }
}

/// Draw from Dir(alpha) by normalizing independent Gamma(alpha_i, 1) variates.
pub fn sample_dirichlet<R: Rng + ?Sized>(params: &DirichletParams, rng: &mut R) -> SimplexVector {
    let m = params.dim();
    if m == 1 {
        return SimplexVector(vec![1.0]);
    }
    loop {
        let draws: Vec<f64> = params
            .alpha()
            .iter()
            .map(|&a| {
                Gamma::new(a, 1.0)
                    .expect("concentration validated positive")
                    .sample(rng)
            })
            .collect();
        let total: f64 = draws.iter().sum();
        // every draw underflowing to zero is possible for tiny alpha; redraw
        if total > 0.0 && total.is_finite() {
            let mut w: Vec<f64> = draws.into_iter().map(|g| g / total).collect();
            let s: f64 = w.iter().sum();
            if s != 1.0 {
                for x in &mut w {
                    *x /= s;
                }
            }
            return SimplexVector(w);
        }
    }
}

/// Uniform sample on Δ^m, i.e. Dir(1, ..., 1).
pub fn sample_uniform<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<SimplexVector> {
    Ok(sample_dirichlet(&DirichletParams::flat(m)?, rng))
}

/// Every weak composition of `total` into `parts` nonnegative integers, in
/// descending lexicographic order (`[total, 0, ...]` first).
pub(crate) fn compositions(total: u32, parts: usize) -> Vec<Vec<u32>> {
    fn go(remaining: u32, parts: usize, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if parts == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for c in (0..=remaining).rev() {
            prefix.push(c);
            go(remaining - c, parts - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if parts > 0 {
        go(total, parts, &mut Vec::with_capacity(parts), &mut out);
    }
    out
}

/// All points `(c_1/r, ..., c_m/r)` with nonnegative integer `c_i` summing to `r`.
///
/// The list has `C(r+m-1, m-1)` entries, ordered lexicographically on the
/// integer counts from `[r, 0, ..., 0]` down to `[0, ..., 0, r]`.
pub fn grid(m: usize, resolution: u32) -> Result<Vec<SimplexVector>> {
    if m == 0 {
        return Err(Error::EmptyVector);
    }
    if resolution == 0 {
        return Err(Error::InvalidConfig("grid resolution must be >= 1".into()));
    }
    let r = f64::from(resolution);
    Ok(compositions(resolution, m)
        .into_iter()
        .map(|counts| SimplexVector(counts.into_iter().map(|c| f64::from(c) / r).collect()))
        .collect())
}
