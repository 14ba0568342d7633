//! Performance-driven lambda scheduling.
//!
//! Observed `(λ, score)` pairs are lifted through a polynomial feature map and
//! fitted by (ridge) least squares, giving a performance surface
//! `f(λ) = wᵀφ_p(λ)`. A finite candidate set of λ vectors is then weighted by
//! `softmax(τ · f(λ))`, and training draws its λ from that distribution.

use std::fmt::Write as _;
use std::io::{BufRead, Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::softmax;
use crate::simplex::{self, compositions, DirichletParams, SimplexVector};

pub const DEFAULT_RIDGE: f64 = 1e-8;
pub const DEFAULT_DEGREE: u32 = 2;
pub const DEFAULT_TAU: f64 = 100.0;
pub const DEFAULT_CANDIDATES: usize = 10;

/// Scores above this are read as percentages and divided by 100.
pub const PERCENT_THRESHOLD: f64 = 1.5;
/// First line of a serialized [`PerfModel`].
pub const MODEL_HEADER: &str = "ldpo-perf-model 1";

/// All monomials in `d` variables of total degree at most `p`.
///
/// Graded order: the constant first, then each degree in descending
/// lexicographic order of exponents (`λ_1², λ_1λ_2, …, λ_d²` for degree 2).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolyFeatureMap {
    d: usize,
    p: u32,
    monomials: Vec<Vec<u32>>,
}

impl PolyFeatureMap {
    pub fn new(d: usize, p: u32) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidConfig("feature map needs d >= 1".into()));
        }
        let monomials = (0..=p).flat_map(|deg| compositions(deg, d)).collect();
        Ok(Self { d, p, monomials })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn degree(&self) -> u32 {
        self.p
    }

    pub fn monomials(&self) -> &[Vec<u32>] {
        &self.monomials
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    /// Human-readable monomial names, e.g. `1`, `l1`, `l1^2`, `l1*l2`.
    pub fn names(&self) -> Vec<String> {
        self.monomials
            .iter()
            .map(|m| {
                let parts: Vec<String> = m
                    .iter()
                    .enumerate()
                    .filter(|(_, &e)| e > 0)
                    .map(|(i, &e)| {
                        if e == 1 {
                            format!("l{}", i + 1)
                        } else {
                            format!("l{}^{e}", i + 1)
                        }
                    })
                    .collect();
                if parts.is_empty() {
                    "1".to_string()
                } else {
                    parts.join("*")
                }
            })
            .collect()
    }

    pub fn features(&self, lambda: &[f64]) -> Result<Vec<f64>> {
        if lambda.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                actual: lambda.len(),
            });
        }
        Ok(self
            .monomials
            .iter()
            .map(|m| m.iter().zip(lambda).map(|(&e, &x)| x.powi(e as i32)).product())
            .collect())
    }
}

pub fn poly_features(map: &PolyFeatureMap, lambda: &SimplexVector) -> Result<Vec<f64>> {
    map.features(lambda.weights())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub lambda: SimplexVector,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfModel {
    pub feature_map: PolyFeatureMap,
    pub weights: Vec<f64>,
}

impl PerfModel {
    pub fn new(feature_map: PolyFeatureMap, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != feature_map.len() {
            return Err(Error::DimensionMismatch {
                expected: feature_map.len(),
                actual: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::ModelFile("non-finite weight".into()));
        }
        Ok(Self { feature_map, weights })
    }

    pub fn dim(&self) -> usize {
        self.feature_map.dim()
    }

    pub fn predict(&self, lambda: &SimplexVector) -> Result<f64> {
        self.predict_raw(lambda.weights())
    }

    pub fn predict_raw(&self, lambda: &[f64]) -> Result<f64> {
        let phi = self.feature_map.features(lambda)?;
        Ok(phi.iter().zip(&self.weights).map(|(f, w)| f * w).sum())
    }

    /// Text dump: dimension, degree, then one `monomial exponents... weight` line per term.
    /// Weights carry 17 significant digits.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let mut s = String::new();
        writeln!(s, "{MODEL_HEADER}").unwrap();
        writeln!(s, "d {}", self.feature_map.dim()).unwrap();
        writeln!(s, "p {}", self.feature_map.degree()).unwrap();
        writeln!(s, "terms {}", self.weights.len()).unwrap();
        for ((m, w), name) in self
            .feature_map
            .monomials()
            .iter()
            .zip(&self.weights)
            .zip(self.feature_map.names())
        {
            let exps: Vec<String> = m.iter().map(u32::to_string).collect();
            writeln!(s, "{} {w:.16e} # {name}", exps.join(" ")).unwrap();
        }
        out.write_all(s.as_bytes())?;
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let bad = |m: &str| Error::ModelFile(m.to_string());
        let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
        let mut it = lines
            .iter()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty());
        if it.next() != Some(MODEL_HEADER) {
            return Err(bad("missing header"));
        }
        let mut field = |key: &str| -> Result<usize> {
            it.next()
                .and_then(|l| l.strip_prefix(key))
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::ModelFile(format!("missing {key}")))
        };
        let d = field("d ")?;
        let p = field("p ")? as u32;
        let terms = field("terms ")?;
        let map = PolyFeatureMap::new(d, p)?;
        if terms != map.len() {
            return Err(bad("term count does not match d and p"));
        }
        let mut weights = Vec::with_capacity(terms);
        for want in map.monomials() {
            let line = it.next().ok_or_else(|| bad("truncated terms"))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != d + 1 {
                return Err(bad("wrong field count in term line"));
            }
            let exps: Vec<u32> = fields[..d]
                .iter()
                .map(|e| e.parse().map_err(|_| bad("bad exponent")))
                .collect::<Result<_>>()?;
            if &exps != want {
                return Err(bad("monomial order does not match"));
            }
            weights.push(fields[d].parse().map_err(|_| bad("bad weight"))?);
        }
        if it.next().is_some() {
            return Err(bad("trailing content"));
        }
        PerfModel::new(map, weights)
    }
}

/// Ridge least squares: minimize `Σ_i (wᵀφ(λ_i) − y_i)² + eps·‖w‖²`.
///
/// When there are fewer observations than features the dual form
/// `w = Φᵀ(ΦΦᵀ + eps I)⁻¹ y` is solved, which tends to the minimum-norm
/// interpolant as `eps → 0`. With `eps = 0` an SVD pseudo-inverse is used.
pub fn fit(observations: &[Observation], map: &PolyFeatureMap, eps: f64) -> Result<PerfModel> {
    if observations.is_empty() {
        return Err(Error::NoObservations);
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidConfig(format!("ridge eps must be >= 0, got {eps}")));
    }
    let n = observations.len();
    let f = map.len();
    let mut phi = DMatrix::zeros(n, f);
    for (i, obs) in observations.iter().enumerate() {
        let row = map.features(obs.lambda.weights())?;
        if !obs.score.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "observation {i} has non-finite score"
            )));
        }
        for (j, v) in row.into_iter().enumerate() {
            phi[(i, j)] = v;
        }
    }
    let y = DVector::from_iterator(n, observations.iter().map(|o| o.score));

    let w = if eps == 0.0 {
        phi.clone()
            .svd(true, true)
            .solve(&y, 1e-12)
            .map_err(|e| Error::Solve(e.to_string()))?
    } else if n < f {
        let gram = &phi * phi.transpose() + DMatrix::identity(n, n) * eps;
        let alpha = gram
            .cholesky()
            .ok_or_else(|| Error::Solve("dual system not positive definite".into()))?
            .solve(&y);
        phi.transpose() * alpha
    } else {
        let gram = phi.transpose() * &phi + DMatrix::identity(f, f) * eps;
        gram.cholesky()
            .ok_or_else(|| Error::Solve("normal equations not positive definite".into()))?
            .solve(&(phi.transpose() * &y))
    };
    PerfModel::new(map.clone(), w.iter().copied().collect())
}

pub fn predict(model: &PerfModel, lambda: &SimplexVector) -> Result<f64> {
    model.predict(lambda)
}

/// How the discrete λ candidate set is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CandidateMethod {
    Grid { dim: usize, resolution: u32 },
    Dirichlet { alpha: DirichletParams, count: usize },
}

pub fn build_candidates<R: Rng + ?Sized>(
    method: &CandidateMethod,
    rng: &mut R,
) -> Result<Vec<SimplexVector>> {
    match method {
        CandidateMethod::Grid { dim, resolution } => simplex::grid(*dim, *resolution),
        CandidateMethod::Dirichlet { alpha, count } => {
            if *count == 0 {
                return Err(Error::EmptyCandidates);
            }
            Ok((0..*count)
                .map(|_| simplex::sample_dirichlet(alpha, rng))
                .collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerDist {
    pub candidates: Vec<SimplexVector>,
    pub scores: Vec<f64>,
    pub probs: Vec<f64>,
    pub tau: f64,
}

impl SchedulerDist {
    /// `probs = softmax(tau · scores)` over explicit scores.
    pub fn from_scores(candidates: Vec<SimplexVector>, scores: Vec<f64>, tau: f64) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        if candidates.len() != scores.len() {
            return Err(Error::DimensionMismatch {
                expected: candidates.len(),
                actual: scores.len(),
            });
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidConfig(format!("tau must be positive, got {tau}")));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig("non-finite scheduler score".into()));
        }
        let scaled: Vec<f64> = scores.iter().map(|s| tau * s).collect();
        let probs = softmax(&scaled);
        Ok(Self {
            candidates,
            scores,
            probs,
            tau,
        })
    }

    /// Index of a candidate drawn with probability `probs[i]`.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.probs.len() == 1 {
            return 0;
        }
        WeightedIndex::new(&self.probs)
            .expect("softmax weights are positive and finite")
            .sample(rng)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SimplexVector {
        self.candidates[self.sample_index(rng)].clone()
    }
}

pub fn make_distribution(
    model: &PerfModel,
    candidates: Vec<SimplexVector>,
    tau: f64,
) -> Result<SchedulerDist> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let scores = candidates
        .iter()
        .map(|c| model.predict(c))
        .collect::<Result<Vec<_>>>()?;
    SchedulerDist::from_scores(candidates, scores, tau)
}

pub fn sample<R: Rng + ?Sized>(dist: &SchedulerDist, rng: &mut R) -> SimplexVector {
    dist.sample(rng)
}

/// Read an observations CSV with header `lambda_1,…,lambda_d,score`.
///
/// Scores above [`PERCENT_THRESHOLD`] are taken as percentages.
pub fn read_observations<R: Read>(reader: R) -> Result<Vec<Observation>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let d = headers.len().saturating_sub(1);
    let well_formed = d >= 1
        && headers.get(d) == Some("score")
        && (0..d).all(|i| headers.get(i) == Some(format!("lambda_{}", i + 1).as_str()));
    if !well_formed {
        return Err(Error::Parse {
            path: "observations".into(),
            line: 1,
            message: format!(
                "expected header lambda_1,...,lambda_d,score, got {:?}",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let values: Vec<f64> = rec
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: "observations".into(),
                line,
                message: e.to_string(),
            })?;
        let lambda = SimplexVector::validate(&values[..d]).map_err(|e| Error::Parse {
            path: "observations".into(),
            line,
            message: e.to_string(),
        })?;
        let mut score = values[d];
        if score > PERCENT_THRESHOLD {
            score /= 100.0;
        }
        out.push(Observation { lambda, score });
    }
    Ok(out)
}

pub fn write_observations<W: Write>(out: W, observations: &[Observation]) -> Result<()> {
    let d = observations.first().map_or(0, |o| o.lambda.dim());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=d).map(|i| format!("lambda_{i}")).collect();
    header.push("score".into());
    w.write_record(&header)?;
    for o in observations {
        let mut row: Vec<String> = o.lambda.weights().iter().map(|x| x.to_string()).collect();
        row.push(o.score.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// The five published configurations: each one-hot vertex of Δ⁴ plus the barycenter.
pub fn published_observations() -> Vec<Observation> {
    let ys = [0.4563, 0.4561, 0.4578, 0.4553];
    let mut out: Vec<Observation> = ys
        .iter()
        .enumerate()
        .map(|(k, &y)| Observation {
            lambda: SimplexVector::one_hot(4, k).unwrap(),
            score: y,
        })
        .collect();
    out.push(Observation {
        lambda: SimplexVector::uniform(4).unwrap(),
        score: 0.4623,
    });
    out
}
