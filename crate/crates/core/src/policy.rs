//! Toy policies over candidate groups.
//!
//! A policy assigns every candidate in a [`PromptGroup`] an unnormalized score
//! and normalizes within the group, so `log π_θ(y_i|x)` is a log-softmax over
//! the group's scores. Only within-group ratios reach the listwise
//! distribution, which keeps every quantity the losses consume exact.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::dataset::PromptGroup;
use crate::error::{Error, Result};
use crate::losses::GradientVector;
use crate::numeric::{log_softmax, softmax};
use crate::rng::fnv1a64;

pub const DEFAULT_FEATURE_DIM: usize = 256;
pub const DEFAULT_FEATURE_SEED: u64 = 0x6c64_706f;

pub trait Policy: Clone + Send + Sync {
    fn num_params(&self) -> usize;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    /// Unnormalized log-scores, one per candidate.
    fn scores(&self, group: &PromptGroup) -> Result<Vec<f64>>;

    /// Sparse gradient of candidate `index`'s unnormalized score.
    fn score_grad(&self, group: &PromptGroup, index: usize) -> Result<Vec<(usize, f64)>>;

    /// `log π_θ(y_i|x)` for every candidate in the group.
    fn logprobs(&self, group: &PromptGroup) -> Result<Vec<f64>> {
        Ok(log_softmax(&self.scores(group)?))
    }

    fn logprob(&self, group: &PromptGroup, index: usize) -> Result<f64> {
        check_index(group, index)?;
        Ok(self.logprobs(group)?[index])
    }

    /// `∇_θ log π_θ(y_i|x)`: the score gradient minus its within-group softmax average.
    fn grad_logprob(&self, group: &PromptGroup, index: usize) -> Result<GradientVector> {
        check_index(group, index)?;
        let probs = softmax(&self.scores(group)?);
        let mut grad = GradientVector::new();
        for (j, &p) in probs.iter().enumerate() {
            for (k, v) in self.score_grad(group, j)? {
                grad.add(k, -p * v);
            }
        }
        for (k, v) in self.score_grad(group, index)? {
            grad.add(k, v);
        }
        Ok(grad)
    }
}

fn check_index(group: &PromptGroup, index: usize) -> Result<()> {
    if index >= group.len() {
        return Err(Error::IndexOutOfRange {
            index,
            len: group.len(),
        });
    }
    Ok(())
}

/// One free logit per (prompt, candidate) pair.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TabularPolicy {
    index: HashMap<String, HashMap<String, usize>>,
    keys: Vec<(String, String)>,
    logits: Vec<f64>,
}

impl TabularPolicy {
    /// All-zero logits for every candidate in `groups`, in data order.
    pub fn zeros(groups: &[PromptGroup]) -> Self {
        let mut p = Self::default();
        for g in groups {
            for c in &g.candidates {
                p.insert(&g.prompt_id, &c.id, 0.0);
            }
        }
        p
    }

    /// Set a logit, creating the entry if it does not exist.
    pub fn insert(&mut self, prompt_id: &str, candidate_id: &str, logit: f64) {
        if let Some(i) = self.position(prompt_id, candidate_id) {
            self.logits[i] = logit;
            return;
        }
        let i = self.logits.len();
        self.index
            .entry(prompt_id.to_string())
            .or_default()
            .insert(candidate_id.to_string(), i);
        self.keys.push((prompt_id.to_string(), candidate_id.to_string()));
        self.logits.push(logit);
    }

    pub fn position(&self, prompt_id: &str, candidate_id: &str) -> Option<usize> {
        self.index.get(prompt_id)?.get(candidate_id).copied()
    }

    pub fn logit(&self, prompt_id: &str, candidate_id: &str) -> Option<f64> {
        self.position(prompt_id, candidate_id).map(|i| self.logits[i])
    }

    /// `(prompt_id, candidate_id)` for each parameter, in parameter order.
    pub fn keys(&self) -> &[(String, String)] {
        &self.keys
    }

    fn group_positions(&self, group: &PromptGroup) -> Result<Vec<usize>> {
        group
            .candidates
            .iter()
            .map(|c| {
                self.position(&group.prompt_id, &c.id)
                    .ok_or_else(|| Error::MissingParameter {
                        prompt_id: group.prompt_id.clone(),
                        candidate_id: c.id.clone(),
                    })
            })
            .collect()
    }
}

impl Policy for TabularPolicy {
    fn num_params(&self) -> usize {
        self.logits.len()
    }

    fn params(&self) -> &[f64] {
        &self.logits
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    fn scores(&self, group: &PromptGroup) -> Result<Vec<f64>> {
        Ok(self
            .group_positions(group)?
            .into_iter()
            .map(|i| self.logits[i])
            .collect())
    }

    fn score_grad(&self, group: &PromptGroup, index: usize) -> Result<Vec<(usize, f64)>> {
        check_index(group, index)?;
        let c = &group.candidates[index];
        let i = self
            .position(&group.prompt_id, &c.id)
            .ok_or_else(|| Error::MissingParameter {
                prompt_id: group.prompt_id.clone(),
                candidate_id: c.id.clone(),
            })?;
        Ok(vec![(i, 1.0)])
    }
}

/// Deterministic candidate features for [`LogLinearPolicy`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureFn {
    /// Bag of character trigrams hashed into `dim` buckets, ℓ2-normalized.
    HashedTrigrams { dim: usize, seed: u64 },
    /// Explicit vectors looked up by candidate text.
    Table {
        dim: usize,
        vectors: BTreeMap<String, Vec<f64>>,
    },
}

impl Default for FeatureFn {
    fn default() -> Self {
        FeatureFn::HashedTrigrams {
            dim: DEFAULT_FEATURE_DIM,
            seed: DEFAULT_FEATURE_SEED,
        }
    }
}

impl FeatureFn {
    pub fn dim(&self) -> usize {
        match self {
            FeatureFn::HashedTrigrams { dim, .. } | FeatureFn::Table { dim, .. } => *dim,
        }
    }

    /// Features of a candidate. The prompt is shared by the whole group, so
    /// prompt-only features would cancel in the within-group normalization;
    /// both built-in maps depend on the candidate text alone.
    pub fn features(&self, _prompt: &str, text: &str) -> Option<Vec<f64>> {
        match self {
            FeatureFn::HashedTrigrams { dim, seed } => Some(hashed_trigrams(text, *dim, *seed)),
            FeatureFn::Table { vectors, .. } => vectors.get(text).cloned(),
        }
    }
}

fn hashed_trigrams(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    // boundary markers so short texts still produce trigrams
    let chars: Vec<char> = std::iter::once('\u{2}')
        .chain(text.chars())
        .chain(std::iter::once('\u{3}'))
        .collect();
    let mut buf = String::with_capacity(12);
    for w in chars.windows(3) {
        buf.clear();
        buf.extend(w);
        let h = fnv1a64(buf.as_bytes(), seed);
        v[(h % dim as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

/// `log π_θ(y|x) ∝ wᵀφ(x, y)` within each group.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLinearPolicy {
    weights: Vec<f64>,
    features: FeatureFn,
}

impl LogLinearPolicy {
    pub fn new(features: FeatureFn) -> Result<Self> {
        Self::with_weights(features.clone(), vec![0.0; features.dim()])
    }

    pub fn with_weights(features: FeatureFn, weights: Vec<f64>) -> Result<Self> {
        if features.dim() == 0 {
            return Err(Error::InvalidConfig("feature dimension must be >= 1".into()));
        }
        if weights.len() != features.dim() {
            return Err(Error::DimensionMismatch {
                expected: features.dim(),
                actual: weights.len(),
            });
        }
        if let FeatureFn::Table { dim, vectors } = &features {
            if let Some(bad) = vectors.values().find(|v| v.len() != *dim) {
                return Err(Error::DimensionMismatch {
                    expected: *dim,
                    actual: bad.len(),
                });
            }
        }
        Ok(Self { weights, features })
    }

    pub fn feature_fn(&self) -> &FeatureFn {
        &self.features
    }

    fn candidate_features(&self, group: &PromptGroup, index: usize) -> Result<Vec<f64>> {
        let c = &group.candidates[index];
        self.features
            .features(&group.prompt, &c.text)
            .ok_or_else(|| Error::MissingParameter {
                prompt_id: group.prompt_id.clone(),
                candidate_id: c.id.clone(),
            })
    }
}

impl Policy for LogLinearPolicy {
    fn num_params(&self) -> usize {
        self.weights.len()
    }

    fn params(&self) -> &[f64] {
        &self.weights
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn scores(&self, group: &PromptGroup) -> Result<Vec<f64>> {
        (0..group.len())
            .map(|i| {
                let phi = self.candidate_features(group, i)?;
                Ok(phi.iter().zip(&self.weights).map(|(f, w)| f * w).sum())
            })
            .collect()
    }

    fn score_grad(&self, group: &PromptGroup, index: usize) -> Result<Vec<(usize, f64)>> {
        check_index(group, index)?;
        Ok(self
            .candidate_features(group, index)?
            .into_iter()
            .enumerate()
            .filter(|(_, f)| *f != 0.0)
            .collect())
    }
}

/// Either policy kind, chosen at runtime.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyPolicy {
    Tabular(TabularPolicy),
    LogLinear(LogLinearPolicy),
}

impl AnyPolicy {
    pub fn kind(&self) -> &'static str {
        match self {
            AnyPolicy::Tabular(_) => "tabular",
            AnyPolicy::LogLinear(_) => "loglinear",
        }
    }
}

macro_rules! delegate {
    ($self:ident, $p:ident => $e:expr) => {
        match $self {
            AnyPolicy::Tabular($p) => $e,
            AnyPolicy::LogLinear($p) => $e,
        }
    };
}

impl Policy for AnyPolicy {
    fn num_params(&self) -> usize {
        delegate!(self, p => p.num_params())
    }

    fn params(&self) -> &[f64] {
        delegate!(self, p => p.params())
    }

    fn params_mut(&mut self) -> &mut [f64] {
        delegate!(self, p => p.params_mut())
    }

    fn scores(&self, group: &PromptGroup) -> Result<Vec<f64>> {
        delegate!(self, p => p.scores(group))
    }

    fn score_grad(&self, group: &PromptGroup, index: usize) -> Result<Vec<(usize, f64)>> {
        delegate!(self, p => p.score_grad(group, index))
    }
}

/// The frozen reference `π_ref`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferencePolicy {
    /// `π_ref = 1/N` within every group.
    #[default]
    Uniform,
    /// Use each candidate's `ref_logprob`.
    FromData,
}

impl ReferencePolicy {
    pub fn logprobs(&self, group: &PromptGroup) -> Result<Vec<f64>> {
        match self {
            ReferencePolicy::Uniform => Ok(vec![-(group.len() as f64).ln(); group.len()]),
            ReferencePolicy::FromData => group
                .candidates
                .iter()
                .map(|c| {
                    c.ref_logprob.ok_or_else(|| Error::MissingReference {
                        prompt_id: group.prompt_id.clone(),
                        candidate_id: c.id.clone(),
                    })
                })
                .collect(),
        }
    }

    /// `FromData` when every candidate carries a reference log-prob, else `Uniform`.
    pub fn infer(groups: &[PromptGroup]) -> Self {
        let all = groups
            .iter()
            .flat_map(|g| &g.candidates)
            .all(|c| c.ref_logprob.is_some());
        if all && !groups.is_empty() {
            ReferencePolicy::FromData
        } else {
            ReferencePolicy::Uniform
        }
    }
}

/// `log π_θ − log π_ref` per candidate.
pub fn log_ratios<P: Policy>(
    policy: &P,
    reference: &ReferencePolicy,
    group: &PromptGroup,
) -> Result<Vec<f64>> {
    let lp = policy.logprobs(group)?;
    let lr = reference.logprobs(group)?;
    lp.iter()
        .zip(&lr)
        .enumerate()
        .map(|(index, (a, b))| {
            let r = a - b;
            if r.is_finite() {
                Ok(r)
            } else {
                Err(Error::NonFiniteLogRatio { index })
            }
        })
        .collect()
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("beta must be positive, got {beta}")))
    }
}

/// `log P_θ(y_i|x)`: log-softmax of `β · (log π_θ − log π_ref)`.
pub fn listwise_log_distribution<P: Policy>(
    policy: &P,
    reference: &ReferencePolicy,
    group: &PromptGroup,
    beta: f64,
) -> Result<Vec<f64>> {
    check_beta(beta)?;
    let scaled: Vec<f64> = log_ratios(policy, reference, group)?
        .into_iter()
        .map(|r| beta * r)
        .collect();
    Ok(log_softmax(&scaled))
}

/// `P_θ(y_i|x) = (π_θ/π_ref)^β / Σ_j (π_θ/π_ref)^β`, computed in log space.
pub fn listwise_distribution<P: Policy>(
    policy: &P,
    reference: &ReferencePolicy,
    group: &PromptGroup,
    beta: f64,
) -> Result<Vec<f64>> {
    check_beta(beta)?;
    let scaled: Vec<f64> = log_ratios(policy, reference, group)?
        .into_iter()
        .map(|r| beta * r)
        .collect();
    Ok(softmax(&scaled))
}

/// A policy plus the dimension names it was trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub policy: AnyPolicy,
    pub dims: Vec<String>,
}

const CHECKPOINT_MAGIC: &str = "ldpo-policy 1";

fn quote(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

impl Checkpoint {
    /// Line-oriented text dump. Floats use Rust's shortest round-trip
    /// representation, so reading back reproduces every bit.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let mut s = String::new();
        writeln!(s, "{CHECKPOINT_MAGIC}").unwrap();
        writeln!(s, "kind {}", self.policy.kind()).unwrap();
        writeln!(s, "dims {}", quote(&self.dims.join(","))).unwrap();
        match &self.policy {
            AnyPolicy::Tabular(p) => {
                writeln!(s, "params {}", p.num_params()).unwrap();
                for ((prompt, cand), v) in p.keys().iter().zip(p.params()) {
                    writeln!(s, "entry {} {} {v:e}", quote(prompt), quote(cand)).unwrap();
                }
            }
            AnyPolicy::LogLinear(p) => {
                match p.feature_fn() {
                    FeatureFn::HashedTrigrams { dim, seed } => {
                        writeln!(s, "features hashed_trigrams {dim} {seed}").unwrap();
                    }
                    FeatureFn::Table { dim, vectors } => {
                        writeln!(s, "features table {dim} {}", vectors.len()).unwrap();
                        for (text, v) in vectors {
                            write!(s, "vector {}", quote(text)).unwrap();
                            for x in v {
                                write!(s, " {x:e}").unwrap();
                            }
                            s.push('\n');
                        }
                    }
                }
                writeln!(s, "params {}", p.num_params()).unwrap();
                for (i, v) in p.params().iter().enumerate() {
                    writeln!(s, "weight {i} {v:e}").unwrap();
                }
            }
        }
        out.write_all(s.as_bytes())?;
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
        let mut it = lines.iter().map(String::as_str).filter(|l| !l.trim().is_empty());
        let bad = |m: String| Error::Checkpoint(m);

        if it.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad("missing header".into()));
        }
        let kind = it
            .next()
            .and_then(|l| l.strip_prefix("kind "))
            .ok_or_else(|| bad("missing kind".into()))?
            .to_string();
        let dims_line = it
            .next()
            .and_then(|l| l.strip_prefix("dims "))
            .ok_or_else(|| bad("missing dims".into()))?;
        let dims_joined: String = serde_json::from_str(dims_line).map_err(|e| bad(format!("dims: {e}")))?;
        let dims = if dims_joined.is_empty() {
            Vec::new()
        } else {
            dims_joined.split(',').map(str::to_string).collect()
        };

        let policy = match kind.as_str() {
            "tabular" => {
                let count = parse_count(it.next(), "params")?;
                let mut p = TabularPolicy::default();
                for _ in 0..count {
                    let line = it
                        .next()
                        .and_then(|l| l.strip_prefix("entry "))
                        .ok_or_else(|| bad("truncated entries".into()))?;
                    let mut de = serde_json::Deserializer::from_str(line).into_iter::<String>();
                    let prompt = next_string(&mut de)?;
                    let cand = next_string(&mut de)?;
                    let rest = &line[de.byte_offset()..];
                    p.insert(&prompt, &cand, parse_f64(rest.trim())?);
                }
                AnyPolicy::Tabular(p)
            }
            "loglinear" => {
                let feat = it
                    .next()
                    .and_then(|l| l.strip_prefix("features "))
                    .ok_or_else(|| bad("missing features".into()))?;
                let parts: Vec<&str> = feat.split_whitespace().collect();
                let features = match parts.as_slice() {
                    ["hashed_trigrams", dim, seed] => FeatureFn::HashedTrigrams {
                        dim: dim.parse().map_err(|_| bad("bad dim".into()))?,
                        seed: seed.parse().map_err(|_| bad("bad seed".into()))?,
                    },
                    ["table", dim, count] => {
                        let count: usize = count.parse().map_err(|_| bad("bad count".into()))?;
                        let mut vectors = BTreeMap::new();
                        for _ in 0..count {
                            let line = it
                                .next()
                                .and_then(|l| l.strip_prefix("vector "))
                                .ok_or_else(|| bad("truncated vectors".into()))?;
                            let mut de = serde_json::Deserializer::from_str(line).into_iter::<String>();
                            let text = next_string(&mut de)?;
                            let v = line[de.byte_offset()..]
                                .split_whitespace()
                                .map(parse_f64)
                                .collect::<Result<Vec<_>>>()?;
                            vectors.insert(text, v);
                        }
                        FeatureFn::Table {
                            dim: dim.parse().map_err(|_| bad("bad dim".into()))?,
                            vectors,
                        }
                    }
                    _ => return Err(bad(format!("unknown features line {feat:?}"))),
                };
                let count = parse_count(it.next(), "params")?;
                let mut weights = Vec::with_capacity(count);
                for i in 0..count {
                    let line = it
                        .next()
                        .and_then(|l| l.strip_prefix("weight "))
                        .ok_or_else(|| bad("truncated weights".into()))?;
                    let (idx, v) = line
                        .split_once(' ')
                        .ok_or_else(|| bad(format!("bad weight line {line:?}")))?;
                    if idx.parse::<usize>().ok() != Some(i) {
                        return Err(bad(format!("weight index {idx} out of order")));
                    }
                    weights.push(parse_f64(v)?);
                }
                AnyPolicy::LogLinear(
                    LogLinearPolicy::with_weights(features, weights).map_err(|e| bad(e.to_string()))?,
                )
            }
            other => return Err(bad(format!("unknown policy kind {other:?}"))),
        };
        if let Some(extra) = it.next() {
            return Err(bad(format!("trailing content {extra:?}")));
        }
        Ok(Self { policy, dims })
    }
}

fn parse_count(line: Option<&str>, key: &str) -> Result<usize> {
    line.and_then(|l| l.strip_prefix(key))
        .and_then(|l| l.trim().parse().ok())
        .ok_or_else(|| Error::Checkpoint(format!("missing {key} count")))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Checkpoint(format!("bad number {s:?}")))
}

fn next_string<'a, R: serde_json::de::Read<'a>>(
    de: &mut serde_json::StreamDeserializer<'a, R, String>,
) -> Result<String> {
    de.next()
        .ok_or_else(|| Error::Checkpoint("expected quoted string".into()))?
        .map_err(|e| Error::Checkpoint(e.to_string()))
}
