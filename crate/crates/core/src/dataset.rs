//! Multi-dimensional preference data and listwise targets.
//!
//! Each [`PromptGroup`] holds `N >= 2` candidates rated independently on `m`
//! named dimensions. [`ratings_to_targets`] turns every dimension's ratings into
//! a listwise distribution over the candidates, and [`mix_targets`] forms the
//! convex combination `p^λ = Σ_k λ_k p^(k)` used as the training target.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::softmax;
use crate::simplex::SimplexVector;

pub const DEFAULT_DIMENSIONS: [&str; 4] = ["helpfulness", "honesty", "instruction-following", "fluency"];

pub fn default_dimensions() -> Vec<String> {
    DEFAULT_DIMENSIONS.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    #[serde(default)]
    pub text: String,
    pub scores: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_logprob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptGroup {
    pub prompt_id: String,
    #[serde(default)]
    pub prompt: String,
    pub candidates: Vec<Candidate>,
}

impl PromptGroup {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Check the structural invariants against the declared dimension names.
    pub fn check(&self, dims: &[String]) -> Result<()> {
        if self.candidates.len() < 2 {
            return Err(Error::TooFewCandidates {
                prompt_id: self.prompt_id.clone(),
                count: self.candidates.len(),
            });
        }
        let mut seen = HashSet::new();
        for c in &self.candidates {
            if !seen.insert(c.id.as_str()) {
                return Err(Error::DuplicateCandidateId {
                    prompt_id: self.prompt_id.clone(),
                    candidate_id: c.id.clone(),
                });
            }
            for d in dims {
                if !c.scores.contains_key(d) {
                    return Err(Error::MissingDimension {
                        prompt_id: self.prompt_id.clone(),
                        candidate_id: c.id.clone(),
                        dimension: d.clone(),
                    });
                }
            }
            if let Some(extra) = c.scores.keys().find(|k| !dims.contains(k)) {
                return Err(Error::UnknownDimension {
                    prompt_id: self.prompt_id.clone(),
                    candidate_id: c.id.clone(),
                    dimension: extra.clone(),
                });
            }
            if let Some(r) = c.ref_logprob {
                if !r.is_finite() {
                    return Err(Error::InvalidConfig(format!(
                        "prompt {}: candidate {} has non-finite ref_logprob",
                        self.prompt_id, c.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Parse JSONL groups from `reader`. `source` only labels error messages.
pub fn read_jsonl<R: BufRead>(reader: R, source: &Path, dims: &[String]) -> Result<Vec<PromptGroup>> {
    let mut groups = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let group: PromptGroup = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: source.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        group.check(dims)?;
        groups.push(group);
    }
    Ok(groups)
}

pub fn load_jsonl(path: impl AsRef<Path>, dims: &[String]) -> Result<Vec<PromptGroup>> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_jsonl(BufReader::new(file), path, dims)
}

pub fn write_jsonl<W: Write>(mut out: W, groups: &[PromptGroup]) -> Result<()> {
    for g in groups {
        let line = serde_json::to_string(g).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// How one dimension's ratings become a distribution over candidates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetMode {
    /// `p_i ∝ exp(s_i / T)`.
    Softmax { temperature: f64 },
    /// `p_i = s_i / Σ_j s_j`; scores must be nonnegative with a positive total.
    Normalized,
}

impl Default for TargetMode {
    fn default() -> Self {
        TargetMode::Softmax { temperature: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTargets {
    pub dimensions: Vec<String>,
    /// One distribution over the group's candidates per dimension.
    pub per_dim: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixed: Option<Vec<f64>>,
}

impl PreferenceTargets {
    pub fn num_dims(&self) -> usize {
        self.per_dim.len()
    }

    pub fn num_candidates(&self) -> usize {
        self.per_dim.first().map_or(0, Vec::len)
    }

    /// Targets restricted to dimension `k` alone, as a one-dimensional set.
    pub fn select_dimension(&self, k: usize) -> Result<Self> {
        let row = self.per_dim.get(k).ok_or(Error::IndexOutOfRange {
            index: k,
            len: self.per_dim.len(),
        })?;
        Ok(Self {
            dimensions: vec![self.dimensions[k].clone()],
            per_dim: vec![row.clone()],
            mixed: None,
        })
    }
}

pub fn ratings_to_targets(
    group: &PromptGroup,
    dims: &[String],
    mode: TargetMode,
) -> Result<PreferenceTargets> {
    if let TargetMode::Softmax { temperature } = mode {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "preference temperature must be positive, got {temperature}"
            )));
        }
    }
    let mut per_dim = Vec::with_capacity(dims.len());
    for d in dims {
        let mut scores = Vec::with_capacity(group.len());
        for c in &group.candidates {
            let s = *c.scores.get(d).ok_or_else(|| Error::MissingDimension {
                prompt_id: group.prompt_id.clone(),
                candidate_id: c.id.clone(),
                dimension: d.clone(),
            })?;
            if !s.is_finite() {
                return Err(Error::NonFiniteScore {
                    candidate_id: c.id.clone(),
                    dimension: d.clone(),
                    value: s,
                });
            }
            scores.push(s);
        }
        let row = match mode {
            TargetMode::Softmax { temperature } => {
                let scaled: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
                softmax(&scaled)
            }
            TargetMode::Normalized => {
                if let Some((i, &s)) = scores.iter().enumerate().find(|(_, s)| **s < 0.0) {
                    return Err(Error::NegativeScore {
                        candidate_id: group.candidates[i].id.clone(),
                        dimension: d.clone(),
                        value: s,
                    });
                }
                let total: f64 = scores.iter().sum();
                if total <= 0.0 {
                    return Err(Error::NegativeScore {
                        candidate_id: group.candidates[0].id.clone(),
                        dimension: d.clone(),
                        value: total,
                    });
                }
                scores.iter().map(|s| s / total).collect()
            }
        };
        per_dim.push(row);
    }
    Ok(PreferenceTargets {
        dimensions: dims.to_vec(),
        per_dim,
        mixed: None,
    })
}

/// `Σ_k λ_k row_k`, accumulated in dimension order.
///
/// Zero weights contribute exact zeros, so a one-hot `λ` reproduces its row bit for bit.
pub fn mix_rows(per_dim: &[Vec<f64>], lambda: &SimplexVector) -> Result<Vec<f64>> {
    if lambda.dim() != per_dim.len() {
        return Err(Error::DimensionMismatch {
            expected: per_dim.len(),
            actual: lambda.dim(),
        });
    }
    let n = per_dim.first().map_or(0, Vec::len);
    let mut mixed = vec![0.0; n];
    for (row, &w) in per_dim.iter().zip(lambda.weights()) {
        for (acc, &p) in mixed.iter_mut().zip(row) {
            *acc += w * p;
        }
    }
    Ok(mixed)
}

pub fn mix_targets(targets: &PreferenceTargets, lambda: &SimplexVector) -> Result<PreferenceTargets> {
    let mixed = mix_rows(&targets.per_dim, lambda)?;
    Ok(PreferenceTargets {
        mixed: Some(mixed),
        ..targets.clone()
    })
}

/// The hard pairwise target: all mass on the winner of a two-candidate group.
pub fn pairwise_target(winner: usize, n: usize) -> Result<Vec<f64>> {
    if n != 2 {
        return Err(Error::UnsupportedN(n));
    }
    if winner >= 2 {
        return Err(Error::IndexOutOfRange {
            index: winner,
            len: 2,
        });
    }
    let mut t = vec![0.0; 2];
    t[winner] = 1.0;
    Ok(t)
}

/// Random groups with integer ratings in 1..=5 and random reference log-probs.
///
/// Candidate texts are distinct short strings so hashed text features differ.
pub fn synthetic_groups<R: Rng + ?Sized>(
    num_groups: usize,
    num_candidates: usize,
    dims: &[String],
    rng: &mut R,
) -> Vec<PromptGroup> {
    const WORDS: [&str; 12] = [
        "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet", "kilo",
        "lima",
    ];
    (0..num_groups)
        .map(|g| {
            let candidates = (0..num_candidates)
                .map(|c| {
                    let text = (0..4)
                        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
                        .collect::<Vec<_>>()
                        .join(" ");
                    Candidate {
                        id: format!("c{c}"),
                        text: format!("{text} #{c}"),
                        scores: dims
                            .iter()
                            .map(|d| (d.clone(), f64::from(rng.random_range(1..=5u8))))
                            .collect(),
                        ref_logprob: Some(-rng.random_range(5.0..40.0)),
                    }
                })
                .collect();
            PromptGroup {
                prompt_id: format!("p{g}"),
                prompt: format!("synthetic prompt {g}"),
                candidates,
            }
        })
        .collect()
}
