use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::ValueEnum;
use ldpo_core::dataset::PromptGroup;
use ldpo_core::policy::ReferencePolicy;
use ldpo_core::rng::derived;
use ldpo_core::scheduler::{self, CandidateMethod, PerfModel, PolyFeatureMap, SchedulerDist, MODEL_HEADER};
use ldpo_core::simplex::{self, DirichletParams};
use ldpo_core::{SimplexVector, TargetMode};
use serde::{Deserialize, Serialize};

use crate::failure::{CmdResult, Failure};
use crate::io::{open, read_bytes};

pub const SEED_ENV: &str = "LDPO_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyArg {
    Tabular,
    Loglinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceArg {
    /// Use `ref_logprob` when every candidate has one, otherwise uniform.
    Auto,
    Uniform,
    Data,
}

impl ReferenceArg {
    pub fn resolve(self, groups: &[PromptGroup]) -> ReferencePolicy {
        match self {
            ReferenceArg::Auto => ReferencePolicy::infer(groups),
            ReferenceArg::Uniform => ReferencePolicy::Uniform,
            ReferenceArg::Data => ReferencePolicy::FromData,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetModeArg {
    Softmax,
    Normalized,
}

pub fn target_mode(mode: TargetModeArg, temperature: f64) -> TargetMode {
    match mode {
        TargetModeArg::Softmax => TargetMode::Softmax { temperature },
        TargetModeArg::Normalized => TargetMode::Normalized,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleArg {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GranularityArg {
    PerPrompt,
    PerBatch,
}

/// How λ is chosen: `uniform`, `fixed:a,b,...`, `onehot:k` or `scheduler:PATH`.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaSpec {
    Uniform,
    Fixed(SimplexVector),
    OneHot(usize),
    Scheduler(PathBuf),
}

impl FromStr for LambdaSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "uniform" if rest.is_empty() => Ok(LambdaSpec::Uniform),
            "fixed" => rest
                .parse()
                .map(LambdaSpec::Fixed)
                .map_err(|e| format!("bad lambda {rest:?}: {e}")),
            "onehot" => rest
                .parse()
                .map(LambdaSpec::OneHot)
                .map_err(|_| format!("bad one-hot index {rest:?}")),
            "scheduler" if !rest.is_empty() => Ok(LambdaSpec::Scheduler(PathBuf::from(rest))),
            _ => Err(format!(
                "unknown lambda spec {s:?}; expected uniform, fixed:a,b,..., onehot:k or scheduler:PATH"
            )),
        }
    }
}

impl LambdaSpec {
    /// The concrete vector for `fixed` and `onehot`, checked against `m` dimensions.
    pub fn fixed_vector(&self, m: usize) -> CmdResult<Option<SimplexVector>> {
        match self {
            LambdaSpec::Fixed(v) if v.dim() != m => Err(Failure::config(format!(
                "lambda has {} entries but there are {m} dimensions",
                v.dim()
            ))),
            LambdaSpec::Fixed(v) => Ok(Some(v.clone())),
            LambdaSpec::OneHot(k) => SimplexVector::one_hot(m, *k).map(Some).map_err(Failure::config),
            _ => Ok(None),
        }
    }
}

/// Flag value, else `LDPO_SEED`, else `None`.
pub fn seed_from_env(flag: Option<u64>) -> CmdResult<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

pub fn parse_dims(raw: &[String]) -> CmdResult<Vec<String>> {
    let dims: Vec<String> = raw.iter().map(|d| d.trim().to_string()).collect();
    if dims.is_empty() || dims.iter().any(String::is_empty) {
        return Err(Failure::config("dimension names must be nonempty"));
    }
    let mut sorted = dims.clone();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != dims.len() {
        return Err(Failure::config("dimension names must be distinct"));
    }
    Ok(dims)
}

/// Dirichlet concentration from `a` (symmetric) or `a1,...,ad`.
pub fn parse_alpha(raw: &str, d: usize) -> CmdResult<DirichletParams> {
    let values: Vec<f64> = raw
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::config(format!("bad alpha {raw:?}: {e}")))?;
    let alpha = match values.len() {
        1 => vec![values[0]; d],
        n if n == d => values,
        n => {
            return Err(Failure::data(format!(
                "alpha has {n} entries but the model has {d} dimensions"
            )))
        }
    };
    DirichletParams::new(alpha).map_err(Failure::config)
}

/// A model file, or an observations CSV that is fitted on the spot.
pub fn load_model(path: &Path, degree: u32, ridge: f64) -> CmdResult<PerfModel> {
    let bytes = read_bytes(path)?;
    let is_model = bytes
        .split(|b| *b == b'\n')
        .next()
        .is_some_and(|l| l.trim_ascii() == MODEL_HEADER.as_bytes());
    if is_model {
        return PerfModel::read(&bytes[..]).map_err(|e| Failure::at(path, e));
    }
    let obs = scheduler::read_observations(open(path)?).map_err(|e| Failure::at(path, e))?;
    let d = obs.first().map_or(0, |o| o.lambda.dim());
    let map = PolyFeatureMap::new(d, degree).map_err(Failure::config)?;
    scheduler::fit(&obs, &map, ridge).map_err(|e| Failure::at(path, e))
}

/// Candidate λ set drawn from the stream that `seed` reserves for the scheduler.
pub fn scheduler_candidates(
    d: usize,
    alpha: &DirichletParams,
    count: usize,
    grid: Option<u32>,
    seed: u64,
) -> CmdResult<Vec<SimplexVector>> {
    let method = match grid {
        Some(resolution) => CandidateMethod::Grid { dim: d, resolution },
        None => CandidateMethod::Dirichlet {
            alpha: alpha.clone(),
            count,
        },
    };
    scheduler::build_candidates(&method, &mut derived(seed, "scheduler/candidates")).map_err(Failure::config)
}

pub fn scheduler_dist(
    model: &PerfModel,
    dims: usize,
    count: usize,
    tau: f64,
    seed: u64,
) -> CmdResult<SchedulerDist> {
    if model.dim() != dims {
        return Err(Failure::data(format!(
            "performance model covers {} dimensions, data has {dims}",
            model.dim()
        )));
    }
    let alpha = DirichletParams::flat(dims).map_err(Failure::config)?;
    let candidates = scheduler_candidates(dims, &alpha, count, None, seed)?;
    scheduler::make_distribution(model, candidates, tau).map_err(Failure::config)
}

pub fn lambda_header(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("lambda_{i}")).collect()
}

pub fn grid(d: usize, resolution: u32) -> CmdResult<Vec<SimplexVector>> {
    simplex::grid(d, resolution).map_err(Failure::config)
}
