//! Multi-preference, lambda-weighted listwise DPO at desk scale.
//!
//! The crate is organized bottom-up:
//!
//! - [`simplex`]: weight vectors on the probability simplex, Dirichlet sampling, grids.
//! - [`dataset`]: multi-dimensional ratings, per-dimension listwise targets and their mixture.
//! - [`policy`]: tabular and log-linear toy policies, reference policies, `P_θ`.
//! - [`losses`]: Bradley-Terry, pairwise DPO, listwise and lambda-weighted losses with gradients.
//! - [`scheduler`]: polynomial performance model over lambda and the softmax sampling distribution.
//! - [`trainer`]: the seeded optimization loop and evaluation metrics.
//!
//! [`fixtures`] holds seeded synthetic instances used by tests and benchmarks.

pub mod dataset;
pub mod error;
pub mod fixtures;
pub mod losses;
mod numeric;
pub mod policy;
pub mod rng;
pub mod scheduler;
pub mod simplex;
pub mod trainer;

pub use dataset::{Candidate, PreferenceTargets, PromptGroup, TargetMode, DEFAULT_DIMENSIONS};
pub use error::{Error, Result};
pub use losses::{GradientVector, LossValue};
pub use policy::{LogLinearPolicy, Policy, ReferencePolicy, TabularPolicy};
pub use scheduler::{Observation, PerfModel, PolyFeatureMap, SchedulerDist};
pub use simplex::{DirichletParams, SimplexVector};
pub use trainer::{EvalMetrics, TrainConfig, TrainReport};
