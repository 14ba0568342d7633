//! Workloads for the criterion benchmarks.

use ldpo_core::dataset::{ratings_to_targets, synthetic_groups};
use ldpo_core::fixtures::dimension_names;
use ldpo_core::rng::seeded;
use ldpo_core::{PreferenceTargets, PromptGroup, TabularPolicy, TargetMode};

/// `groups` prompts of `candidates` each, rated on `dims` dimensions, with
/// softmax targets and a zero-initialized tabular policy.
pub struct Workload {
    pub dims: Vec<String>,
    pub groups: Vec<PromptGroup>,
    pub targets: Vec<PreferenceTargets>,
    pub policy: TabularPolicy,
}

pub fn workload(groups: usize, candidates: usize, dims: usize, seed: u64) -> Workload {
    let dims = dimension_names(dims);
    let groups = synthetic_groups(groups, candidates, &dims, &mut seeded(seed));
    let targets = groups
        .iter()
        .map(|g| ratings_to_targets(g, &dims, TargetMode::default()).expect("synthetic ratings are valid"))
        .collect();
    let policy = TabularPolicy::zeros(&groups);
    Workload {
        dims,
        groups,
        targets,
        policy,
    }
}
