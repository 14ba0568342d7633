//! Seeded synthetic instances shared by tests, benchmarks and the CLI's checks.

use std::collections::BTreeMap;

use rand::Rng;

use crate::dataset::{
    ratings_to_targets, synthetic_groups, Candidate, PreferenceTargets, PromptGroup, TargetMode,
};
use crate::policy::{AnyPolicy, FeatureFn, LogLinearPolicy, Policy, ReferencePolicy, TabularPolicy};
use crate::rng::seeded;
use crate::simplex::{sample_uniform, SimplexVector};

/// The β values the randomized instances draw from.
pub const BETAS: [f64; 3] = [0.05, 0.1, 1.0];

/// One group with everything needed to evaluate the lambda-weighted loss.
#[derive(Debug, Clone)]
pub struct Instance {
    pub group: PromptGroup,
    pub dims: Vec<String>,
    pub targets: PreferenceTargets,
    pub lambda: SimplexVector,
    pub beta: f64,
    pub policy: AnyPolicy,
    pub reference: ReferencePolicy,
}

pub fn dimension_names(m: usize) -> Vec<String> {
    (1..=m).map(|k| format!("d{k}")).collect()
}

/// A group of `n` candidates with real-valued scores in `[1, 5]` and reference log-probs.
pub fn random_group<R: Rng + ?Sized>(prompt_id: &str, n: usize, dims: &[String], rng: &mut R) -> PromptGroup {
    let candidates = (0..n)
        .map(|i| Candidate {
            id: format!("c{i}"),
            text: format!("{prompt_id} candidate {i} {:x}", rng.random::<u32>()),
            scores: dims
                .iter()
                .map(|d| (d.clone(), rng.random_range(1.0..5.0)))
                .collect(),
            ref_logprob: Some(-rng.random_range(1.0..30.0)),
        })
        .collect();
    PromptGroup {
        prompt_id: prompt_id.to_string(),
        prompt: format!("prompt {prompt_id}"),
        candidates,
    }
}

/// A random tabular policy for `group`, or a log-linear one over a small random feature table.
pub fn random_policy<R: Rng + ?Sized>(group: &PromptGroup, tabular: bool, rng: &mut R) -> AnyPolicy {
    if tabular {
        let mut p = TabularPolicy::zeros(std::slice::from_ref(group));
        for w in p.params_mut() {
            *w = rng.random_range(-2.0..2.0);
        }
        AnyPolicy::Tabular(p)
    } else {
        let dim = 6;
        let vectors: BTreeMap<String, Vec<f64>> = group
            .candidates
            .iter()
            .map(|c| {
                (
                    c.text.clone(),
                    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        let weights = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        AnyPolicy::LogLinear(
            LogLinearPolicy::with_weights(FeatureFn::Table { dim, vectors }, weights)
                .expect("table vectors match the declared dimension"),
        )
    }
}

/// A randomized instance with `m ≤ max_dims` dimensions and `2 ≤ N ≤ max_candidates`.
pub fn random_instance(seed: u64, max_dims: usize, max_candidates: usize) -> Instance {
    let mut rng = seeded(seed);
    let m = rng.random_range(1..=max_dims.max(1));
    let n = rng.random_range(2..=max_candidates.max(2));
    let dims = dimension_names(m);
    let group = random_group(&format!("p{seed}"), n, &dims, &mut rng);
    let mode = if rng.random_bool(0.8) {
        TargetMode::Softmax {
            temperature: rng.random_range(0.5..2.0),
        }
    } else {
        TargetMode::Normalized
    };
    let targets = ratings_to_targets(&group, &dims, mode).expect("random scores are finite and positive");
    let lambda = if rng.random_bool(0.2) {
        SimplexVector::one_hot(m, rng.random_range(0..m)).expect("index below m")
    } else {
        sample_uniform(m, &mut rng).expect("m >= 1")
    };
    let beta = BETAS[rng.random_range(0..BETAS.len())];
    let policy = random_policy(&group, seed.is_multiple_of(2), &mut rng);
    let reference = if rng.random_bool(0.5) {
        ReferencePolicy::FromData
    } else {
        ReferencePolicy::Uniform
    };
    Instance {
        group,
        dims,
        targets,
        lambda,
        beta,
        policy,
        reference,
    }
}

/// A two-candidate group, a random tabular or log-linear policy, and the winner index.
pub fn random_pair(seed: u64) -> (PromptGroup, AnyPolicy, ReferencePolicy, usize, f64) {
    let mut rng = seeded(seed);
    let dims = dimension_names(1);
    let group = random_group(&format!("pair{seed}"), 2, &dims, &mut rng);
    let policy = random_policy(&group, seed.is_multiple_of(2), &mut rng);
    let reference = if rng.random_bool(0.5) {
        ReferencePolicy::FromData
    } else {
        ReferencePolicy::Uniform
    };
    let winner = rng.random_range(0..2);
    let beta = BETAS[rng.random_range(0..BETAS.len())];
    (group, policy, reference, winner, beta)
}

/// Ten groups of four candidates rated on the default dimensions.
pub fn training_fixture(seed: u64, dims: &[String]) -> Vec<PromptGroup> {
    synthetic_groups(10, 4, dims, &mut seeded(seed))
}

/// Three candidates whose per-dimension rankings disagree: each of `a`, `b`,
/// `c` tops at least one of the first four dimensions and none tops them all.
pub fn conflicting_group(dims: &[String]) -> PromptGroup {
    let table: [[f64; 4]; 3] = [[5.0, 1.0, 2.0, 4.0], [2.0, 5.0, 1.0, 3.0], [1.0, 2.0, 5.0, 3.5]];
    let candidates = ["a", "b", "c"]
        .iter()
        .zip(table)
        .map(|(id, row)| Candidate {
            id: id.to_string(),
            text: format!("response {id}"),
            scores: dims.iter().cloned().zip(row).collect(),
            ref_logprob: None,
        })
        .collect();
    PromptGroup {
        prompt_id: "conflict".into(),
        prompt: "a prompt with competing criteria".into(),
        candidates,
    }
}
