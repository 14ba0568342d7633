//! Preference losses and their gradients.
//!
//! All losses are cross-entropies in nats, evaluated in log space. The central
//! object is the lambda-weighted listwise loss
//!
//! ```text
//! L(θ) = −Σ_i p^λ_i · log P_θ(y_i|x),   p^λ = Σ_k λ_k p^(k)
//! ```
//!
//! whose exact gradient is `−β Σ_i (p^λ_i − P_θ,i) ∇_θ log π_θ(y_i|x)`. The
//! factor β comes from the chain rule through `P_θ`, and the softmax coupling
//! between candidates is kept in full; [`finite_diff_grad`] is the independent
//! check for both.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{mix_rows, PreferenceTargets, PromptGroup};
use crate::error::{Error, Result};
use crate::numeric::{sigmoid, softplus};
use crate::policy::{check_beta, listwise_log_distribution, log_ratios, Policy, ReferencePolicy};
use crate::simplex::SimplexVector;

/// Bradley-Terry probability that the candidate with reward `r_w` beats `r_l`.
pub fn bt_prob(r_w: f64, r_l: f64) -> f64 {
    sigmoid(r_w - r_l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    /// Mean of `per_group`, in nats.
    pub value: f64,
    pub per_group: Vec<f64>,
}

impl LossValue {
    pub fn single(value: f64) -> Self {
        Self {
            value,
            per_group: vec![value],
        }
    }

    pub fn from_groups(per_group: Vec<f64>) -> Self {
        let value = if per_group.is_empty() {
            0.0
        } else {
            per_group.iter().sum::<f64>() / per_group.len() as f64
        };
        Self { value, per_group }
    }
}

/// Sparse gradient keyed by policy parameter index.
///
/// Entries iterate in index order, so reductions over a gradient are reproducible.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientVector(BTreeMap<usize, f64>);

impl GradientVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_dense(values: &[f64]) -> Self {
        Self(values.iter().copied().enumerate().collect())
    }

    pub fn add(&mut self, index: usize, value: f64) {
        *self.0.entry(index).or_insert(0.0) += value;
    }

    pub fn add_scaled(&mut self, other: &GradientVector, scale: f64) {
        for (&i, &v) in &other.0 {
            self.add(i, scale * v);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.0.values_mut() {
            *v *= s;
        }
    }

    pub fn get(&self, index: usize) -> f64 {
        self.0.get(&index).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.0.iter().map(|(&i, &v)| (i, v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.values().all(|v| v.is_finite())
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (&i, &v) in &self.0 {
            out[i] = v;
        }
        out
    }
}

/// `−log σ(β·(Δ_w − Δ_l))` with `Δ = log π_θ − log π_ref`.
pub fn pairwise_dpo_loss<P: Policy>(
    policy: &P,
    reference: &ReferencePolicy,
    group: &PromptGroup,
    winner: usize,
    beta: f64,
) -> Result<LossValue> {
    if group.len() != 2 {
        return Err(Error::UnsupportedN(group.len()));
    }
    if winner >= 2 {
        return Err(Error::IndexOutOfRange {
            index: winner,
            len: 2,
        });
    }
    check_beta(beta)?;
    let r = log_ratios(policy, reference, group)?;
    let margin = beta * (r[winner] - r[1 - winner]);
    Ok(LossValue::single(softplus(-margin)))
}

fn check_target(target: &[f64], n: usize) -> Result<()> {
    if target.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: target.len(),
        });
    }
    if let Some(t) = target.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(Error::InvalidTarget(format!("entry {t} is not a probability")));
    }
    let sum: f64 = target.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidTarget(format!("entries sum to {sum}")));
    }
    Ok(())
}

/// Listwise cross-entropy `−Σ_i target_i · log P_θ(y_i|x)`.
pub fn listwise_loss<P: Policy>(
    policy: &P,
    reference: &ReferencePolicy,
    group: &PromptGroup,
    target: &[f64],
    beta: f64,
) -> Result<LossValue> {
    check_target(target, group.len())?;
    let log_p = listwise_log_distribution(policy, reference, group, beta)?;
    Ok(LossValue::single(cross_entropy_nats(target, &log_p)))
}

pub fn cross_entropy_nats(target: &[f64], log_p: &[f64]) -> f64 {
    -target
        .iter()
        .zip(log_p)
        .filter(|(t, _)| **t != 0.0)
        .map(|(t, lp)| t * lp)
        .sum::<f64>()
}

fn mixed_target(targets: &PreferenceTargets, lambda: &SimplexVector) -> Result<Vec<f64>> {
    mix_rows(&targets.per_dim, lambda)
}

/// The lambda-weighted listwise loss: listwise cross-entropy against `p^λ`.
pub fn lambda_dpo_loss<P: Policy>(
    policy: &P,
    reference: &ReferencePolicy,
    group: &PromptGroup,
    targets: &PreferenceTargets,
    lambda: &SimplexVector,
    beta: f64,
) -> Result<LossValue> {
    let mixed = mixed_target(targets, lambda)?;
    listwise_loss(policy, reference, group, &mixed, beta)
}

/// Same quantity as [`lambda_dpo_loss`], summed per dimension: `Σ_k λ_k L_k`.
pub fn lambda_dpo_loss_by_dimension<P: Policy>(
    policy: &P,
    reference: &ReferencePolicy,
    group: &PromptGroup,
    targets: &PreferenceTargets,
    lambda: &SimplexVector,
    beta: f64,
) -> Result<LossValue> {
    if lambda.dim() != targets.num_dims() {
        return Err(Error::DimensionMismatch {
            expected: targets.num_dims(),
            actual: lambda.dim(),
        });
    }
    let mut total = 0.0;
    for (row, &w) in targets.per_dim.iter().zip(lambda.weights()) {
        total += w * listwise_loss(policy, reference, group, row, beta)?.value;
    }
    Ok(LossValue::single(total))
}

/// Gradient of [`listwise_loss`] with respect to the policy parameters.
pub fn listwise_grad<P: Policy>(
    policy: &P,
    reference: &ReferencePolicy,
    group: &PromptGroup,
    target: &[f64],
    beta: f64,
) -> Result<GradientVector> {
    Ok(listwise_loss_and_grad(policy, reference, group, target, beta)?.1)
}

/// Loss and gradient in one pass.
///
/// With `c_i = target_i − P_i` and `π` the policy's within-group softmax,
/// `∇L = −β Σ_i c_i (∇s_i − Σ_j π_j ∇s_j)`, where `s` are unnormalized scores.
pub fn listwise_loss_and_grad<P: Policy>(
    policy: &P,
    reference: &ReferencePolicy,
    group: &PromptGroup,
    target: &[f64],
    beta: f64,
) -> Result<(f64, GradientVector)> {
    check_target(target, group.len())?;
    let log_p = listwise_log_distribution(policy, reference, group, beta)?;
    let loss = cross_entropy_nats(target, &log_p);

    let pi = crate::numeric::softmax(&policy.scores(group)?);
    let coeff: Vec<f64> = target.iter().zip(&log_p).map(|(t, lp)| t - lp.exp()).collect();
    let coeff_sum: f64 = coeff.iter().sum();

    let mut grad = GradientVector::new();
    for (i, &c) in coeff.iter().enumerate() {
        let weight = -beta * (c - coeff_sum * pi[i]);
        if weight == 0.0 {
            continue;
        }
        for (k, v) in policy.score_grad(group, i)? {
            grad.add(k, weight * v);
        }
    }
    Ok((loss, grad))
}

/// Gradient of [`lambda_dpo_loss`].
pub fn lambda_dpo_grad<P: Policy>(
    policy: &P,
    reference: &ReferencePolicy,
    group: &PromptGroup,
    targets: &PreferenceTargets,
    lambda: &SimplexVector,
    beta: f64,
) -> Result<GradientVector> {
    let mixed = mixed_target(targets, lambda)?;
    listwise_grad(policy, reference, group, &mixed, beta)
}

/// Mean loss and mean gradient over `(group, target)` pairs.
///
/// Per-group terms may be computed on worker threads; they are always summed
/// in input order, so the result does not depend on the thread count.
pub fn batch_loss_and_grad<P: Policy>(
    policy: &P,
    reference: &ReferencePolicy,
    items: &[(&PromptGroup, &[f64])],
    beta: f64,
) -> Result<(LossValue, GradientVector)> {
    let parts: Vec<(f64, GradientVector)> = items
        .par_iter()
        .map(|(g, t)| listwise_loss_and_grad(policy, reference, g, t, beta))
        .collect::<Result<_>>()?;
    let scale = 1.0 / items.len().max(1) as f64;
    let mut grad = GradientVector::new();
    let mut per_group = Vec::with_capacity(parts.len());
    for (loss, g) in &parts {
        per_group.push(*loss);
        grad.add_scaled(g, scale);
    }
    Ok((LossValue::from_groups(per_group), grad))
}

/// Central differences `(f(θ + h e_j) − f(θ − h e_j)) / 2h` for every coordinate.
pub fn central_differences<F>(theta: &[f64], h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|j| {
            let orig = x[j];
            x[j] = orig + h;
            let plus = f(&x);
            x[j] = orig - h;
            let minus = f(&x);
            x[j] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Finite-difference gradient of `loss` with respect to every parameter of `policy`.
pub fn finite_diff_grad<P, F>(loss: F, policy: &P, h: f64) -> GradientVector
where
    P: Policy,
    F: Fn(&P) -> f64,
{
    let mut probe = policy.clone();
    let g = central_differences(policy.params(), h, |theta| {
        probe.params_mut().copy_from_slice(theta);
        loss(&probe)
    });
    GradientVector::from_dense(&g)
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`; zero when both vectors are zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
