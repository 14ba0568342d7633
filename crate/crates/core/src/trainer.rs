//! Seeded training loop and evaluation metrics.
//!
//! Each optimizer step takes one batch of prompt groups in data order, picks a
//! λ for every group (or one per batch), mixes that group's per-dimension
//! targets into `p^λ`, averages the lambda-weighted listwise gradient over the
//! batch and applies one SGD or Adam update.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{mix_rows, ratings_to_targets, PreferenceTargets, PromptGroup, TargetMode};
use crate::error::{Error, Result};
use crate::losses::{batch_loss_and_grad, cross_entropy_nats, GradientVector};
use crate::numeric::argmax;
use crate::policy::{listwise_distribution, Policy, ReferencePolicy};
use crate::rng::{derived, SeededRng};
use crate::scheduler::SchedulerDist;
use crate::simplex::{sample_uniform, SimplexVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaMode {
    Fixed { lambda: SimplexVector },
    Uniform,
    Scheduler { dist: SchedulerDist },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    PerPrompt,
    PerBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Linear warmup over `warmup_frac` of all steps, then cosine decay to zero.
    Cosine { warmup_frac: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda_mode: LambdaMode,
    pub granularity: Granularity,
    pub optimizer: OptimizerKind,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    pub targets: TargetMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            learning_rate: 5e-3,
            epochs: 10,
            batch_size: 8,
            lambda_mode: LambdaMode::Uniform,
            granularity: Granularity::PerPrompt,
            optimizer: OptimizerKind::adam(),
            lr_schedule: LrSchedule::Constant,
            seed: 0,
            targets: TargetMode::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        positive("beta", self.beta)?;
        // zero is allowed: it freezes the parameters
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be >= 1".into()));
        }
        if let TargetMode::Softmax { temperature } = self.targets {
            positive("preference temperature", temperature)?;
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                return Err(Error::InvalidConfig("Adam betas must lie in [0, 1)".into()));
            }
            positive("Adam eps", eps)?;
        }
        if let LrSchedule::Cosine { warmup_frac } = self.lr_schedule {
            if !(0.0..1.0).contains(&warmup_frac) {
                return Err(Error::InvalidConfig("warmup_frac must lie in [0, 1)".into()));
            }
        }
        Ok(())
    }

    fn lr_at(&self, step: usize, total: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine { warmup_frac } => {
                let warm = (warmup_frac * total as f64).ceil() as usize;
                if step < warm {
                    self.learning_rate * (step + 1) as f64 / warm as f64
                } else {
                    let span = (total - warm).max(1) as f64;
                    let progress = (step - warm) as f64 / span;
                    0.5 * self.learning_rate * (1.0 + (PI * progress).cos())
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    /// Mean of the λ vectors used in this step's batch.
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaDraw {
    pub step: usize,
    pub prompt_id: String,
    pub lambda: SimplexVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Mean lambda-weighted listwise loss, nats.
    pub mean_loss: f64,
    /// Fraction of groups where argmax `P_θ` equals argmax `p^λ`.
    pub top1_agreement: f64,
    /// Mean total-variation distance between `P_θ` and `p^λ`.
    pub mean_tv: f64,
    /// Mean Kendall tau (tau-a) between the two candidate orderings.
    pub mean_kendall_tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-group loss over each epoch, nats.
    pub loss_trace: Vec<f64>,
    pub steps: Vec<StepRecord>,
    pub lambda_draws: Vec<LambdaDraw>,
    pub eval_lambda: SimplexVector,
    pub final_metrics: EvalMetrics,
    /// Max-abs entry of the full-data gradient at `eval_lambda` after training.
    pub final_grad_max_abs: f64,
    /// Not serialized, so reports from identical runs stay byte-identical.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl TrainReport {
    pub fn write_json<W: Write>(&self, mut out: W) -> Result<()> {
        let s = serde_json::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        out.write_all(s.as_bytes())?;
        out.write_all(b"\n")?;
        Ok(())
    }

    /// Columns `step,epoch,loss_nats,lambda_1..lambda_m`.
    pub fn write_loss_csv<W: Write>(&self, out: W) -> Result<()> {
        let m = self.eval_lambda.dim();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string(), "epoch".into(), "loss_nats".into()];
        header.extend((1..=m).map(|i| format!("lambda_{i}")));
        w.write_record(&header)?;
        for s in &self.steps {
            let mut row = vec![s.step.to_string(), s.epoch.to_string(), format!("{:e}", s.loss)];
            row.extend(s.lambda.iter().map(|x| format!("{x:e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

enum Optimizer {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        m: Vec<f64>,
        v: Vec<f64>,
        t: i32,
    },
}

impl Optimizer {
    fn new(kind: OptimizerKind, n: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam { beta1, beta2, eps } => Optimizer::Adam {
                beta1,
                beta2,
                eps,
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &GradientVector, lr: f64) {
        match self {
            Optimizer::Sgd => {
                for (i, g) in grad.iter() {
                    params[i] -= lr * g;
                }
            }
            Optimizer::Adam {
                beta1,
                beta2,
                eps,
                m,
                v,
                t,
            } => {
                *t += 1;
                let g = grad.to_dense(params.len());
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for i in 0..params.len() {
                    m[i] = *beta1 * m[i] + (1.0 - *beta1) * g[i];
                    v[i] = *beta2 * v[i] + (1.0 - *beta2) * g[i] * g[i];
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + *eps);
                }
            }
        }
    }
}

/// Draws λ for each group according to the configured mode and granularity.
struct LambdaSource<'a> {
    mode: &'a LambdaMode,
    granularity: Granularity,
    dims: usize,
    seed: u64,
    streams: HashMap<String, SeededRng>,
}

impl<'a> LambdaSource<'a> {
    fn new(config: &'a TrainConfig, dims: usize) -> Result<Self> {
        let check = |d: usize| {
            if d == dims {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    expected: dims,
                    actual: d,
                })
            }
        };
        match &config.lambda_mode {
            LambdaMode::Fixed { lambda } => check(lambda.dim())?,
            LambdaMode::Scheduler { dist } => {
                for c in &dist.candidates {
                    check(c.dim())?;
                }
            }
            LambdaMode::Uniform => {}
        }
        Ok(Self {
            mode: &config.lambda_mode,
            granularity: config.granularity,
            dims,
            seed: config.seed,
            streams: HashMap::new(),
        })
    }

    fn draw_from(&mut self, label: String) -> SimplexVector {
        let seed = self.seed;
        let rng = self.streams.entry(label).or_insert_with_key(|l| derived(seed, l));
        match self.mode {
            LambdaMode::Fixed { lambda } => lambda.clone(),
            LambdaMode::Uniform => sample_uniform(self.dims, rng).expect("dims >= 1"),
            LambdaMode::Scheduler { dist } => dist.sample(rng),
        }
    }

    fn for_batch(&mut self, groups: &[&PromptGroup]) -> Vec<SimplexVector> {
        if let LambdaMode::Fixed { lambda } = self.mode {
            return vec![lambda.clone(); groups.len()];
        }
        match self.granularity {
            Granularity::PerPrompt => groups
                .iter()
                .map(|g| self.draw_from(format!("lambda/prompt/{}", g.prompt_id)))
                .collect(),
            Granularity::PerBatch => {
                let l = self.draw_from("lambda/batch".to_string());
                vec![l; groups.len()]
            }
        }
    }
}

/// Train on ratings: per-dimension targets are built with `config.targets`.
pub fn train<P: Policy>(
    data: &[PromptGroup],
    dims: &[String],
    policy: &mut P,
    reference: &ReferencePolicy,
    config: &TrainConfig,
) -> Result<TrainReport> {
    let targets = data
        .iter()
        .map(|g| ratings_to_targets(g, dims, config.targets))
        .collect::<Result<Vec<_>>>()?;
    train_on_targets(data, &targets, policy, reference, config)
}

/// Train against precomputed per-dimension targets, one set per group.
pub fn train_on_targets<P: Policy>(
    data: &[PromptGroup],
    targets: &[PreferenceTargets],
    policy: &mut P,
    reference: &ReferencePolicy,
    config: &TrainConfig,
) -> Result<TrainReport> {
    let started = Instant::now();
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidConfig("training data is empty".into()));
    }
    if targets.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            actual: targets.len(),
        });
    }
    let m = targets[0].num_dims();
    if m == 0 || targets.iter().any(|t| t.num_dims() != m) {
        return Err(Error::InvalidConfig(
            "every group needs the same number (>= 1) of dimensions".into(),
        ));
    }
    for (g, t) in data.iter().zip(targets) {
        if t.num_candidates() != g.len() {
            return Err(Error::DimensionMismatch {
                expected: g.len(),
                actual: t.num_candidates(),
            });
        }
    }

    let mut lambdas = LambdaSource::new(config, m)?;
    let mut optimizer = Optimizer::new(config.optimizer, policy.num_params());
    let batches_per_epoch = data.len().div_ceil(config.batch_size);
    let total_steps = batches_per_epoch * config.epochs;

    let mut loss_trace = Vec::with_capacity(config.epochs);
    let mut steps = Vec::with_capacity(total_steps);
    let mut lambda_draws = Vec::new();
    let mut last_good = policy.params().to_vec();
    let mut step = 0;

    for epoch in 0..config.epochs {
        let mut epoch_total = 0.0;
        for (batch_groups, batch_targets) in data
            .chunks(config.batch_size)
            .zip(targets.chunks(config.batch_size))
        {
            let groups: Vec<&PromptGroup> = batch_groups.iter().collect();
            let batch_lambdas = lambdas.for_batch(&groups);
            let mixed: Vec<Vec<f64>> = batch_targets
                .iter()
                .zip(&batch_lambdas)
                .map(|(t, l)| mix_rows(&t.per_dim, l))
                .collect::<Result<_>>()?;
            let items: Vec<(&PromptGroup, &[f64])> = groups
                .iter()
                .copied()
                .zip(mixed.iter().map(Vec::as_slice))
                .collect();

            let computed = match batch_loss_and_grad(policy, reference, &items, config.beta) {
                Err(Error::NonFiniteLogRatio { .. }) => None,
                other => Some(other?),
            };
            let Some((loss, grad)) = computed.filter(|(l, g)| l.value.is_finite() && g.is_finite()) else {
                policy.params_mut().copy_from_slice(&last_good);
                return Err(Error::DivergenceDetected { step, epoch });
            };
            last_good.copy_from_slice(policy.params());

            let mut mean_lambda = vec![0.0; m];
            for l in &batch_lambdas {
                for (acc, w) in mean_lambda.iter_mut().zip(l.weights()) {
                    *acc += w / batch_lambdas.len() as f64;
                }
            }
            for (g, l) in groups.iter().zip(batch_lambdas) {
                lambda_draws.push(LambdaDraw {
                    step,
                    prompt_id: g.prompt_id.clone(),
                    lambda: l,
                });
            }
            epoch_total += loss.per_group.iter().sum::<f64>();
            steps.push(StepRecord {
                step,
                epoch,
                loss: loss.value,
                lambda: mean_lambda,
            });

            let lr = config.lr_at(step, total_steps);
            optimizer.step(policy.params_mut(), &grad, lr);
            if policy.params().iter().any(|w| !w.is_finite()) {
                policy.params_mut().copy_from_slice(&last_good);
                return Err(Error::DivergenceDetected { step, epoch });
            }
            step += 1;
        }
        loss_trace.push(epoch_total / data.len() as f64);
    }

    let eval_lambda = match &config.lambda_mode {
        LambdaMode::Fixed { lambda } => lambda.clone(),
        _ => SimplexVector::uniform(m)?,
    };
    let final_metrics = evaluate(data, policy, reference, targets, &eval_lambda, config.beta)?;
    if !final_metrics.mean_loss.is_finite() {
        policy.params_mut().copy_from_slice(&last_good);
        return Err(Error::DivergenceDetected {
            step,
            epoch: config.epochs,
        });
    }
    let final_grad_max_abs =
        full_gradient(data, policy, reference, targets, &eval_lambda, config.beta)?.max_abs();

    Ok(TrainReport {
        loss_trace,
        steps,
        lambda_draws,
        eval_lambda,
        final_metrics,
        final_grad_max_abs,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

/// Mean gradient of the lambda-weighted loss over all groups at one λ.
pub fn full_gradient<P: Policy>(
    data: &[PromptGroup],
    policy: &P,
    reference: &ReferencePolicy,
    targets: &[PreferenceTargets],
    lambda: &SimplexVector,
    beta: f64,
) -> Result<GradientVector> {
    let mixed: Vec<Vec<f64>> = targets
        .iter()
        .map(|t| mix_rows(&t.per_dim, lambda))
        .collect::<Result<_>>()?;
    let items: Vec<(&PromptGroup, &[f64])> = data.iter().zip(mixed.iter().map(Vec::as_slice)).collect();
    Ok(batch_loss_and_grad(policy, reference, &items, beta)?.1)
}

fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Tau-a: tied pairs in either ordering count as neither concordant nor discordant.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let x = (a[i] - a[j]).signum() * f64::from(a[i] != a[j]);
            let y = (b[i] - b[j]).signum() * f64::from(b[i] != b[j]);
            s += x * y;
        }
    }
    s / (n * (n - 1) / 2) as f64
}

pub fn evaluate<P: Policy>(
    data: &[PromptGroup],
    policy: &P,
    reference: &ReferencePolicy,
    targets: &[PreferenceTargets],
    lambda: &SimplexVector,
    beta: f64,
) -> Result<EvalMetrics> {
    if data.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            actual: targets.len(),
        });
    }
    if data.is_empty() {
        return Err(Error::InvalidConfig("evaluation data is empty".into()));
    }
    let (mut loss, mut top1, mut tv, mut tau) = (0.0, 0.0, 0.0, 0.0);
    for (g, t) in data.iter().zip(targets) {
        let mixed = mix_rows(&t.per_dim, lambda)?;
        let p = listwise_distribution(policy, reference, g, beta)?;
        let log_p: Vec<f64> = crate::policy::listwise_log_distribution(policy, reference, g, beta)?;
        loss += cross_entropy_nats(&mixed, &log_p);
        top1 += f64::from(u8::from(argmax(&p) == argmax(&mixed)));
        tv += total_variation(&p, &mixed);
        tau += kendall_tau(&p, &mixed);
    }
    let n = data.len() as f64;
    Ok(EvalMetrics {
        mean_loss: loss / n,
        top1_agreement: top1 / n,
        mean_tv: tv / n,
        mean_kendall_tau: tau / n,
    })
}
