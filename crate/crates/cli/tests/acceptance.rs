//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ldpo_core::dataset::{default_dimensions, mix_rows, pairwise_target, ratings_to_targets, TargetMode};
use ldpo_core::fixtures::{conflicting_group, random_instance, random_pair, training_fixture, Instance};
use ldpo_core::losses::{
    finite_diff_grad, lambda_dpo_grad, lambda_dpo_loss, lambda_dpo_loss_by_dimension, listwise_loss,
    pairwise_dpo_loss, relative_error,
};
use ldpo_core::policy::{AnyPolicy, Policy, ReferencePolicy};
use ldpo_core::scheduler::{fit, published_observations, PerfModel, PolyFeatureMap, SchedulerDist};
use ldpo_core::trainer::{train, train_on_targets, LambdaMode, OptimizerKind, TrainConfig};
use ldpo_core::{PreferenceTargets, SimplexVector, TabularPolicy};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit: f64) -> (bool, String) {
    let secs = elapsed.as_secs_f64();
    (secs < limit, format!("{secs:.3}s (limit {limit}s)"))
}

fn loss(inst: &Instance, policy: &AnyPolicy) -> f64 {
    lambda_dpo_loss(
        policy,
        &inst.reference,
        &inst.group,
        &inst.targets,
        &inst.lambda,
        inst.beta,
    )
    .unwrap()
    .value
}

fn grad(inst: &Instance) -> Vec<f64> {
    lambda_dpo_grad(
        &inst.policy,
        &inst.reference,
        &inst.group,
        &inst.targets,
        &inst.lambda,
        inst.beta,
    )
    .unwrap()
    .to_dense(inst.policy.num_params())
}

fn pairwise_reduction() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let (group, policy, reference, winner, beta) = random_pair(seed);
        let pair = pairwise_dpo_loss(&policy, &reference, &group, winner, beta)
            .unwrap()
            .value;
        let target = pairwise_target(winner, 2).unwrap();
        let list = listwise_loss(&policy, &reference, &group, &target, beta)
            .unwrap()
            .value;
        worst = worst.max((pair - list).abs());
    }
    let (fast, time) = within(start.elapsed(), 1.0);
    outcome(
        worst <= 1e-12 && fast,
        format!("max |Δ| = {worst:.2e} over 100 pairs, {time}"),
    )
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut betas = BTreeMap::new();
    for seed in 0..100 {
        let inst = random_instance(seed, 4, 6);
        *betas.entry(inst.beta.to_string()).or_insert(0) += 1;
        let numeric =
            finite_diff_grad(|p| loss(&inst, p), &inst.policy, 1e-5).to_dense(inst.policy.num_params());
        worst = worst.max(relative_error(&grad(&inst), &numeric));
    }
    let (fast, time) = within(start.elapsed(), 10.0);
    outcome(
        worst <= 1e-6 && fast && betas.len() == 3,
        format!("max relative error {worst:.2e} over 100 instances (β counts {betas:?}), {time}"),
    )
}

fn summation_order() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let inst = random_instance(1000 + seed, 4, 6);
        let mixed = loss(&inst, &inst.policy);
        let summed = lambda_dpo_loss_by_dimension(
            &inst.policy,
            &inst.reference,
            &inst.group,
            &inst.targets,
            &inst.lambda,
            inst.beta,
        )
        .unwrap()
        .value;
        worst = worst.max((mixed - summed).abs());
    }
    outcome(
        worst <= 1e-12,
        format!("max |Δ| = {worst:.2e} over 100 instances"),
    )
}

fn scale_invariance() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let mut inst = random_instance(2000 + seed, 4, 6);
        inst.reference = ReferencePolicy::FromData;
        let (l0, g0) = (loss(&inst, &inst.policy), grad(&inst));
        let c = 1e-3 + (seed as f64 * 0.61).sin().abs() * 50.0;
        for cand in &mut inst.group.candidates {
            cand.ref_logprob = cand.ref_logprob.map(|r| r + c.ln());
        }
        let (l1, g1) = (loss(&inst, &inst.policy), grad(&inst));
        worst = worst.max((l0 - l1).abs());
        for (a, b) in g0.iter().zip(&g1) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(
        worst <= 1e-12,
        format!("max change {worst:.2e} over 100 rescaled references"),
    )
}

fn scheduler_fit() -> Outcome {
    let start = Instant::now();
    let obs = published_observations();
    let map = PolyFeatureMap::new(4, 2).unwrap();
    let model = fit(&obs, &map, 1e-8).unwrap();
    let want = [0.4563, 0.4561, 0.4578, 0.4553, 0.4623];
    let worst = obs
        .iter()
        .zip(want)
        .map(|(o, y)| (model.predict(&o.lambda).unwrap() - y).abs())
        .fold(0.0, f64::max);
    let (fast, time) = within(start.elapsed(), 1.0);
    outcome(
        worst <= 1e-3 && map.len() == 15 && fast,
        format!("{} monomials, max |f - y| = {worst:.2e}, {time}", map.len()),
    )
}

fn published_polynomial() -> Outcome {
    let map = PolyFeatureMap::new(4, 2).unwrap();
    let squares = [0.0061, 0.0060, 0.0068, 0.0056];
    let weights: Vec<f64> = map
        .monomials()
        .iter()
        .map(|e| match e.iter().sum::<u32>() {
            0 => 0.36,
            1 => 0.09,
            _ => match e.iter().position(|&x| x == 2) {
                Some(i) => squares[i],
                None => 0.028,
            },
        })
        .collect();
    let model = PerfModel::new(map, weights).unwrap();
    let worst = published_observations()
        .iter()
        .map(|o| (model.predict(&o.lambda).unwrap() - o.score).abs())
        .fold(0.0, f64::max);
    outcome(
        worst <= 2e-3,
        format!("max |f - y| = {worst:.2e} with the printed coefficients"),
    )
}

fn printed_table_softmax() -> Outcome {
    let f = [
        0.462, 0.461, 0.461, 0.459, 0.462, 0.462, 0.462, 0.461, 0.462, 0.462,
    ];
    let printed = [
        0.108, 0.098, 0.099, 0.082, 0.101, 0.104, 0.108, 0.095, 0.104, 0.100,
    ];
    let cands = vec![SimplexVector::uniform(4).unwrap(); f.len()];
    let dist = SchedulerDist::from_scores(cands, f.to_vec(), 100.0).unwrap();
    let worst = dist
        .probs
        .iter()
        .zip(printed)
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    let total: f64 = dist.probs.iter().sum();
    outcome(
        worst <= 0.02 && (total - 1.0).abs() <= 1e-9,
        format!("max |p - printed| = {worst:.4}, Σp - 1 = {:.1e}", total - 1.0),
    )
}

fn tabular_convergence() -> Outcome {
    let start = Instant::now();
    let dims = default_dimensions();
    let data = training_fixture(0, &dims);
    let mut policy = TabularPolicy::zeros(&data);
    let config = TrainConfig {
        beta: 1.0,
        learning_rate: 20.0,
        epochs: 500,
        batch_size: data.len(),
        optimizer: OptimizerKind::Sgd,
        lambda_mode: LambdaMode::Fixed {
            lambda: SimplexVector::validate(&[0.4, 0.3, 0.2, 0.1]).unwrap(),
        },
        ..Default::default()
    };
    let report = train(&data, &dims, &mut policy, &ReferencePolicy::FromData, &config).unwrap();
    let (fast, time) = within(start.elapsed(), 5.0);
    let tv = report.final_metrics.mean_tv;
    let g = report.final_grad_max_abs;
    outcome(
        data.len() == 10 && report.steps.len() <= 500 && tv <= 1e-3 && g <= 1e-6 && fast,
        format!(
            "{} prompts, {} steps, TV {tv:.2e}, grad max-norm {g:.2e}, {time}",
            data.len(),
            report.steps.len()
        ),
    )
}

fn one_hot_equivalence() -> Outcome {
    let dims = default_dimensions();
    let data = training_fixture(7, &dims);
    let targets: Vec<PreferenceTargets> = data
        .iter()
        .map(|g| ratings_to_targets(g, &dims, TargetMode::default()).unwrap())
        .collect();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let mut identical = 0;
    for k in 0..dims.len() {
        let config = TrainConfig {
            epochs: 20,
            batch_size: 3,
            seed: 17,
            lambda_mode: LambdaMode::Fixed {
                lambda: SimplexVector::one_hot(dims.len(), k).unwrap(),
            },
            ..Default::default()
        };
        let mut a = TabularPolicy::zeros(&data);
        let ra = train_on_targets(&data, &targets, &mut a, &ReferencePolicy::FromData, &config).unwrap();

        let single: Vec<PreferenceTargets> = targets.iter().map(|t| t.select_dimension(k).unwrap()).collect();
        let config_b = TrainConfig {
            lambda_mode: LambdaMode::Fixed {
                lambda: SimplexVector::one_hot(1, 0).unwrap(),
            },
            ..config
        };
        let mut b = TabularPolicy::zeros(&data);
        let rb = train_on_targets(&data, &single, &mut b, &ReferencePolicy::FromData, &config_b).unwrap();
        if bits(&ra.loss_trace) == bits(&rb.loss_trace) {
            identical += 1;
        }
    }
    outcome(
        identical == dims.len(),
        format!(
            "{identical}/{} dimensions give bit-identical loss traces",
            dims.len()
        ),
    )
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn ldpo(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ldpo"))
        .args(args)
        .env_remove("LDPO_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        files.insert(
            path.file_name().unwrap().to_string_lossy().into_owned(),
            fs::read(&path).unwrap(),
        );
    }
    files
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let dir = |name: &str| tmp.path().join(name).to_string_lossy().into_owned();
    let data = data_dir().join("toy.jsonl").to_string_lossy().into_owned();
    let obs = data_dir().join("observations.csv").to_string_lossy().into_owned();
    let (train, uniform, sched, fitd, sample, eval, sweep) = (
        dir("train"),
        dir("uniform"),
        dir("sched"),
        dir("fit"),
        dir("sample"),
        dir("eval"),
        dir("sweep"),
    );
    let model = format!("{fitd}/model.txt");
    let ckpt = format!("{train}/policy.ckpt");
    let svg = dir("report.svg");
    let loss_csv = format!("{train}/loss.csv");
    let scheduler_spec = format!("scheduler:{obs}");
    let commands: Vec<(Vec<&str>, String)> = vec![
        (
            vec![
                "train",
                "--data",
                &data,
                "--lambda",
                "fixed:0.25,0.25,0.25,0.25",
                "--seed",
                "7",
                "--out-dir",
                &train,
            ],
            train.clone(),
        ),
        (
            vec![
                "train",
                "--data",
                &data,
                "--lambda",
                "uniform",
                "--beta",
                "0.1",
                "--seed",
                "7",
                "--out-dir",
                &uniform,
            ],
            uniform.clone(),
        ),
        (
            vec![
                "train",
                "--data",
                &data,
                "--lambda",
                &scheduler_spec,
                "--seed",
                "3",
                "--epochs",
                "4",
                "--out-dir",
                &sched,
            ],
            sched.clone(),
        ),
        (
            vec![
                "fit-scheduler",
                "--observations",
                &obs,
                "--degree",
                "2",
                "--dims",
                "4",
                "--out-dir",
                &fitd,
            ],
            fitd.clone(),
        ),
        (
            vec![
                "sample-lambda",
                "--model",
                &model,
                "--k",
                "10",
                "--tau",
                "100",
                "--seed",
                "5",
                "--draws",
                "20",
                "--out-dir",
                &sample,
            ],
            sample.clone(),
        ),
        (
            vec![
                "eval",
                "--checkpoint",
                &ckpt,
                "--data",
                &data,
                "--vertices",
                "--out-dir",
                &eval,
            ],
            eval.clone(),
        ),
        (
            vec![
                "eval",
                "--checkpoint",
                &ckpt,
                "--data",
                &data,
                "--sweep",
                "4",
                "--out-dir",
                &sweep,
            ],
            sweep.clone(),
        ),
        (
            vec!["report", "--loss-csv", &loss_csv, "--out", &svg],
            svg.clone(),
        ),
    ];
    let mut compared = 0;
    for (args, target) in &commands {
        let read = |t: &str| {
            let p = Path::new(t);
            if p.is_dir() {
                snapshot(p)
            } else {
                BTreeMap::from([(t.to_string(), fs::read(p).unwrap())])
            }
        };
        if let Err(e) = ldpo(args) {
            return outcome(false, e);
        }
        let first = read(target);
        if let Err(e) = ldpo(args) {
            return outcome(false, e);
        }
        let second = read(target);
        if first != second {
            return outcome(
                false,
                format!("{} produced different bytes on the second run", args[0]),
            );
        }
        compared += first.len();
    }
    outcome(
        true,
        format!(
            "{} commands repeated, {compared} output files byte-identical",
            commands.len()
        ),
    )
}

fn conflicting_preferences() -> Outcome {
    let dims = default_dimensions();
    let group = conflicting_group(&dims);
    let targets = ratings_to_targets(&group, &dims, TargetMode::default()).unwrap();
    let argmax = |p: &[f64]| {
        p.iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
            )
            .0
    };
    let per_dim_winner: Vec<usize> = targets.per_dim.iter().map(|row| argmax(row)).collect();
    let universal = (0..group.len()).any(|c| per_dim_winner.iter().all(|&w| w == c));
    let winners: Vec<usize> = (0..dims.len())
        .map(|k| {
            argmax(&mix_rows(&targets.per_dim, &SimplexVector::one_hot(dims.len(), k).unwrap()).unwrap())
        })
        .collect();
    let changes = winners.windows(2).filter(|w| w[0] != w[1]).count();
    let ids: Vec<&str> = winners.iter().map(|&i| group.candidates[i].id.as_str()).collect();
    outcome(
        !universal && changes >= 1,
        format!(
            "vertex winners {ids:?}, {changes} argmax changes, no candidate wins every dimension: {}",
            !universal
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("pairwise reduction", pairwise_reduction),
        ("gradient correctness", gradient_check),
        ("summation-order identity", summation_order),
        ("reference scale invariance", scale_invariance),
        ("scheduler fit on published points", scheduler_fit),
        ("published polynomial consistency", published_polynomial),
        ("scheduling softmax table", printed_table_softmax),
        ("tabular convergence", tabular_convergence),
        ("one-hot lambda equivalence", one_hot_equivalence),
        ("CLI determinism", cli_determinism),
        ("conflicting preferences", conflicting_preferences),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "{} {:>2}. {name}: {}",
            if result.pass { "PASS" } else { "FAIL" },
            i + 1,
            result.detail
        );
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
