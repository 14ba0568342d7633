use std::path::PathBuf;

use clap::Args;
use ldpo_core::dataset::{load_jsonl, ratings_to_targets};
use ldpo_core::policy::Checkpoint;
use ldpo_core::trainer::{evaluate, EvalMetrics};
use ldpo_core::{PreferenceTargets, SimplexVector};
use serde::Serialize;

use crate::failure::{from_run, CmdResult, Failure};
use crate::io::{create_dir, digest, num, open, write_json, write_with};
use crate::manifest::RunManifest;
use crate::opts::{grid, lambda_header, parse_dims, target_mode, LambdaSpec, ReferenceArg, TargetModeArg};

pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Dimension names; must match the checkpoint when given.
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<String>>,
    /// Single λ: uniform | fixed:a,b,... | onehot:k.
    #[arg(long, conflicts_with_all = ["vertices", "sweep"])]
    pub lambda: Option<String>,
    /// Evaluate at every vertex of the simplex.
    #[arg(long, conflicts_with = "sweep")]
    pub vertices: bool,
    /// Evaluate over the simplex grid with this resolution.
    #[arg(long)]
    pub sweep: Option<u32>,
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
    #[arg(long, value_enum, default_value = "auto")]
    pub reference: ReferenceArg,
    #[arg(long, value_enum, default_value = "softmax")]
    pub target_mode: TargetModeArg,
    #[arg(long, default_value_t = 1.0)]
    pub pref_temperature: f64,
    #[arg(long, default_value = "runs/eval")]
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct Row {
    lambda: SimplexVector,
    metrics: EvalMetrics,
}

#[derive(Serialize)]
struct EvalOutput {
    dims: Vec<String>,
    beta: f64,
    policy: &'static str,
    rows: Vec<Row>,
}

pub fn run(args: EvalArgs) -> CmdResult {
    if !(args.beta > 0.0 && args.beta.is_finite()) {
        return Err(Failure::config("--beta must be positive"));
    }
    let mode = target_mode(args.target_mode, args.pref_temperature);
    if let ldpo_core::TargetMode::Softmax { temperature } = mode {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Failure::config("--pref-temperature must be positive"));
        }
    }
    let single: Option<LambdaSpec> = match &args.lambda {
        Some(s) => match s.parse().map_err(Failure::config)? {
            LambdaSpec::Scheduler(_) => return Err(Failure::config("eval takes a concrete lambda")),
            spec => Some(spec),
        },
        None => None,
    };
    if args.sweep == Some(0) {
        return Err(Failure::config("--sweep must be >= 1"));
    }

    let out = args.out_dir.clone();
    create_dir(&out)?;
    let mut manifest = RunManifest::new("eval", None, &args);
    manifest.inputs.push(digest("checkpoint", &args.checkpoint)?);
    manifest.inputs.push(digest("data", &args.data)?);
    let json_path = manifest.output("metrics_json", &out, METRICS_JSON);
    let csv_path = manifest.output("metrics_csv", &out, METRICS_CSV);
    manifest.write(&out)?;

    let ckpt = Checkpoint::read(open(&args.checkpoint)?).map_err(|e| Failure::at(&args.checkpoint, e))?;
    if let Some(raw) = &args.dims {
        let dims = parse_dims(raw)?;
        if dims != ckpt.dims {
            return Err(Failure::at(
                &args.checkpoint,
                format!(
                    "checkpoint dimensions {:?} differ from --dims {:?}",
                    ckpt.dims, dims
                ),
            ));
        }
    }
    let dims = ckpt.dims.clone();
    let m = dims.len();
    let data = load_jsonl(&args.data, &dims).map_err(|e| Failure::at(&args.data, e))?;
    if data.is_empty() {
        return Err(Failure::at(&args.data, "no prompt groups"));
    }
    let targets: Vec<PreferenceTargets> = data
        .iter()
        .map(|g| ratings_to_targets(g, &dims, mode))
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::at(&args.data, e))?;
    let reference = args.reference.resolve(&data);

    let lambdas: Vec<SimplexVector> = if args.vertices {
        (0..m)
            .map(|k| SimplexVector::one_hot(m, k).expect("k < m"))
            .collect()
    } else if let Some(r) = args.sweep {
        grid(m, r)?
    } else {
        match single {
            Some(LambdaSpec::Uniform) | None => vec![SimplexVector::uniform(m).map_err(Failure::config)?],
            Some(spec) => vec![spec.fixed_vector(m)?.expect("fixed or one-hot")],
        }
    };

    let mut rows = Vec::with_capacity(lambdas.len());
    for lambda in lambdas {
        let metrics =
            evaluate(&data, &ckpt.policy, &reference, &targets, &lambda, args.beta).map_err(from_run)?;
        rows.push(Row { lambda, metrics });
    }

    let mut header = lambda_header(m);
    header.extend(["mean_loss", "top1_agreement", "mean_tv", "mean_kendall_tau"].map(String::from));
    write_with(&csv_path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&header).map_err(|e| e.to_string())?;
        for r in &rows {
            let mut rec: Vec<String> = r.lambda.weights().iter().map(|x| num(*x)).collect();
            let mt = r.metrics;
            rec.extend([mt.mean_loss, mt.top1_agreement, mt.mean_tv, mt.mean_kendall_tau].map(num));
            out.write_record(&rec).map_err(|e| e.to_string())?;
        }
        out.flush().map_err(|e| e.to_string())
    })?;
    let n = rows.len();
    write_json(
        &json_path,
        &EvalOutput {
            dims,
            beta: args.beta,
            policy: ckpt.policy.kind(),
            rows,
        },
    )?;
    println!("evaluated {n} lambda settings; outputs in {}", out.display());
    Ok(())
}
