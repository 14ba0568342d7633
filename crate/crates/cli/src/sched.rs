use std::path::{Path, PathBuf};

use clap::Args;
use ldpo_core::rng::derived;
use ldpo_core::scheduler::{
    self, PolyFeatureMap, SchedulerDist, DEFAULT_CANDIDATES, DEFAULT_DEGREE, DEFAULT_RIDGE, DEFAULT_TAU,
};
use ldpo_core::SimplexVector;
use serde::Serialize;

use crate::failure::{CmdResult, Failure};
use crate::io::{create_dir, digest, num, open, write_json, write_with};
use crate::manifest::RunManifest;
use crate::opts::{grid, lambda_header, load_model, parse_alpha, scheduler_candidates, seed_from_env};

pub const MODEL_FILE: &str = "model.txt";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const FIT_FILE: &str = "fit.json";
pub const CANDIDATES_FILE: &str = "candidates.csv";
pub const DRAWS_FILE: &str = "draws.csv";

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// CSV with header lambda_1..lambda_d,score.
    #[arg(long)]
    pub observations: PathBuf,
    /// Expected number of λ dimensions; inferred from the CSV when omitted.
    #[arg(long)]
    pub dims: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_DEGREE)]
    pub degree: u32,
    #[arg(long, default_value_t = DEFAULT_RIDGE)]
    pub ridge: f64,
    /// Resolution of the simplex grid for the prediction table.
    #[arg(long, default_value_t = 4)]
    pub grid: u32,
    #[arg(long, default_value = "runs/scheduler")]
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct FittedPoint {
    lambda: Vec<f64>,
    observed: f64,
    predicted: f64,
}

#[derive(Serialize)]
struct FitSummary {
    dims: usize,
    degree: u32,
    terms: usize,
    term_names: Vec<String>,
    weights: Vec<f64>,
    ridge: f64,
    observations: usize,
    fitted: Vec<FittedPoint>,
    max_abs_residual: f64,
}

fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> CmdResult {
    write_with(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(header).map_err(|e| e.to_string())?;
        for row in rows {
            out.write_record(row).map_err(|e| e.to_string())?;
        }
        out.flush().map_err(|e| e.to_string())
    })
}

pub fn fit(args: FitArgs) -> CmdResult {
    if args.grid == 0 {
        return Err(Failure::config("--grid must be >= 1"));
    }
    if !(args.ridge >= 0.0 && args.ridge.is_finite()) {
        return Err(Failure::config("--ridge must be >= 0"));
    }
    let out = args.out_dir.clone();
    create_dir(&out)?;
    let mut manifest = RunManifest::new("fit-scheduler", None, &args);
    manifest.inputs.push(digest("observations", &args.observations)?);
    let model_path = manifest.output("model", &out, MODEL_FILE);
    let pred_path = manifest.output("predictions", &out, PREDICTIONS_FILE);
    let fit_path = manifest.output("fit", &out, FIT_FILE);
    manifest.write(&out)?;

    let path = &args.observations;
    let obs = scheduler::read_observations(open(path)?).map_err(|e| Failure::at(path, e))?;
    if obs.is_empty() {
        return Err(Failure::at(path, "no observations"));
    }
    let d = obs[0].lambda.dim();
    if let Some(want) = args.dims {
        if want != d {
            return Err(Failure::at(
                path,
                format!("observations have {d} dimensions, --dims says {want}"),
            ));
        }
    }
    let map = PolyFeatureMap::new(d, args.degree).map_err(Failure::config)?;
    let model = scheduler::fit(&obs, &map, args.ridge).map_err(|e| Failure::at(path, e))?;

    write_with(&model_path, |w| model.write(w).map_err(|e| e.to_string()))?;
    let mut rows = Vec::new();
    for lambda in grid(d, args.grid)? {
        let f = model.predict(&lambda).map_err(Failure::data)?;
        let mut row: Vec<String> = lambda.weights().iter().map(|x| num(*x)).collect();
        row.push(num(f));
        rows.push(row);
    }
    let mut header = lambda_header(d);
    header.push("f".into());
    write_table(&pred_path, &header, &rows)?;

    let fitted: Vec<FittedPoint> = obs
        .iter()
        .map(|o| FittedPoint {
            lambda: o.lambda.weights().to_vec(),
            observed: o.score,
            predicted: model.predict(&o.lambda).expect("dimension checked above"),
        })
        .collect();
    let max_abs_residual = fitted
        .iter()
        .map(|p| (p.predicted - p.observed).abs())
        .fold(0.0, f64::max);
    write_json(
        &fit_path,
        &FitSummary {
            dims: d,
            degree: args.degree,
            terms: map.len(),
            term_names: map.names(),
            weights: model.weights.clone(),
            ridge: args.ridge,
            observations: obs.len(),
            fitted,
            max_abs_residual,
        },
    )?;
    println!(
        "fitted {} terms (d={d}, p={}) to {} observations; max residual {max_abs_residual:.3e}; outputs in {}",
        map.len(),
        args.degree,
        obs.len(),
        out.display()
    );
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    /// Model file from `fit-scheduler`, or an observations CSV to fit on the spot.
    #[arg(long, required_unless_present = "scores_file")]
    pub model: Option<PathBuf>,
    /// CSV with an `f` column (and optionally lambda_1..lambda_d) used instead of model predictions.
    #[arg(long)]
    pub scores_file: Option<PathBuf>,
    /// Expected number of λ dimensions.
    #[arg(long)]
    pub dims: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_CANDIDATES)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    /// Dirichlet concentration, one value or one per dimension.
    #[arg(long, default_value = "1")]
    pub alpha: String,
    /// Use the simplex grid of this resolution instead of Dirichlet draws.
    #[arg(long)]
    pub grid: Option<u32>,
    /// Also draw this many λ from the resulting distribution.
    #[arg(long, default_value_t = 0)]
    pub draws: usize,
    /// Seed for the candidate and draw streams; falls back to LDPO_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_DEGREE)]
    pub degree: u32,
    #[arg(long, default_value_t = DEFAULT_RIDGE)]
    pub ridge: f64,
    /// Write candidates.csv (and draws.csv) here instead of printing the table.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Scores (and possibly λ rows) read from a `--scores-file`.
///
/// Printed λ values are often rounded, so rows within 1e-2 of summing to one
/// are renormalized rather than rejected.
fn read_scores(path: &Path) -> CmdResult<(Vec<f64>, Option<Vec<SimplexVector>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let header = rdr.headers().map_err(|e| Failure::at(path, e))?.clone();
    let f_col = header
        .iter()
        .position(|h| h == "f" || h == "score")
        .ok_or_else(|| Failure::at(path, "missing column \"f\""))?;
    let lambda_cols: Vec<usize> = (1..)
        .map_while(|i| header.iter().position(|h| h == format!("lambda_{i}")))
        .collect();
    let mut scores = Vec::new();
    let mut lambdas = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Failure::at(path, e))?;
        let line = i + 2;
        let parse = |c: usize| -> CmdResult<f64> {
            rec.get(c)
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| Failure::at(path, format!("line {line}: bad number")))
        };
        scores.push(parse(f_col)?);
        if !lambda_cols.is_empty() {
            let raw = lambda_cols
                .iter()
                .map(|&c| parse(c))
                .collect::<CmdResult<Vec<f64>>>()?;
            let sum: f64 = raw.iter().sum();
            if raw.iter().any(|x| *x < 0.0) || (sum - 1.0).abs() > 1e-2 {
                return Err(Failure::at(
                    path,
                    format!("line {line}: lambda is not on the simplex"),
                ));
            }
            let normalized: Vec<f64> = raw.iter().map(|x| x / sum).collect();
            lambdas.push(SimplexVector::validate(&normalized).map_err(|e| Failure::at(path, e))?);
        }
    }
    if scores.is_empty() {
        return Err(Failure::at(path, "no rows"));
    }
    Ok((scores, (!lambda_cols.is_empty()).then_some(lambdas)))
}

pub fn sample(args: SampleArgs) -> CmdResult {
    let seed = seed_from_env(args.seed)?.unwrap_or(0);
    if !(args.tau > 0.0 && args.tau.is_finite()) {
        return Err(Failure::config("--tau must be positive"));
    }
    if args.k == 0 {
        return Err(Failure::config("--k must be >= 1"));
    }
    if args.grid == Some(0) {
        return Err(Failure::config("--grid must be >= 1"));
    }

    let mut manifest = RunManifest::new("sample-lambda", Some(seed), &args);
    for (role, path) in [("model", &args.model), ("scores", &args.scores_file)] {
        if let Some(p) = path {
            manifest.inputs.push(digest(role, p)?);
        }
    }
    let paths = match &args.out_dir {
        Some(out) => {
            create_dir(out)?;
            let cands = manifest.output("candidates", out, CANDIDATES_FILE);
            let draws = (args.draws > 0).then(|| manifest.output("draws", out, DRAWS_FILE));
            manifest.write(out)?;
            Some((cands, draws))
        }
        None => None,
    };

    let (candidates, scores): (Option<Vec<SimplexVector>>, Vec<f64>) = match &args.scores_file {
        Some(path) => {
            let (scores, lambdas) = read_scores(path)?;
            if let Some(ls) = &lambdas {
                check_dims(args.dims, ls[0].dim(), path)?;
            }
            (lambdas, scores)
        }
        None => {
            let path = args
                .model
                .as_ref()
                .expect("clap requires --model without --scores-file");
            let model = load_model(path, args.degree, args.ridge)?;
            let d = model.dim();
            check_dims(args.dims, d, path)?;
            let alpha = parse_alpha(&args.alpha, d)?;
            let cands = scheduler_candidates(d, &alpha, args.k, args.grid, seed)?;
            let scores = cands
                .iter()
                .map(|c| model.predict(c))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Failure::at(path, e))?;
            (Some(cands), scores)
        }
    };

    // without λ rows the table still needs placeholders to build a distribution
    let dist_candidates = candidates
        .clone()
        .unwrap_or_else(|| vec![SimplexVector::uniform(1).expect("m = 1"); scores.len()]);
    let dist = SchedulerDist::from_scores(dist_candidates, scores, args.tau).map_err(Failure::config)?;

    let d = candidates.as_ref().map_or(0, |c| c[0].dim());
    let mut header = vec!["index".to_string()];
    header.extend(lambda_header(d));
    header.extend(["f".to_string(), "p".to_string()]);
    let rows: Vec<Vec<String>> = (0..dist.scores.len())
        .map(|i| {
            let mut row = vec![i.to_string()];
            if let Some(c) = &candidates {
                row.extend(c[i].weights().iter().map(|x| num(*x)));
            }
            row.push(num(dist.scores[i]));
            row.push(num(dist.probs[i]));
            row
        })
        .collect();

    let mut rng = derived(seed, "scheduler/draws");
    let draws: Vec<Vec<String>> = (0..args.draws)
        .map(|j| {
            let idx = dist.sample_index(&mut rng);
            let mut row = vec![j.to_string(), idx.to_string()];
            if let Some(c) = &candidates {
                row.extend(c[idx].weights().iter().map(|x| num(*x)));
            }
            row
        })
        .collect();
    let mut draw_header = vec!["draw".to_string(), "index".to_string()];
    draw_header.extend(lambda_header(d));

    match paths {
        Some((cand_path, draw_path)) => {
            write_table(&cand_path, &header, &rows)?;
            if let Some(p) = draw_path {
                write_table(&p, &draw_header, &draws)?;
            }
            println!("wrote {} candidates (tau = {})", rows.len(), args.tau);
        }
        None => {
            print_table(&header, &rows)?;
            if !draws.is_empty() {
                println!();
                print_table(&draw_header, &draws)?;
            }
        }
    }
    Ok(())
}

fn print_table(header: &[String], rows: &[Vec<String>]) -> CmdResult {
    let mut out = csv::Writer::from_writer(std::io::stdout());
    out.write_record(header).map_err(Failure::data)?;
    for r in rows {
        out.write_record(r).map_err(Failure::data)?;
    }
    out.flush().map_err(Failure::data)
}

fn check_dims(want: Option<usize>, have: usize, path: &Path) -> CmdResult {
    match want {
        Some(w) if w != have => Err(Failure::at(
            path,
            format!("file covers {have} dimensions, --dims says {w}"),
        )),
        _ => Ok(()),
    }
}
