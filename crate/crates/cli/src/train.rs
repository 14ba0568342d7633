use std::path::{Path, PathBuf};

use clap::Args;
use ldpo_core::dataset::{default_dimensions, load_jsonl};
use ldpo_core::policy::{
    AnyPolicy, Checkpoint, FeatureFn, LogLinearPolicy, DEFAULT_FEATURE_DIM, DEFAULT_FEATURE_SEED,
};
use ldpo_core::scheduler::{DEFAULT_CANDIDATES, DEFAULT_DEGREE, DEFAULT_RIDGE, DEFAULT_TAU};
use ldpo_core::trainer::{
    self, Granularity, LambdaMode, LrSchedule, OptimizerKind, TrainConfig, TrainReport,
};
use ldpo_core::{Error, TabularPolicy};
use serde::{Deserialize, Serialize};

use crate::failure::{from_run, CmdResult, Failure};
use crate::io::{create_dir, digest, write_json, write_text, write_with};
use crate::manifest::RunManifest;
use crate::opts::{
    load_model, parse_dims, scheduler_dist, seed_from_env, target_mode, GranularityArg, LambdaSpec,
    OptimizerArg, PolicyArg, ReferenceArg, ScheduleArg, TargetModeArg,
};
use crate::report::loss_svg;

pub const REPORT_FILE: &str = "report.json";
pub const LOSS_CSV_FILE: &str = "loss.csv";
pub const LOSS_SVG_FILE: &str = "loss.svg";
pub const CHECKPOINT_FILE: &str = "policy.ckpt";

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset, one prompt group per JSONL line.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated dimension names.
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<String>>,
    /// uniform | fixed:a,b,... | onehot:k | scheduler:PATH (model file or observations CSV).
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long, value_enum)]
    pub lr_schedule: Option<ScheduleArg>,
    /// Fraction of steps spent warming up under the cosine schedule.
    #[arg(long)]
    pub warmup_frac: Option<f64>,
    #[arg(long, value_enum)]
    pub granularity: Option<GranularityArg>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
    /// Hashed feature dimension for the log-linear policy.
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long)]
    pub feature_seed: Option<u64>,
    #[arg(long, value_enum)]
    pub reference: Option<ReferenceArg>,
    #[arg(long, value_enum)]
    pub target_mode: Option<TargetModeArg>,
    #[arg(long)]
    pub pref_temperature: Option<f64>,
    /// Number of Dirichlet candidates for the scheduler.
    #[arg(long)]
    pub scheduler_k: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Polynomial degree when the scheduler is fitted from observations.
    #[arg(long)]
    pub degree: Option<u32>,
    #[arg(long)]
    pub ridge: Option<f64>,
    /// Seed for every random stream; falls back to LDPO_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML settings file, or a manifest.json from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Fully resolved settings; recorded verbatim in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub data: PathBuf,
    pub dims: Vec<String>,
    pub lambda: String,
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerArg,
    pub lr_schedule: ScheduleArg,
    pub warmup_frac: f64,
    pub granularity: GranularityArg,
    pub policy: PolicyArg,
    pub features: usize,
    pub feature_seed: u64,
    pub reference: ReferenceArg,
    pub target_mode: TargetModeArg,
    pub pref_temperature: f64,
    pub scheduler_k: usize,
    pub tau: f64,
    pub degree: u32,
    pub ridge: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialSettings {
    data: Option<PathBuf>,
    dims: Option<Vec<String>>,
    lambda: Option<String>,
    beta: Option<f64>,
    learning_rate: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    optimizer: Option<OptimizerArg>,
    lr_schedule: Option<ScheduleArg>,
    warmup_frac: Option<f64>,
    granularity: Option<GranularityArg>,
    policy: Option<PolicyArg>,
    features: Option<usize>,
    feature_seed: Option<u64>,
    reference: Option<ReferenceArg>,
    target_mode: Option<TargetModeArg>,
    pref_temperature: Option<f64>,
    scheduler_k: Option<usize>,
    tau: Option<f64>,
    degree: Option<u32>,
    ridge: Option<f64>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
}

fn load_settings_file(path: &Path) -> CmdResult<PartialSettings> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    let bad = |e: &dyn std::fmt::Display| Failure::config(format!("{}: {e}", path.display()));
    if path.extension().is_some_and(|e| e == "json") {
        let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(&e))?;
        // a run manifest nests the settings under "config"
        if let Some(inner) = value.get_mut("config") {
            value = inner.take();
        }
        serde_json::from_value(value).map_err(|e| bad(&e))
    } else {
        toml::from_str(&text).map_err(|e| bad(&e))
    }
}

impl TrainSettings {
    fn resolve(args: &TrainArgs) -> CmdResult<Self> {
        let file = match &args.config {
            Some(path) => load_settings_file(path)?,
            None => PartialSettings::default(),
        };
        macro_rules! pick {
            ($field:ident, $default:expr) => {
                args.$field
                    .clone()
                    .or(file.$field.clone())
                    .unwrap_or_else(|| $default)
            };
        }
        let data = args
            .data
            .clone()
            .or(file.data.clone())
            .ok_or_else(|| Failure::config("no dataset given (--data or `data` in the config file)"))?;
        // the environment seed only fills in when neither the flag nor the file sets one
        let seed = match args.seed.or(file.seed) {
            Some(s) => s,
            None => seed_from_env(None)?.unwrap_or(0),
        };
        let defaults = TrainConfig::default();
        Ok(Self {
            data,
            dims: parse_dims(&pick!(dims, default_dimensions()))?,
            lambda: pick!(lambda, "uniform".into()),
            beta: pick!(beta, defaults.beta),
            learning_rate: pick!(learning_rate, defaults.learning_rate),
            epochs: pick!(epochs, defaults.epochs),
            batch_size: pick!(batch_size, defaults.batch_size),
            optimizer: pick!(optimizer, OptimizerArg::Adam),
            lr_schedule: pick!(lr_schedule, ScheduleArg::Constant),
            warmup_frac: pick!(warmup_frac, 0.1),
            granularity: pick!(granularity, GranularityArg::PerPrompt),
            policy: pick!(policy, PolicyArg::Tabular),
            features: pick!(features, DEFAULT_FEATURE_DIM),
            feature_seed: pick!(feature_seed, DEFAULT_FEATURE_SEED),
            reference: pick!(reference, ReferenceArg::Auto),
            target_mode: pick!(target_mode, TargetModeArg::Softmax),
            pref_temperature: pick!(pref_temperature, 1.0),
            scheduler_k: pick!(scheduler_k, DEFAULT_CANDIDATES),
            tau: pick!(tau, DEFAULT_TAU),
            degree: pick!(degree, DEFAULT_DEGREE),
            ridge: pick!(ridge, DEFAULT_RIDGE),
            seed,
            out_dir: pick!(out_dir, PathBuf::from("runs/train")),
        })
    }

    /// Everything but the scheduler distribution, which needs the model file.
    fn train_config(&self, spec: &LambdaSpec) -> CmdResult<TrainConfig> {
        let lambda_mode = match spec.fixed_vector(self.dims.len())? {
            Some(lambda) => LambdaMode::Fixed { lambda },
            None => LambdaMode::Uniform,
        };
        let config = TrainConfig {
            beta: self.beta,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lambda_mode,
            granularity: match self.granularity {
                GranularityArg::PerPrompt => Granularity::PerPrompt,
                GranularityArg::PerBatch => Granularity::PerBatch,
            },
            optimizer: match self.optimizer {
                OptimizerArg::Adam => OptimizerKind::adam(),
                OptimizerArg::Sgd => OptimizerKind::Sgd,
            },
            lr_schedule: match self.lr_schedule {
                ScheduleArg::Constant => LrSchedule::Constant,
                ScheduleArg::Cosine => LrSchedule::Cosine {
                    warmup_frac: self.warmup_frac,
                },
            },
            seed: self.seed,
            targets: target_mode(self.target_mode, self.pref_temperature),
        };
        config.validate().map_err(Failure::config)?;
        if self.policy == PolicyArg::Loglinear && self.features == 0 {
            return Err(Failure::config("--features must be >= 1"));
        }
        if matches!(spec, LambdaSpec::Scheduler(_)) && self.scheduler_k == 0 {
            return Err(Failure::config("--scheduler-k must be >= 1"));
        }
        Ok(config)
    }
}

pub fn run(args: TrainArgs) -> CmdResult {
    let settings = TrainSettings::resolve(&args)?;
    let spec: LambdaSpec = settings.lambda.parse().map_err(Failure::config)?;
    let mut config = settings.train_config(&spec)?;

    let out = settings.out_dir.clone();
    create_dir(&out)?;
    let mut manifest = RunManifest::new("train", Some(settings.seed), &settings);
    manifest.inputs.push(digest("data", &settings.data)?);
    if let LambdaSpec::Scheduler(path) = &spec {
        manifest.inputs.push(digest("scheduler", path)?);
    }
    if let Some(path) = &args.config {
        manifest.inputs.push(digest("config", path)?);
    }
    let report_path = manifest.output("report", &out, REPORT_FILE);
    let csv_path = manifest.output("loss_csv", &out, LOSS_CSV_FILE);
    let svg_path = manifest.output("loss_svg", &out, LOSS_SVG_FILE);
    let ckpt_path = manifest.output("checkpoint", &out, CHECKPOINT_FILE);
    manifest.write(&out)?;

    let data = load_jsonl(&settings.data, &settings.dims).map_err(|e| Failure::at(&settings.data, e))?;
    if data.is_empty() {
        return Err(Failure::at(&settings.data, "no prompt groups"));
    }
    if let LambdaSpec::Scheduler(path) = &spec {
        let model = load_model(path, settings.degree, settings.ridge)?;
        let dist = scheduler_dist(
            &model,
            settings.dims.len(),
            settings.scheduler_k,
            settings.tau,
            settings.seed,
        )?;
        config.lambda_mode = LambdaMode::Scheduler { dist };
    }
    let reference = settings.reference.resolve(&data);
    let mut policy = match settings.policy {
        PolicyArg::Tabular => AnyPolicy::Tabular(TabularPolicy::zeros(&data)),
        PolicyArg::Loglinear => AnyPolicy::LogLinear(
            LogLinearPolicy::new(FeatureFn::HashedTrigrams {
                dim: settings.features,
                seed: settings.feature_seed,
            })
            .map_err(Failure::config)?,
        ),
    };

    let result = trainer::train(&data, &settings.dims, &mut policy, &reference, &config);
    let checkpoint = Checkpoint {
        policy,
        dims: settings.dims.clone(),
    };
    let report = match result {
        Ok(report) => report,
        Err(e @ Error::DivergenceDetected { .. }) => {
            // keep the last finite parameters for inspection
            write_with(&ckpt_path, |w| checkpoint.write(w).map_err(|e| e.to_string()))?;
            return Err(from_run(e));
        }
        Err(e) => return Err(from_run(e)),
    };
    write_with(&ckpt_path, |w| checkpoint.write(w).map_err(|e| e.to_string()))?;
    write_json(&report_path, &report)?;
    write_with(&csv_path, |w| report.write_loss_csv(w).map_err(|e| e.to_string()))?;
    write_text(&svg_path, &loss_svg(&step_points(&report)))?;

    println!(
        "trained {} steps over {} groups; final loss {:.6} nats, TV {:.3e}; outputs in {}",
        report.steps.len(),
        data.len(),
        report.final_metrics.mean_loss,
        report.final_metrics.mean_tv,
        out.display()
    );
    Ok(())
}

fn step_points(report: &TrainReport) -> Vec<(f64, f64)> {
    report.steps.iter().map(|s| (s.step as f64, s.loss)).collect()
}
