use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldpo"))
        .args(args)
        .env_remove("LDPO_SEED")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Rows of a CSV file as (header, numeric records).
fn read_csv(path: impl AsRef<Path>) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn train_happy_path_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let out = path_str(&tmp.path().join("run"));
    let res = run(&[
        "train",
        "--data",
        &data("toy.jsonl"),
        "--lambda",
        "uniform",
        "--beta",
        "0.1",
        "--seed",
        "7",
        "--out-dir",
        &out,
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    for f in [
        "manifest.json",
        "report.json",
        "loss.csv",
        "loss.svg",
        "policy.ckpt",
    ] {
        assert!(Path::new(&out).join(f).exists(), "{f}");
    }
    let manifest = read_json(Path::new(&out).join("manifest.json"));
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config"]["beta"], 0.1);
    assert_eq!(manifest["config"]["epochs"], 10);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    let report = read_json(Path::new(&out).join("report.json"));
    assert_eq!(report["loss_trace"].as_array().unwrap().len(), 10);
    assert!(report.get("wall_clock_secs").is_none());
    let (header, rows) = read_csv(Path::new(&out).join("loss.csv"));
    assert_eq!(
        header,
        [
            "step",
            "epoch",
            "loss_nats",
            "lambda_1",
            "lambda_2",
            "lambda_3",
            "lambda_4"
        ]
    );
    for r in &rows {
        assert!((r[3..].iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn missing_dataset_is_a_data_error_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = path_str(&tmp.path().join("nope.jsonl"));
    let res = run(&["train", "--data", &missing, "--out-dir", &path_str(tmp.path())]);
    assert_eq!(code(&res), 2);
    assert!(stderr(&res).contains("nope.jsonl"));
}

#[test]
fn malformed_dataset_still_leaves_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.jsonl");
    fs::write(&bad, "{\"prompt_id\": \"x\", \"candidates\": []}\n").unwrap();
    let out = tmp.path().join("run");
    let res = run(&["train", "--data", &path_str(&bad), "--out-dir", &path_str(&out)]);
    assert_eq!(code(&res), 2);
    assert!(out.join("manifest.json").exists());
    assert!(!out.join("report.json").exists());
}

#[test]
fn configuration_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = path_str(tmp.path());
    let toy = data("toy.jsonl");
    for args in [
        vec![
            "train",
            "--data",
            &toy,
            "--lambda",
            "fixed:0.5,0.6,0,0",
            "--out-dir",
            &out,
        ],
        vec![
            "train",
            "--data",
            &toy,
            "--lambda",
            "fixed:0.5,0.5",
            "--out-dir",
            &out,
        ],
        vec!["train", "--data", &toy, "--lambda", "onehot:9", "--out-dir", &out],
        vec!["train", "--data", &toy, "--beta", "0", "--out-dir", &out],
        vec!["train", "--data", &toy, "--epochs", "0", "--out-dir", &out],
        vec![
            "train",
            "--data",
            &toy,
            "--optimizer",
            "rmsprop",
            "--out-dir",
            &out,
        ],
        vec!["train", "--out-dir", &out],
        vec!["sample-lambda", "--model", "m.txt", "--tau", "0"],
        vec!["frobnicate"],
    ] {
        let res = run(&args);
        assert_eq!(code(&res), 1, "{args:?}: {}", stderr(&res));
    }
}

#[test]
fn divergence_exits_three_with_a_finite_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let res = run(&[
        "train",
        "--data",
        &data("toy.jsonl"),
        "--lambda",
        "onehot:0",
        "--lr",
        "1e308",
        "--epochs",
        "30",
        "--out-dir",
        &path_str(&out),
    ]);
    assert_eq!(code(&res), 3, "{}", stderr(&res));
    let ckpt = fs::read_to_string(out.join("policy.ckpt")).unwrap();
    assert!(!ckpt.contains("inf") && !ckpt.contains("NaN"));
}

#[test]
fn fixed_lambda_runs_have_identical_digests() {
    let tmp = tempfile::tempdir().unwrap();
    let out = path_str(&tmp.path().join("run"));
    let args = [
        "train",
        "--data",
        &data("toy.jsonl"),
        "--lambda",
        "fixed:0.25,0.25,0.25,0.25",
        "--seed",
        "3",
        "--out-dir",
        &out,
    ];
    assert_eq!(code(&run(&args)), 0);
    let first = fs::read(Path::new(&out).join("report.json")).unwrap();
    assert_eq!(code(&run(&args)), 0);
    assert_eq!(first, fs::read(Path::new(&out).join("report.json")).unwrap());
}

#[test]
fn flags_override_the_config_file_which_overrides_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "data = {:?}\nepochs = 2\nbeta = 0.5\noptimizer = \"sgd\"\nseed = 4\n",
            data("toy.jsonl")
        ),
    )
    .unwrap();
    let out = tmp.path().join("run");
    let res = run(&[
        "train",
        "--config",
        &path_str(&cfg),
        "--epochs",
        "3",
        "--out-dir",
        &path_str(&out),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let m = read_json(out.join("manifest.json"));
    assert_eq!(m["config"]["epochs"], 3);
    assert_eq!(m["config"]["beta"], 0.5);
    assert_eq!(m["config"]["optimizer"], "sgd");
    assert_eq!(m["config"]["seed"], 4);
    assert_eq!(m["config"]["batch_size"], 8);
    assert_eq!(m["inputs"][1]["role"], "config");

    fs::write(&cfg, "unknown_key = 1\n").unwrap();
    assert_eq!(code(&run(&["train", "--config", &path_str(&cfg)])), 1);
}

#[test]
fn a_manifest_reproduces_its_run() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let res = run(&[
        "train",
        "--data",
        &data("toy.jsonl"),
        "--policy",
        "loglinear",
        "--features",
        "64",
        "--seed",
        "9",
        "--epochs",
        "3",
        "--out-dir",
        &path_str(&a),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let b = tmp.path().join("b");
    let res = run(&[
        "train",
        "--config",
        &path_str(&a.join("manifest.json")),
        "--out-dir",
        &path_str(&b),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    for f in ["report.json", "loss.csv", "loss.svg", "policy.ckpt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_falls_back_to_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let res = Command::new(env!("CARGO_BIN_EXE_ldpo"))
        .args([
            "train",
            "--data",
            &data("toy.jsonl"),
            "--epochs",
            "1",
            "--out-dir",
            &path_str(&out),
        ])
        .env("LDPO_SEED", "21")
        .output()
        .unwrap();
    assert_eq!(code(&res), 0);
    assert_eq!(read_json(out.join("manifest.json"))["seed"], 21);

    let res = Command::new(env!("CARGO_BIN_EXE_ldpo"))
        .args([
            "train",
            "--data",
            &data("toy.jsonl"),
            "--epochs",
            "1",
            "--seed",
            "2",
            "--out-dir",
            &path_str(&out),
        ])
        .env("LDPO_SEED", "21")
        .output()
        .unwrap();
    assert_eq!(code(&res), 0);
    assert_eq!(read_json(out.join("manifest.json"))["seed"], 2);

    let res = Command::new(env!("CARGO_BIN_EXE_ldpo"))
        .args(["sample-lambda", "--model", &data("observations.csv")])
        .env("LDPO_SEED", "minus one")
        .output()
        .unwrap();
    assert_eq!(code(&res), 1);
}

fn fit_published(dir: &Path) -> PathBuf {
    let res = run(&[
        "fit-scheduler",
        "--observations",
        &data("observations.csv"),
        "--degree",
        "2",
        "--dims",
        "4",
        "--out-dir",
        &path_str(dir),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    dir.join("model.txt")
}

#[test]
fn fit_scheduler_reproduces_the_published_points() {
    let tmp = tempfile::tempdir().unwrap();
    fit_published(tmp.path());
    let fit = read_json(tmp.path().join("fit.json"));
    assert_eq!(fit["terms"], 15);
    assert_eq!(fit["term_names"].as_array().unwrap().len(), 15);
    for p in fit["fitted"].as_array().unwrap() {
        let (y, f) = (p["observed"].as_f64().unwrap(), p["predicted"].as_f64().unwrap());
        assert!((y - f).abs() <= 1e-3);
    }
    let model = fs::read_to_string(tmp.path().join("model.txt")).unwrap();
    assert!(model.contains("terms 15"));
    let (header, rows) = read_csv(tmp.path().join("predictions.csv"));
    assert_eq!(header.len(), 5);
    assert_eq!(rows.len(), 35);
    // the first grid point is the first vertex
    assert!((rows[0][4] - 0.4563).abs() <= 1e-3);
}

#[test]
fn fit_scheduler_rejects_bad_observation_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = path_str(&tmp.path().join("out"));
    let empty = tmp.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let header_only = tmp.path().join("header.csv");
    fs::write(&header_only, "lambda_1,lambda_2,score\n").unwrap();
    let garbage = tmp.path().join("garbage.csv");
    fs::write(&garbage, "lambda_1,lambda_2,score\n0.5,0.5\n").unwrap();
    let off_simplex = tmp.path().join("off.csv");
    fs::write(&off_simplex, "lambda_1,lambda_2,score\n0.7,0.7,0.4\n").unwrap();
    for f in [&empty, &header_only, &garbage, &off_simplex] {
        let res = run(&["fit-scheduler", "--observations", &path_str(f), "--out-dir", &out]);
        assert_eq!(code(&res), 2, "{}: {}", f.display(), stderr(&res));
    }
    let res = run(&[
        "fit-scheduler",
        "--observations",
        &data("observations.csv"),
        "--dims",
        "3",
        "--out-dir",
        &out,
    ]);
    assert_eq!(code(&res), 2);
}

#[test]
fn sample_lambda_tables_are_distributions() {
    let tmp = tempfile::tempdir().unwrap();
    let model = fit_published(&tmp.path().join("fit"));
    let out = tmp.path().join("s");
    let res = run(&[
        "sample-lambda",
        "--model",
        &path_str(&model),
        "--k",
        "10",
        "--tau",
        "100",
        "--seed",
        "8",
        "--draws",
        "25",
        "--out-dir",
        &path_str(&out),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let (header, rows) = read_csv(out.join("candidates.csv"));
    assert_eq!(rows.len(), 10);
    let p = column(&header, "p");
    assert!((rows.iter().map(|r| r[p]).sum::<f64>() - 1.0).abs() <= 1e-9);
    for r in &rows {
        assert!((r[1..5].iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
    let (_, draws) = read_csv(out.join("draws.csv"));
    assert_eq!(draws.len(), 25);

    let flat = tmp.path().join("flat");
    run(&[
        "sample-lambda",
        "--model",
        &path_str(&model),
        "--tau",
        "1e-9",
        "--seed",
        "8",
        "--out-dir",
        &path_str(&flat),
    ]);
    let (header, rows) = read_csv(flat.join("candidates.csv"));
    let p = column(&header, "p");
    for r in &rows {
        assert!((r[p] - 0.1).abs() < 1e-9);
    }

    let grid = tmp.path().join("grid");
    run(&[
        "sample-lambda",
        "--model",
        &path_str(&model),
        "--grid",
        "4",
        "--out-dir",
        &path_str(&grid),
    ]);
    assert_eq!(read_csv(grid.join("candidates.csv")).1.len(), 35);
}

#[test]
fn sample_lambda_reproduces_the_printed_table() {
    let res = run(&[
        "sample-lambda",
        "--scores-file",
        &data("scheduling_scores.csv"),
        "--tau",
        "100",
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let text = String::from_utf8(res.stdout).unwrap();
    let printed = [
        0.108, 0.098, 0.099, 0.082, 0.101, 0.104, 0.108, 0.095, 0.104, 0.100,
    ];
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let p = header.iter().position(|h| *h == "p").unwrap();
    let probs: Vec<f64> = lines
        .map(|l| l.split(',').nth(p).unwrap().parse().unwrap())
        .collect();
    assert_eq!(probs.len(), 10);
    for (got, want) in probs.iter().zip(printed) {
        assert!((got - want).abs() <= 0.02, "{got} vs {want}");
    }
}

#[test]
fn sample_lambda_rejects_mismatched_models() {
    let tmp = tempfile::tempdir().unwrap();
    let model = fit_published(tmp.path());
    let m = path_str(&model);
    assert_eq!(code(&run(&["sample-lambda", "--model", &m, "--dims", "3"])), 2);
    assert_eq!(
        code(&run(&["sample-lambda", "--model", &m, "--alpha", "1,2,3"])),
        2
    );
    let broken = tmp.path().join("broken.txt");
    fs::write(&broken, "ldpo-perf-model 1\nd 4\np 2\nterms 14\n").unwrap();
    assert_eq!(code(&run(&["sample-lambda", "--model", &path_str(&broken)])), 2);
}

fn trained_checkpoint(dir: &Path) -> String {
    let res = run(&[
        "train",
        "--data",
        &data("toy.jsonl"),
        "--epochs",
        "3",
        "--out-dir",
        &path_str(dir),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    path_str(&dir.join("policy.ckpt"))
}

#[test]
fn eval_modes_emit_the_expected_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = trained_checkpoint(&tmp.path().join("train"));
    let toy = data("toy.jsonl");
    let cases: [(&[&str], usize); 4] = [
        (&["--vertices"], 4),
        (&["--sweep", "4"], 35),
        (&["--lambda", "onehot:2"], 1),
        (&[], 1),
    ];
    for (i, (extra, rows)) in cases.iter().enumerate() {
        let out = tmp.path().join(format!("eval{i}"));
        let o = path_str(&out);
        let mut args = vec!["eval", "--checkpoint", &ckpt, "--data", &toy, "--out-dir", &o];
        args.extend_from_slice(extra);
        let res = run(&args);
        assert_eq!(code(&res), 0, "{}", stderr(&res));
        let (header, data_rows) = read_csv(out.join("metrics.csv"));
        assert_eq!(data_rows.len(), *rows, "{extra:?}");
        assert_eq!(header[4], "mean_loss");
        let json = read_json(out.join("metrics.json"));
        assert_eq!(json["rows"].as_array().unwrap().len(), *rows);
    }
}

#[test]
fn eval_rejects_dimension_mismatches() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = trained_checkpoint(&tmp.path().join("train"));
    let out = path_str(&tmp.path().join("eval"));
    let res = run(&[
        "eval",
        "--checkpoint",
        &ckpt,
        "--data",
        &data("toy.jsonl"),
        "--dims",
        "a,b,c,d",
        "--out-dir",
        &out,
    ]);
    assert_eq!(code(&res), 2);

    let other = tmp.path().join("other.jsonl");
    let row = r#"{"prompt_id":"z","candidates":[{"id":"a","scores":{"x":1}},{"id":"b","scores":{"x":2}}]}"#;
    fs::write(&other, format!("{row}\n")).unwrap();
    let res = run(&[
        "eval",
        "--checkpoint",
        &ckpt,
        "--data",
        &path_str(&other),
        "--out-dir",
        &out,
    ]);
    assert_eq!(code(&res), 2);

    let res = run(&[
        "eval",
        "--checkpoint",
        &path_str(&tmp.path().join("missing.ckpt")),
        "--data",
        &data("toy.jsonl"),
        "--out-dir",
        &out,
    ]);
    assert_eq!(code(&res), 2);
}

#[test]
fn report_matches_the_training_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("train");
    trained_checkpoint(&dir);
    let svg = tmp.path().join("plot.svg");
    let res = run(&[
        "report",
        "--loss-csv",
        &path_str(&dir.join("loss.csv")),
        "--out",
        &path_str(&svg),
    ]);
    assert_eq!(code(&res), 0);
    assert_eq!(fs::read(&svg).unwrap(), fs::read(dir.join("loss.svg")).unwrap());

    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "step,loss\n0,1\n").unwrap();
    assert_eq!(
        code(&run(&[
            "report",
            "--loss-csv",
            &path_str(&bad),
            "--out",
            &path_str(&svg)
        ])),
        2
    );
}

#[test]
fn scheduler_mode_trains_from_observations_or_a_model() {
    let tmp = tempfile::tempdir().unwrap();
    let model = fit_published(&tmp.path().join("fit"));
    let toy = data("toy.jsonl");
    for (i, src) in [data("observations.csv"), path_str(&model)].iter().enumerate() {
        let out = tmp.path().join(format!("run{i}"));
        let spec = format!("scheduler:{src}");
        let res = run(&[
            "train",
            "--data",
            &toy,
            "--lambda",
            &spec,
            "--seed",
            "1",
            "--epochs",
            "2",
            "--out-dir",
            &path_str(&out),
        ]);
        assert_eq!(code(&res), 0, "{}", stderr(&res));
    }
    // fitting on the fly and loading the fitted model give the same run
    assert_eq!(
        fs::read(tmp.path().join("run0/report.json")).unwrap(),
        fs::read(tmp.path().join("run1/report.json")).unwrap()
    );
    let three = format!("--dims={}", "a,b,c");
    let res = run(&[
        "train",
        "--data",
        &toy,
        "--lambda",
        &format!("scheduler:{}", path_str(&model)),
        &three,
        "--out-dir",
        &path_str(tmp.path()),
    ]);
    assert_eq!(code(&res), 2);
}
