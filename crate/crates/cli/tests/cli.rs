use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use perturbvar::io::{read_ten1, write_ten1};
use perturbvar::metrics::{error_map, evaluate, EvalInput, LossKind, MetricOptions};
use perturbvar::{estimate, models, synthetic, BlackBoxModel, Dims, ImageTensor, PerturbationSpec};
use perturbvar_cli::{execute, Command, Overrides, RunConfig};
use serde_json::{json, Value};
use tempfile::TempDir;

fn write_pairs(dir: &Path, count: usize, size: usize) -> (Vec<String>, Vec<String>) {
    let (mut inputs, mut truths) = (vec![], vec![]);
    for i in 0..count {
        let (lr, hr) = synthetic::scene_pair(40 + i as u64, size, size, 1);
        let (x, y) = (format!("x{i}.ten1"), format!("y{i}.ten1"));
        write_ten1(dir.join(&x), &lr).unwrap();
        write_ten1(dir.join(&y), &hr).unwrap();
        inputs.push(x);
        truths.push(y);
    }
    (inputs, truths)
}

fn run(dir: &Path, cmd: Command, doc: Value) -> PathBuf {
    let cfg = RunConfig::from_value(doc, dir, &Overrides::default()).unwrap();
    execute(cmd, &cfg).unwrap();
    cfg.output_dir
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn read_csv(path: PathBuf) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn zero_sigma_estimate_has_zero_variance() {
    let tmp = TempDir::new().unwrap();
    let (inputs, _) = write_pairs(tmp.path(), 1, 8);
    let out = run(
        tmp.path(),
        Command::Estimate,
        json!({
            "model": {"name": "toy_upsampler", "seed": 1},
            "inputs": inputs,
            "perturbation": {"method": "gaussian_noise", "sigma": 0.0, "tap": "loc2", "sample_count": 4},
        }),
    );
    let var = read_ten1(out.join("maps/x0.variance.ten1")).unwrap();
    assert_eq!(var.dims(), Dims::new(16, 16, 1));
    assert!(var.data().iter().all(|&v| v == 0.0));
    let meta = read_json(out.join("estimate.json"));
    assert_eq!(meta["spec"]["master_seed"], 0);
    assert!(meta.get("timings_ms").is_none());
}

#[test]
fn equivariant_model_full_transform_set_is_zero() {
    let tmp = TempDir::new().unwrap();
    let (inputs, _) = write_pairs(tmp.path(), 1, 6);
    let out = run(
        tmp.path(),
        Command::Estimate,
        json!({
            "model": {"name": "nearest_upsampler"},
            "inputs": inputs,
            "perturbation": {"method": "transform_set", "transform_subset": ["r0","r1","r2","r3","r0f","r1f","r2f","r3f"]},
        }),
    );
    let var = read_ten1(out.join("maps/x0.variance.ten1")).unwrap();
    assert!(var.data().iter().all(|&v| v == 0.0));
}

#[test]
fn uncertainty_equal_to_error_scores_perfectly() {
    let tmp = TempDir::new().unwrap();
    let d = Dims::new(12, 12, 1);
    let mut cfg = json!({"uncertainty": [], "prediction": [], "ground_truth": []});
    for i in 0..3 {
        // Dyadic values survive the f32 round trip exactly.
        let y = ImageTensor::from_fn(d, |r, c, _| ((r * 5 + c * 3 + i * 7) % 11) as f64 / 16.0).unwrap();
        let p = ImageTensor::from_fn(d, |r, c, _| ((r * 2 + c * 7 + i) % 13) as f64 / 16.0).unwrap();
        let e = error_map(&p, &y, LossKind::L1).unwrap().values;
        for (key, img) in [("uncertainty", &e), ("prediction", &p), ("ground_truth", &y)] {
            let name = format!("{key}{i}.ten1");
            write_ten1(tmp.path().join(&name), img).unwrap();
            cfg[key].as_array_mut().unwrap().push(name.into());
        }
    }
    cfg["metrics"] = json!({"oracle": false});
    let out = run(tmp.path(), Command::Evaluate, cfg);
    let report = read_json(out.join("evaluation.json"));
    for variant in ["pixel", "mean", "block", "patch"] {
        let corr = report["correlation"][variant]["value"].as_f64().unwrap();
        let ause = report["ause"][variant]["value"].as_f64().unwrap();
        assert!((corr - 1.0).abs() < 1e-9, "{variant} correlation {corr}");
        assert!(ause.abs() < 1e-12, "{variant} ause {ause}");
    }
    assert!(out.join("curves/sparsification_pixel.csv").is_file());
}

#[test]
fn single_image_mean_correlation_undefined() {
    let tmp = TempDir::new().unwrap();
    let (inputs, truths) = write_pairs(tmp.path(), 1, 8);
    let out = run(
        tmp.path(),
        Command::Evaluate,
        json!({
            "model": {"name": "toy_upsampler"},
            "inputs": inputs,
            "ground_truth": truths,
            "perturbation": {"method": "dropout", "rate": 0.2, "tap": "loc2", "sample_count": 8},
        }),
    );
    let report = read_json(out.join("evaluation.json"));
    assert_eq!(report["correlation"]["mean"]["value"], Value::Null);
    assert_eq!(report["correlation"]["mean"]["undefined"], "too_few_values");
    assert!(report["correlation"]["pixel"]["value"].is_f64());
    assert!(report["ause"]["pixel"]["value"].is_f64());
}

#[test]
fn report_matches_library_calls() {
    let tmp = TempDir::new().unwrap();
    let (inputs, truths) = write_pairs(tmp.path(), 2, 10);
    let out = run(
        tmp.path(),
        Command::Report,
        json!({
            "model": {"name": "toy_upsampler", "seed": 3},
            "inputs": inputs,
            "ground_truth": truths,
            "perturbation": {"method": "gaussian_noise", "sigma": 0.05, "tap": "loc1", "sample_count": 6},
            "seed": 11,
            "bound": {"pixels": [[3, 4, 0]], "t_grid": [0.01, 0.05, 0.1]},
        }),
    );
    let model = models::toy_upsampler(3, 1);
    let spec = PerturbationSpec::noise("loc1", 0.05, 6, 11).unwrap();
    let eval: Vec<EvalInput> = inputs
        .iter()
        .zip(&truths)
        .map(|(x, y)| {
            let x = read_ten1(tmp.path().join(x)).unwrap();
            EvalInput {
                uncertainty: estimate::estimate(&model, &x, &spec).unwrap(),
                prediction: model.forward(&x).unwrap(),
                ground_truth: read_ten1(tmp.path().join(y)).unwrap(),
            }
        })
        .collect();
    let lib = serde_json::to_value(evaluate(&eval, &MetricOptions::default(), Some(&spec)).unwrap()).unwrap();
    let cli = read_json(out.join("report.json"));
    assert_eq!(cli["evaluation"], lib);
    assert_eq!(read_json(out.join("evaluation.json")), lib);

    let samples = estimate::sample(&model, &read_ten1(tmp.path().join(&inputs[0])).unwrap(), &spec).unwrap();
    let y = read_ten1(tmp.path().join(&truths[0])).unwrap().get(3, 4, 0);
    let curve = perturbvar::metrics::bound_curve(&samples, y, (3, 4, 0), &[0.01, 0.05, 0.1]).unwrap();
    assert_eq!(cli["bound"][0]["variance"].as_f64().unwrap(), curve.variance);
    assert_eq!(cli["bound"][0]["gap_area"].as_f64().unwrap(), curve.gap_area());
    assert!(out.join("segments/x0.labels.png").is_file());
}

#[test]
fn sweep_zero_strength_row() {
    let tmp = TempDir::new().unwrap();
    let (inputs, truths) = write_pairs(tmp.path(), 2, 8);
    let out = run(
        tmp.path(),
        Command::Sweep,
        json!({
            "model": {"name": "toy_upsampler"},
            "inputs": inputs,
            "ground_truth": truths,
            "sweep": {"taps": ["loc1"], "sigmas": [0.0, 0.1], "sample_count": 4},
        }),
    );
    let rows = read_csv(out.join("sweep.csv"));
    assert_eq!(rows.len(), 2);
    let zero = &rows[0];
    assert_eq!((zero[0].as_str(), zero[1].as_str(), zero[2].as_str()), ("gaussian_noise", "loc1", "0"));
    let (base, mean_c): (f64, f64) = (zero[4].parse().unwrap(), zero[5].parse().unwrap());
    assert!((base - mean_c).abs() < 1e-12);
    assert_eq!(zero[8], "");
    assert!(rows[1][8].parse::<f64>().is_ok());
}

#[test]
fn sweep_all_taps_at_fixed_rate() {
    let tmp = TempDir::new().unwrap();
    let (inputs, truths) = write_pairs(tmp.path(), 1, 8);
    let out = run(
        tmp.path(),
        Command::Sweep,
        json!({
            "model": {"name": "toy_upsampler"},
            "inputs": inputs,
            "ground_truth": truths,
            "sweep": {"rates": [0.2], "sample_count": 4},
        }),
    );
    let rows = read_csv(out.join("sweep.csv"));
    let taps: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(taps, ["loc0", "loc1", "loc2", "loc3"]);
}

#[test]
fn analytic_sweep_mean_c_monotone_over_seeds() {
    let tmp = TempDir::new().unwrap();
    let (inputs, _) = write_pairs(tmp.path(), 1, 8);
    // Truth is the clean output, so C starts at zero.
    let x = read_ten1(tmp.path().join(&inputs[0])).unwrap();
    write_ten1(tmp.path().join("clean.ten1"), &x.map(|v| 2.0 * v).unwrap()).unwrap();
    let sigmas = [0.0, 0.05, 0.1, 0.2, 0.4];
    let mut mean_c = vec![0.0; sigmas.len()];
    for seed in 0..10 {
        let doc = json!({
            "model": {"name": "analytic_linear", "post_gain": 2.0},
            "inputs": inputs,
            "ground_truth": ["clean.ten1"],
            "sweep": {"sigmas": sigmas, "sample_count": 8},
            "metrics": {"patch_grid": [4, 4]},
            "seed": seed,
            "output_dir": format!("out{seed}"),
        });
        let out = run(tmp.path(), Command::Sweep, doc);
        for (acc, row) in mean_c.iter_mut().zip(read_csv(out.join("sweep.csv"))) {
            *acc += row[5].parse::<f64>().unwrap() / 10.0;
        }
    }
    assert!(mean_c[0] < 1e-6);
    assert!(mean_c.windows(2).all(|w| w[1] >= w[0]), "{mean_c:?}");
}

#[test]
fn bound_degenerate_and_invalid_rows() {
    let tmp = TempDir::new().unwrap();
    let x = ImageTensor::filled(Dims::new(4, 4, 1), 0.25).unwrap();
    write_ten1(tmp.path().join("x.ten1"), &x).unwrap();
    // gain 2: output 0.5 everywhere; zero noise puts every sample on the truth.
    write_ten1(tmp.path().join("y.ten1"), &x.map(|v| 2.0 * v).unwrap()).unwrap();
    let out = run(
        tmp.path(),
        Command::Bound,
        json!({
            "model": {"name": "analytic_linear", "post_gain": 2.0},
            "inputs": ["x.ten1"],
            "ground_truth": ["y.ten1"],
            "perturbation": {"method": "gaussian_noise", "sigma": 0.0, "tap": "mid", "sample_count": 4},
            "bound": {"pixels": [[1, 2, 0]], "t_grid": [0.1, 0.2]},
        }),
    );
    let rows = read_csv(out.join("bound/pixel_r1_c2_ch0.csv"));
    assert!(rows.iter().all(|r| r[1] == "0"));

    // Truth far from the output: t below C has no bound.
    write_ten1(tmp.path().join("y.ten1"), &x.map(|_| 0.0).unwrap()).unwrap();
    let out = run(
        tmp.path(),
        Command::Bound,
        json!({
            "model": {"name": "analytic_linear", "post_gain": 2.0},
            "inputs": ["x.ten1"],
            "ground_truth": ["y.ten1"],
            "perturbation": {"method": "gaussian_noise", "sigma": 0.05, "tap": "mid", "sample_count": 64},
            "bound": {"pixels": [[0, 0, 0]], "t_grid": [0.1, 0.3, 0.9]},
        }),
    );
    let rows = read_csv(out.join("bound/pixel_r0_c0_ch0.csv"));
    assert_eq!((rows[0][2].as_str(), rows[0][3].as_str()), ("", "false"));
    assert_eq!(rows[2][3], "true");
    assert!(rows[2][2].parse::<f64>().is_ok());
}

#[test]
fn analytic_bound_dominates_empirical() {
    let tmp = TempDir::new().unwrap();
    let x = ImageTensor::filled(Dims::new(2, 2, 1), 0.3).unwrap();
    write_ten1(tmp.path().join("x.ten1"), &x).unwrap();
    write_ten1(tmp.path().join("y.ten1"), &x.map(|v| 1.5 * v + 0.02).unwrap()).unwrap();
    let out = run(
        tmp.path(),
        Command::Bound,
        json!({
            "model": {"name": "analytic_linear", "post_gain": 1.5},
            "inputs": ["x.ten1"],
            "ground_truth": ["y.ten1"],
            "perturbation": {"method": "gaussian_noise", "sigma": 0.1, "tap": "mid", "sample_count": 20000},
            "bound": {"pixels": [[0, 1, 0]], "t_grid": {"start": 0.05, "stop": 0.8, "count": 40}},
        }),
    );
    for row in read_csv(out.join("bound/pixel_r0_c1_ch0.csv")) {
        if row[3] == "true" {
            let (emp, bound): (f64, f64) = (row[1].parse().unwrap(), row[2].parse().unwrap());
            assert!(emp <= bound + 0.01, "{row:?}");
        }
    }
}

fn exit_code(dir: &Path, cmd: &str, doc: Value, extra: &[&str]) -> i32 {
    let path = dir.join(format!("{cmd}.json"));
    fs::write(&path, doc.to_string()).unwrap();
    let status = Process::new(env!("CARGO_BIN_EXE_perturbvar"))
        .arg(cmd)
        .arg("--config")
        .arg(&path)
        .args(extra)
        .output()
        .unwrap();
    status.status.code().unwrap()
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let (inputs, truths) = write_pairs(tmp.path(), 1, 6);
    let dir = tmp.path();
    let base = json!({
        "model": {"name": "toy_upsampler"},
        "inputs": inputs,
        "ground_truth": truths,
        "perturbation": {"method": "dropout", "rate": 0.1, "tap": "loc2", "sample_count": 4},
    });
    assert_eq!(exit_code(dir, "estimate", base.clone(), &[]), 0);
    assert_eq!(exit_code(dir, "estimate", base.clone(), &["--set", "perturbation.tap=loc9"]), 2);
    assert_eq!(exit_code(dir, "estimate", base.clone(), &["--set", "inputs.0=nope.ten1"]), 2);
    assert_eq!(exit_code(dir, "evaluate", base.clone(), &["--set", "ground_truth=[]"]), 2);
    assert_eq!(exit_code(dir, "sweep", base.clone(), &["--set", "sweep.rates=[1.5]"]), 2);
    assert_eq!(
        exit_code(dir, "bound", base.clone(), &["--set", "bound.pixels=[[99,0,0]]"]),
        4
    );
    fs::write(dir.join("bad.ten1"), b"TEN1garbage").unwrap();
    assert_eq!(exit_code(dir, "estimate", base, &["--set", "inputs.0=bad.ten1"]), 3);
}
