use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use perturbvar::estimate::{self, UncertaintyMap};
use perturbvar::io;
use perturbvar::metrics::{
    self, bound_curve, error_map, evaluate_with_labels, BoundCurve, EvalInput, EvaluationReport, LossKind, MetricSuite,
    MetricValue, SparsificationCurve, Variants, MIN_TAIL_SAMPLES,
};
use perturbvar::segment::lcm_segment;
use perturbvar::{GrayBoxModel, ImageTensor, MethodKind, PerturbationSpec, SegmentationLabels};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ModelConfig, RunConfig};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Estimate,
    Evaluate,
    Sweep,
    Bound,
    Report,
}

/// Runs one command, on a dedicated pool when `threads` is set. Returns the
/// written paths relative to the output directory.
pub fn execute(cmd: Command, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?
            .install(|| dispatch(cmd, cfg)),
        None => dispatch(cmd, cfg),
    }
}

fn dispatch(cmd: Command, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let mut out = Output::new(&cfg.output_dir)?;
    match cmd {
        Command::Estimate => cmd_estimate(cfg, &mut out)?,
        Command::Evaluate => cmd_evaluate(cfg, &mut out)?,
        Command::Sweep => cmd_sweep(cfg, &mut out)?,
        Command::Bound => cmd_bound(cfg, &mut out)?,
        Command::Report => cmd_report(cfg, &mut out)?,
    }
    Ok(out.written)
}

/// Single owner of every file written by a command.
struct Output {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        self.written.push(PathBuf::from(rel));
        Ok(path)
    }

    fn bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(rel)?;
        fs::write(&path, bytes).map_err(|e| CliError::io(path, e))
    }

    fn json(&mut self, rel: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable report");
        text.push('\n');
        self.bytes(rel, text.as_bytes())
    }

    fn ten1(&mut self, rel: &str, image: &ImageTensor) -> Result<()> {
        let bytes = io::image_to_ten1(image)?;
        self.bytes(rel, &bytes)
    }

    fn png(&mut self, rel: &str, image: &ImageTensor) -> Result<()> {
        let path = self.path(rel)?;
        io::write_png(&path, image).map_err(|source| CliError::Load { path, source })
    }

    fn csv(&mut self, rel: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fail = |e: csv::Error| CliError::io(rel, e.into());
        w.write_record(header).map_err(fail)?;
        for row in rows {
            w.write_record(row).map_err(fail)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::io(rel, e.into_error()))?;
        self.bytes(rel, &bytes)
    }
}

#[derive(Default, Serialize)]
struct Timings(BTreeMap<&'static str, f64>);

impl Timings {
    fn time<T>(&mut self, enabled: bool, label: &'static str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let v = f();
        if enabled {
            self.0.insert(label, start.elapsed().as_secs_f64() * 1e3);
        }
        v
    }
}

fn load(path: &Path) -> Result<ImageTensor> {
    io::load_image(path).map_err(|source| CliError::Load {
        path: path.to_path_buf(),
        source,
    })
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<ImageTensor>> {
    paths.par_iter().map(|p| load(p)).collect()
}

/// File stems, which name the per-image outputs.
fn image_names(paths: &[PathBuf]) -> Result<Vec<String>> {
    let names: Vec<String> = paths
        .iter()
        .map(|p| p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned()))
        .collect();
    let unique: HashSet<&String> = names.iter().collect();
    if unique.len() != names.len() || names.iter().any(String::is_empty) {
        return Err(CliError::config("input file names must have distinct, non-empty stems"));
    }
    Ok(names)
}

fn build_model(cfg: &RunConfig, inputs: &[ImageTensor]) -> Result<Box<dyn GrayBoxModel>> {
    let channels = inputs.first().map_or(1, |x| x.channels());
    Ok(cfg.model()?.build(channels))
}

fn check_tap(model: &dyn GrayBoxModel, spec: &PerturbationSpec) -> Result<()> {
    if let Some(tap) = spec.method().tap() {
        let available = model.taps();
        if !available.iter().any(|t| t == tap) {
            return Err(CliError::config(format!(
                "unknown tap `{tap}` for model {} (available: {})",
                model.name(),
                available.join(", ")
            )));
        }
    }
    Ok(())
}

fn require_inputs(cfg: &RunConfig) -> Result<()> {
    if cfg.inputs.is_empty() {
        return Err(CliError::config("no inputs configured"));
    }
    Ok(())
}

fn require_ground_truth(cfg: &RunConfig, count: usize) -> Result<()> {
    if cfg.ground_truth.is_empty() {
        return Err(CliError::config("ground_truth is required"));
    }
    if cfg.ground_truth.len() != count {
        return Err(CliError::config(format!(
            "{} ground-truth files for {count} images",
            cfg.ground_truth.len()
        )));
    }
    Ok(())
}

/// Per-image estimation results.
struct Estimated {
    prediction: ImageTensor,
    map: UncertaintyMap,
}

fn estimate_all(model: &dyn GrayBoxModel, inputs: &[ImageTensor], spec: &PerturbationSpec) -> Result<Vec<Estimated>> {
    inputs
        .par_iter()
        .map(|x| {
            Ok(Estimated {
                prediction: model.forward(x)?,
                map: estimate::estimate(model, x, spec)?,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct ImageEntry {
    name: String,
    input: String,
    dims: String,
    variance: String,
    mean: String,
    prediction: String,
}

fn write_maps(out: &mut Output, names: &[String], inputs: &[PathBuf], est: &[Estimated]) -> Result<Vec<ImageEntry>> {
    let mut entries = Vec::with_capacity(est.len());
    for ((name, input), e) in names.iter().zip(inputs).zip(est) {
        let entry = ImageEntry {
            name: name.clone(),
            input: input.display().to_string(),
            dims: e.map.variance.dims().to_string(),
            variance: format!("maps/{name}.variance.ten1"),
            mean: format!("maps/{name}.mean.ten1"),
            prediction: format!("maps/{name}.prediction.ten1"),
        };
        out.ten1(&entry.variance, &e.map.variance)?;
        out.ten1(&entry.mean, &e.map.mean)?;
        out.ten1(&entry.prediction, &e.prediction)?;
        entries.push(entry);
    }
    Ok(entries)
}

#[derive(Serialize)]
struct EstimateMeta<'a> {
    command: &'static str,
    model: &'a ModelConfig,
    seed: u64,
    spec: &'a PerturbationSpec,
    images: Vec<ImageEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timings_ms: Option<Timings>,
}

fn cmd_estimate(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    require_inputs(cfg)?;
    let spec = cfg.require_perturbation()?;
    let names = image_names(&cfg.inputs)?;
    let mut timings = Timings::default();
    let inputs = timings.time(cfg.record_timings, "load", || load_all(&cfg.inputs))?;
    let model = build_model(cfg, &inputs)?;
    check_tap(model.as_ref(), &spec)?;
    let est = timings.time(cfg.record_timings, "estimate", || estimate_all(model.as_ref(), &inputs, &spec))?;
    let images = write_maps(out, &names, &cfg.inputs, &est)?;
    out.json(
        "estimate.json",
        &EstimateMeta {
            command: "estimate",
            model: cfg.model()?,
            seed: cfg.seed,
            spec: &spec,
            images,
            timings_ms: cfg.record_timings.then_some(timings),
        },
    )
}

/// Evaluation inputs from precomputed maps, or by estimating from `inputs`.
fn evaluation_inputs(cfg: &RunConfig) -> Result<(Vec<EvalInput>, Option<PerturbationSpec>)> {
    if !cfg.uncertainty.is_empty() {
        let n = cfg.uncertainty.len();
        require_ground_truth(cfg, n)?;
        if cfg.prediction.len() != n || !(cfg.mean.is_empty() || cfg.mean.len() == n) {
            return Err(CliError::config(
                "uncertainty, prediction and (optional) mean lists must have equal lengths",
            ));
        }
        let variance = load_all(&cfg.uncertainty)?;
        let prediction = load_all(&cfg.prediction)?;
        let truth = load_all(&cfg.ground_truth)?;
        let mean = if cfg.mean.is_empty() {
            prediction.clone()
        } else {
            load_all(&cfg.mean)?
        };
        let inputs = variance
            .into_iter()
            .zip(mean)
            .zip(prediction)
            .zip(truth)
            .map(|(((variance, mean), prediction), ground_truth)| EvalInput {
                // The sample count is not recorded in a bare variance map.
                uncertainty: UncertaintyMap {
                    variance,
                    mean,
                    sample_count: 0,
                },
                prediction,
                ground_truth,
            })
            .collect();
        return Ok((inputs, cfg.perturbation()?));
    }
    require_inputs(cfg)?;
    require_ground_truth(cfg, cfg.inputs.len())?;
    let spec = cfg.require_perturbation()?;
    let inputs = load_all(&cfg.inputs)?;
    let truth = load_all(&cfg.ground_truth)?;
    let model = build_model(cfg, &inputs)?;
    check_tap(model.as_ref(), &spec)?;
    let est = estimate_all(model.as_ref(), &inputs, &spec)?;
    let inputs = est
        .into_iter()
        .zip(truth)
        .map(|(e, ground_truth)| EvalInput {
            uncertainty: e.map,
            prediction: e.prediction,
            ground_truth,
        })
        .collect();
    Ok((inputs, Some(spec)))
}

fn segment_all(inputs: &[EvalInput], cfg: &RunConfig) -> Result<Vec<SegmentationLabels>> {
    inputs
        .par_iter()
        .map(|i| Ok(lcm_segment(&i.prediction, &cfg.metrics.segmentation)?))
        .collect()
}

fn curve_rows(c: &SparsificationCurve) -> Vec<Vec<String>> {
    c.fractions
        .iter()
        .zip(&c.method)
        .zip(&c.oracle)
        .map(|((f, m), o)| vec![f.to_string(), m.to_string(), o.to_string()])
        .collect()
}

fn write_curves(out: &mut Output, prefix: &str, suite: &MetricSuite) -> Result<()> {
    let Variants {
        pixel,
        mean,
        block,
        patch,
    } = &suite.curves;
    for (name, curve) in [("pixel", pixel), ("mean", mean), ("block", block), ("patch", patch)] {
        if let Some(c) = curve {
            out.csv(
                &format!("curves/{prefix}sparsification_{name}.csv"),
                &["fraction", "method", "oracle"],
                &curve_rows(c),
            )?;
        }
    }
    Ok(())
}

fn write_evaluation(out: &mut Output, report: &EvaluationReport) -> Result<()> {
    out.json("evaluation.json", report)?;
    write_curves(out, "", &report.metrics)?;
    if let Some(oracle) = &report.oracle {
        write_curves(out, "oracle_", oracle)?;
    }
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let (inputs, spec) = evaluation_inputs(cfg)?;
    let labels = segment_all(&inputs, cfg)?;
    let report = evaluate_with_labels(&inputs, &labels, &cfg.metrics, spec.as_ref())?;
    write_evaluation(out, &report)
}

pub const SWEEP_HEADER: [&str; 16] = [
    "method",
    "location",
    "strength",
    "sample_count",
    "base_l1",
    "mean_c",
    "epsilon",
    "tolerable",
    "corr_pixel",
    "corr_mean",
    "corr_block",
    "corr_patch",
    "ause_pixel",
    "ause_mean",
    "ause_block",
    "ause_patch",
];

fn method_name(kind: MethodKind) -> String {
    serde_json::to_value(kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn cell(v: &MetricValue) -> String {
    v.value.map(|x| x.to_string()).unwrap_or_default()
}

fn sweep_grid(cfg: &RunConfig, model: &dyn GrayBoxModel) -> Result<Vec<PerturbationSpec>> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::config("no sweep grid configured"))?;
    let taps = sweep.taps.clone().unwrap_or_else(|| model.taps());
    let grid_err = |e: perturbvar::Error| CliError::config(format!("sweep grid: {e}"));
    let mut grid = Vec::new();
    for &sigma in &sweep.sigmas {
        for tap in &taps {
            grid.push(PerturbationSpec::noise(tap.as_str(), sigma, sweep.sample_count, cfg.seed).map_err(grid_err)?);
        }
    }
    for &rate in &sweep.rates {
        for tap in &taps {
            grid.push(
                PerturbationSpec::dropout(tap.as_str(), rate, sweep.rescale, sweep.sample_count, cfg.seed)
                    .map_err(grid_err)?,
            );
        }
    }
    // Rows grouped by method, then tap, then strength.
    let order = |s: &PerturbationSpec| {
        let tap = s.method().tap().unwrap_or_default();
        (
            s.method().kind() != MethodKind::GaussianNoise,
            taps.iter().position(|t| t == tap),
        )
    };
    grid.sort_by_key(|s| order(s));
    for spec in &grid {
        check_tap(model, spec)?;
    }
    Ok(grid)
}

fn cmd_sweep(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    require_inputs(cfg)?;
    require_ground_truth(cfg, cfg.inputs.len())?;
    let inputs = load_all(&cfg.inputs)?;
    let truth = load_all(&cfg.ground_truth)?;
    let model = build_model(cfg, &inputs)?;
    let grid = sweep_grid(cfg, model.as_ref())?;

    let predictions: Vec<ImageTensor> = inputs.par_iter().map(|x| model.forward(x)).collect::<perturbvar::Result<_>>()?;
    let labels: Vec<SegmentationLabels> = predictions
        .par_iter()
        .map(|p| lcm_segment(p, &cfg.metrics.segmentation))
        .collect::<perturbvar::Result<_>>()?;
    let mut base_l1 = 0.0;
    for (p, y) in predictions.iter().zip(&truth) {
        base_l1 += error_map(p, y, LossKind::L1)?.values.mean();
    }
    base_l1 /= predictions.len() as f64;
    let opts = metrics::MetricOptions {
        oracle: false,
        ..cfg.metrics.clone()
    };

    let rows = grid
        .par_iter()
        .map(|spec| {
            let eval: Vec<EvalInput> = inputs
                .iter()
                .zip(&predictions)
                .zip(&truth)
                .map(|((x, p), y)| {
                    Ok(EvalInput {
                        uncertainty: estimate::estimate(model.as_ref(), x, spec)?,
                        prediction: p.clone(),
                        ground_truth: y.clone(),
                    })
                })
                .collect::<perturbvar::Result<_>>()?;
            let r = evaluate_with_labels(&eval, &labels, &opts, Some(spec))?;
            let (c, a) = (&r.metrics.correlation, &r.metrics.ause);
            Ok(vec![
                method_name(spec.method().kind()),
                spec.method().tap().unwrap_or_default().to_string(),
                spec.method().strength().unwrap_or_default().to_string(),
                spec.sample_count().to_string(),
                base_l1.to_string(),
                r.tolerability.mean_c.to_string(),
                r.tolerability.epsilon.to_string(),
                r.tolerability.tolerable.to_string(),
                cell(&c.pixel),
                cell(&c.mean),
                cell(&c.block),
                cell(&c.patch),
                cell(&a.pixel),
                cell(&a.mean),
                cell(&a.block),
                cell(&a.patch),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    out.csv("sweep.csv", &SWEEP_HEADER, &rows)
}

#[derive(Serialize)]
struct BoundEntry {
    pixel: [usize; 3],
    variance: f64,
    c: f64,
    sample_count: usize,
    noisy: bool,
    gap_area: f64,
    csv: String,
}

#[derive(Serialize)]
struct BoundMeta<'a> {
    command: &'static str,
    model: &'a ModelConfig,
    seed: u64,
    spec: &'a PerturbationSpec,
    image: String,
    pixels: Vec<BoundEntry>,
}

fn bound_curves(cfg: &RunConfig, model: &dyn GrayBoxModel, spec: &PerturbationSpec) -> Result<Vec<(BoundEntry, BoundCurve)>> {
    let b = cfg
        .bound
        .as_ref()
        .ok_or_else(|| CliError::config("no bound section configured"))?;
    require_inputs(cfg)?;
    require_ground_truth(cfg, cfg.inputs.len())?;
    let (Some(input), Some(truth)) = (cfg.inputs.get(b.image), cfg.ground_truth.get(b.image)) else {
        return Err(CliError::config(format!("bound.image {} out of range", b.image)));
    };
    let x = load(input)?;
    let y = load(truth)?;
    let samples = estimate::sample(model, &x, spec)?;
    y.ensure_dims(samples.dims())?;
    if samples.len() < MIN_TAIL_SAMPLES {
        eprintln!(
            "warning: {} samples per pixel; empirical tails are noisy below {MIN_TAIL_SAMPLES}",
            samples.len()
        );
    }
    let t_grid = b.t_grid.values()?;
    b.pixels
        .iter()
        .map(|&[r, c, ch]| {
            let d = samples.dims();
            if r >= d.height || c >= d.width || ch >= d.channels {
                return Err(CliError::Core(perturbvar::Error::InvalidParameter {
                    name: "bound.pixels",
                    reason: format!("({r}, {c}, {ch}) outside {d}"),
                }));
            }
            let curve = bound_curve(&samples, y.get(r, c, ch), (r, c, ch), &t_grid)?;
            let entry = BoundEntry {
                pixel: [r, c, ch],
                variance: curve.variance,
                c: curve.c,
                sample_count: curve.sample_count,
                noisy: curve.noisy,
                gap_area: curve.gap_area(),
                csv: format!("bound/pixel_r{r}_c{c}_ch{ch}.csv"),
            };
            Ok((entry, curve))
        })
        .collect()
}

fn write_bound(out: &mut Output, curves: &[(BoundEntry, BoundCurve)]) -> Result<()> {
    for (entry, curve) in curves {
        let rows: Vec<Vec<String>> = curve
            .points
            .iter()
            .map(|p| {
                vec![
                    p.t.to_string(),
                    p.empirical.to_string(),
                    p.bound.map(|b| b.to_string()).unwrap_or_default(),
                    p.bound.is_some().to_string(),
                ]
            })
            .collect();
        out.csv(&entry.csv, &["t", "empirical", "bound", "valid"], &rows)?;
    }
    Ok(())
}

fn cmd_bound(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let spec = cfg.require_perturbation()?;
    let inputs = load_all(&cfg.inputs)?;
    let model = build_model(cfg, &inputs)?;
    check_tap(model.as_ref(), &spec)?;
    let curves = bound_curves(cfg, model.as_ref(), &spec)?;
    write_bound(out, &curves)?;
    let image = cfg.bound.as_ref().map_or(0, |b| b.image);
    out.json(
        "bound.json",
        &BoundMeta {
            command: "bound",
            model: cfg.model()?,
            seed: cfg.seed,
            spec: &spec,
            image: cfg.inputs[image].display().to_string(),
            pixels: curves.into_iter().map(|(e, _)| e).collect(),
        },
    )
}

#[derive(Serialize)]
struct ReportMeta<'a> {
    command: &'static str,
    model: &'a ModelConfig,
    seed: u64,
    spec: &'a PerturbationSpec,
    images: Vec<ImageEntry>,
    segments: Vec<String>,
    evaluation: &'a EvaluationReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    bound: Option<Vec<BoundEntry>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timings_ms: Option<Timings>,
}

/// Estimate, evaluate and (if configured) bound in one pass, with every
/// intermediate artifact written alongside `report.json`.
fn cmd_report(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    require_inputs(cfg)?;
    require_ground_truth(cfg, cfg.inputs.len())?;
    let spec = cfg.require_perturbation()?;
    let names = image_names(&cfg.inputs)?;
    let mut timings = Timings::default();
    let on = cfg.record_timings;
    let inputs = timings.time(on, "load", || load_all(&cfg.inputs))?;
    let truth = load_all(&cfg.ground_truth)?;
    let model = build_model(cfg, &inputs)?;
    check_tap(model.as_ref(), &spec)?;
    let est = timings.time(on, "estimate", || estimate_all(model.as_ref(), &inputs, &spec))?;
    let images = write_maps(out, &names, &cfg.inputs, &est)?;

    let eval: Vec<EvalInput> = est
        .into_iter()
        .zip(truth)
        .map(|(e, ground_truth)| EvalInput {
            uncertainty: e.map,
            prediction: e.prediction,
            ground_truth,
        })
        .collect();
    let labels = timings.time(on, "segment", || segment_all(&eval, cfg))?;
    let mut segments = Vec::with_capacity(labels.len());
    for (name, l) in names.iter().zip(&labels) {
        let rel = format!("segments/{name}.labels.ten1");
        out.ten1(&rel, &l.to_tensor())?;
        out.png(&format!("segments/{name}.labels.png"), &l.preview())?;
        segments.push(rel);
    }
    let report = timings.time(on, "evaluate", || {
        evaluate_with_labels(&eval, &labels, &cfg.metrics, Some(&spec))
    })?;
    write_evaluation(out, &report)?;

    let bound = match &cfg.bound {
        Some(_) => {
            let curves = timings.time(on, "bound", || bound_curves(cfg, model.as_ref(), &spec))?;
            write_bound(out, &curves)?;
            Some(curves.into_iter().map(|(e, _)| e).collect())
        }
        None => None,
    };
    out.json(
        "report.json",
        &ReportMeta {
            command: "report",
            model: cfg.model()?,
            seed: cfg.seed,
            spec: &spec,
            images,
            segments,
            evaluation: &report,
            bound,
            timings_ms: on.then_some(timings),
        },
    )
}
