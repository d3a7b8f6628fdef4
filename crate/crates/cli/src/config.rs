//! The run configuration: one JSON document, optionally patched by
//! `--set key=value` overrides and the `--seed/--out/--threads` flags.

use std::fs;
use std::path::{Path, PathBuf};

use perturbvar::metrics::MetricOptions;
use perturbvar::models::{self, AnalyticLinearModel};
use perturbvar::{GrayBoxModel, PerturbationSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    ToyUpsampler {
        #[serde(default)]
        seed: u64,
    },
    /// `y = post_gain * (pre_gain * x + pre_bias) + post_bias`, tap `mid`.
    AnalyticLinear {
        #[serde(default = "one")]
        pre_gain: f64,
        #[serde(default)]
        pre_bias: f64,
        #[serde(default = "one")]
        post_gain: f64,
        #[serde(default)]
        post_bias: f64,
    },
    NearestUpsampler,
}

fn one() -> f64 {
    1.0
}

impl ModelConfig {
    pub fn build(&self, channels: usize) -> Box<dyn GrayBoxModel> {
        match *self {
            ModelConfig::ToyUpsampler { seed } => Box::new(models::toy_upsampler(seed, channels)),
            ModelConfig::AnalyticLinear {
                pre_gain,
                pre_bias,
                post_gain,
                post_bias,
            } => Box::new(AnalyticLinearModel::new(channels, pre_gain, pre_bias, post_gain, post_bias)),
            ModelConfig::NearestUpsampler => Box::new(models::nearest_upsampler(channels)),
        }
    }
}

/// Grid for the `sweep` command. Noise rows are emitted for every entry of
/// `sigmas`, dropout rows for every entry of `rates`, at each tap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Defaults to every tap of the model.
    #[serde(default)]
    pub taps: Option<Vec<String>>,
    #[serde(default)]
    pub sigmas: Vec<f64>,
    #[serde(default)]
    pub rates: Vec<f64>,
    #[serde(default = "default_sweep_samples")]
    pub sample_count: usize,
    #[serde(default = "yes")]
    pub rescale: bool,
}

fn default_sweep_samples() -> usize {
    16
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TGrid {
    Values(Vec<f64>),
    Range { start: f64, stop: f64, count: usize },
}

impl Default for TGrid {
    fn default() -> Self {
        TGrid::Range {
            start: 0.01,
            stop: 0.5,
            count: 50,
        }
    }
}

impl TGrid {
    pub fn values(&self) -> Result<Vec<f64>> {
        let v = match *self {
            TGrid::Values(ref v) => v.clone(),
            TGrid::Range { start, stop, count } => {
                if count < 2 || !(stop > start) {
                    return Err(CliError::config("bound.t_grid range needs count >= 2 and stop > start"));
                }
                (0..count)
                    .map(|i| start + (stop - start) * i as f64 / (count - 1) as f64)
                    .collect()
            }
        };
        if v.is_empty() || v.iter().any(|t| !t.is_finite()) {
            return Err(CliError::config("bound.t_grid must be non-empty and finite"));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig {
    /// Index into `inputs` / `ground_truth`.
    #[serde(default)]
    pub image: usize,
    /// `[row, col, channel]` in output coordinates.
    pub pixels: Vec<[usize; 3]>,
    #[serde(default)]
    pub t_grid: TGrid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub inputs: Vec<PathBuf>,
    #[serde(default)]
    pub ground_truth: Vec<PathBuf>,
    /// Precomputed variance maps for `evaluate`.
    #[serde(default)]
    pub uncertainty: Vec<PathBuf>,
    /// Unperturbed model outputs matching `uncertainty`.
    #[serde(default)]
    pub prediction: Vec<PathBuf>,
    /// Perturbed means matching `uncertainty`; defaults to `prediction`.
    #[serde(default)]
    pub mean: Vec<PathBuf>,
    /// A perturbation spec without `master_seed`; the run seed is used.
    #[serde(default)]
    pub perturbation: Option<Value>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub metrics: MetricOptions,
    #[serde(default)]
    pub bound: Option<BoundConfig>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
    /// Wall-clock timings make outputs differ between runs, so they are off
    /// by default.
    #[serde(default)]
    pub record_timings: bool,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub set: Vec<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

impl RunConfig {
    /// Reads, patches and validates a config. Relative paths inside the file
    /// resolve against the file's directory; `--out` resolves against the
    /// working directory.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut doc: Value =
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        for kv in &overrides.set {
            apply_set(&mut doc, kv)?;
        }
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_value(doc, base, overrides)
    }

    pub fn from_value(doc: Value, base: &Path, overrides: &Overrides) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_value(doc).map_err(|e| CliError::config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for list in [
            &mut cfg.inputs,
            &mut cfg.ground_truth,
            &mut cfg.uncertainty,
            &mut cfg.prediction,
            &mut cfg.mean,
        ] {
            list.iter_mut().for_each(resolve);
        }
        resolve(&mut cfg.output_dir);
        if let Some(out) = &overrides.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if overrides.threads.is_some() {
            cfg.threads = overrides.threads;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        for p in self
            .inputs
            .iter()
            .chain(&self.ground_truth)
            .chain(&self.uncertainty)
            .chain(&self.prediction)
            .chain(&self.mean)
        {
            if !p.is_file() {
                return Err(CliError::config(format!("{} does not exist", p.display())));
            }
        }
        if self.threads == Some(0) {
            return Err(CliError::config("threads must be at least 1"));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.sigmas.is_empty() && sweep.rates.is_empty() {
                return Err(CliError::config("sweep grid is empty: give sigmas and/or rates"));
            }
            if sweep.taps.as_ref().is_some_and(|t| t.is_empty()) {
                return Err(CliError::config("sweep.taps is empty"));
            }
        }
        if let Some(bound) = &self.bound {
            if bound.pixels.is_empty() {
                return Err(CliError::config("bound.pixels is empty"));
            }
            bound.t_grid.values()?;
        }
        self.perturbation()?;
        Ok(())
    }

    pub fn model(&self) -> Result<&ModelConfig> {
        self.model.as_ref().ok_or_else(|| CliError::config("no model configured"))
    }

    /// The configured spec with the run seed as its master seed.
    pub fn perturbation(&self) -> Result<Option<PerturbationSpec>> {
        let Some(doc) = &self.perturbation else {
            return Ok(None);
        };
        let mut doc = doc.clone();
        let obj = doc
            .as_object_mut()
            .ok_or_else(|| CliError::config("perturbation must be an object"))?;
        if obj.contains_key("master_seed") {
            return Err(CliError::config(
                "perturbation.master_seed is not allowed; set the top-level seed",
            ));
        }
        obj.insert("master_seed".into(), Value::from(self.seed));
        serde_json::from_value(doc)
            .map(Some)
            .map_err(|e| CliError::config(format!("perturbation: {e}")))
    }

    pub fn require_perturbation(&self) -> Result<PerturbationSpec> {
        self.perturbation()?
            .ok_or_else(|| CliError::config("no perturbation configured"))
    }
}

/// Applies one `a.b.0.c=value` override. The value is parsed as JSON and
/// falls back to a plain string; missing objects along the path are created.
pub fn apply_set(doc: &mut Value, kv: &str) -> Result<()> {
    let (key, raw) = kv
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("--set expects key=value, got `{kv}`")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::config(format!("--set: bad key `{key}`")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| CliError::config(format!("--set {key}: `{part}` is not an array index")))?;
                items
                    .get_mut(idx)
                    .ok_or_else(|| CliError::config(format!("--set {key}: index {idx} out of range")))?
            }
            Value::Object(map) => map.entry(part.to_string()).or_insert(Value::Null),
            other => {
                if !other.is_null() {
                    return Err(CliError::config(format!("--set {key}: `{part}` is not inside an object")));
                }
                *other = Value::Object(Default::default());
                other.as_object_mut().unwrap().entry(part.to_string()).or_insert(Value::Null)
            }
        };
        if last {
            *node = value;
            return Ok(());
        }
    }
    unreachable!("key has at least one part")
}
