//! Sampling under a [`PerturbationSpec`] and reduction to mean/variance maps.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::{BlackBoxModel, GrayBoxModel};
use crate::perturb::{inject_dropout, inject_noise, perturb_input, Method, PerturbationSpec};
use crate::tensor::{Dims, ImageTensor};

/// Offset used only when exporting log-variance maps for display.
pub const LOG_VARIANCE_OFFSET: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SampleSet {
    samples: Vec<ImageTensor>,
    spec: PerturbationSpec,
}

impl SampleSet {
    pub fn new(samples: Vec<ImageTensor>, spec: PerturbationSpec) -> Result<Self> {
        check_samples(&samples)?;
        Ok(Self { samples, spec })
    }

    pub fn samples(&self) -> &[ImageTensor] {
        &self.samples
    }

    pub fn spec(&self) -> &PerturbationSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dims(&self) -> Dims {
        self.samples[0].dims()
    }

    /// Values of one element across all samples.
    pub fn pixel_values(&self, row: usize, col: usize, ch: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.get(row, col, ch)).collect()
    }
}

fn check_samples(samples: &[ImageTensor]) -> Result<()> {
    if samples.len() < 2 {
        return Err(Error::invalid(
            "samples",
            format!("need at least 2 samples, got {}", samples.len()),
        ));
    }
    let dims = samples[0].dims();
    samples.iter().try_for_each(|s| s.ensure_dims(dims))
}

/// Per-pixel population variance (denominator N) and mean over a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    pub variance: ImageTensor,
    pub mean: ImageTensor,
    pub sample_count: usize,
}

impl UncertaintyMap {
    /// `ln(V + 1e-12)`, for visualization only.
    pub fn log_variance(&self) -> ImageTensor {
        self.variance
            .map(|v| (v + LOG_VARIANCE_OFFSET).ln())
            .expect("variance is finite and non-negative")
    }
}

pub fn sample_blackbox(model: &dyn BlackBoxModel, x: &ImageTensor, spec: &PerturbationSpec) -> Result<SampleSet> {
    let Method::TransformSet { transforms } = spec.method() else {
        return Err(Error::invalid("method", "black-box sampling needs the transform_set method"));
    };
    let samples = transforms
        .par_iter()
        .map(|&t| perturb_input(x, t, model))
        .collect::<Result<Vec<_>>>()?;
    SampleSet::new(samples, spec.clone())
}

/// Runs `F1` once, then `N` perturbed passes through `F2`. Sample `i` draws
/// from stream `(master_seed, i)`, so results do not depend on scheduling.
pub fn sample_graybox<M>(model: &M, x: &ImageTensor, spec: &PerturbationSpec) -> Result<SampleSet>
where
    M: GrayBoxModel + ?Sized,
{
    let tap = spec
        .method()
        .tap()
        .ok_or_else(|| Error::invalid("method", "gray-box sampling needs gaussian_noise or dropout"))?;
    let activations = model.forward_to_tap(x, tap)?;
    let samples = (0..spec.sample_count())
        .into_par_iter()
        .map(|i| {
            let stream = spec.stream(i);
            let perturbed = match spec.method() {
                Method::GaussianNoise { sigma, .. } => inject_noise(&activations, *sigma, stream)?,
                Method::Dropout { rate, rescale, .. } => inject_dropout(&activations, *rate, stream, *rescale)?,
                Method::TransformSet { .. } => unreachable!("no tap"),
            };
            model.forward_from_tap(&perturbed, tap)
        })
        .collect::<Result<Vec<_>>>()?;
    SampleSet::new(samples, spec.clone())
}

/// Dispatches on the spec's method.
pub fn sample<M>(model: &M, x: &ImageTensor, spec: &PerturbationSpec) -> Result<SampleSet>
where
    M: GrayBoxModel + ?Sized,
{
    match spec.method() {
        Method::TransformSet { .. } => sample_blackbox(model.as_black_box(), x, spec),
        _ => sample_graybox(model, x, spec),
    }
}

pub fn variance_map(set: &SampleSet) -> Result<UncertaintyMap> {
    variance_of(set.samples())
}

/// Welford accumulation in f64, one pass over the samples.
pub fn variance_of(samples: &[ImageTensor]) -> Result<UncertaintyMap> {
    check_samples(samples)?;
    let dims = samples[0].dims();
    let mut mean = vec![0.0; dims.len()];
    let mut m2 = vec![0.0; dims.len()];
    for (k, s) in samples.iter().enumerate() {
        let n = (k + 1) as f64;
        for ((m, q), &x) in mean.iter_mut().zip(m2.iter_mut()).zip(s.data()) {
            let delta = x - *m;
            *m += delta / n;
            *q += delta * (x - *m);
        }
    }
    let n = samples.len() as f64;
    // Rounding can leave -0.0 or tiny negatives when all samples agree.
    let variance = m2.into_iter().map(|q| (q / n).max(0.0)).collect();
    Ok(UncertaintyMap {
        variance: ImageTensor::new(dims, variance)?,
        mean: ImageTensor::new(dims, mean)?,
        sample_count: samples.len(),
    })
}

/// Sample, then reduce.
pub fn estimate<M>(model: &M, x: &ImageTensor, spec: &PerturbationSpec) -> Result<UncertaintyMap>
where
    M: GrayBoxModel + ?Sized,
{
    variance_map(&sample(model, x, spec)?)
}
