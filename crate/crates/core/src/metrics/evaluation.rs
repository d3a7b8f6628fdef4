//! Dataset-level evaluation: the four correlation and four AUSE variants,
//! NLL and tolerability, gathered into one report.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Undefined};
use crate::estimate::UncertaintyMap;
use crate::perturb::{tolerability, PerturbationSpec};
use crate::segment::{lcm_segment, region_means, LcmParams, SegmentationLabels};
use crate::tensor::ImageTensor;

use super::bound::oracle_uncertainty;
use super::correlation::{map_correlation, mean_correlation, pearson};
use super::nll::{nll_with_mean, DEFAULT_VARIANCE_FLOOR};
use super::sparsification::{ause, sparsification, SparsificationCurve, SparsificationGrid};
use super::{error_map, LossKind};

/// How pixel-level metrics combine across images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Compute per image, then average the defined values.
    #[default]
    PerImage,
    /// Concatenate all pixels of all images into one population.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricOptions {
    pub loss: LossKind,
    pub pooling: Pooling,
    pub sparsification: SparsificationGrid,
    pub nll_floor: f64,
    pub segmentation: LcmParams,
    pub patch_grid: (usize, usize),
    /// Tolerability threshold; `None` uses 1.5× the unperturbed mean L1 error.
    pub epsilon: Option<f64>,
    /// Also score the performance-bound oracle map.
    pub oracle: bool,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            loss: LossKind::L1,
            pooling: Pooling::PerImage,
            sparsification: SparsificationGrid::default(),
            nll_floor: DEFAULT_VARIANCE_FLOOR,
            segmentation: LcmParams::default(),
            patch_grid: (10, 10),
            epsilon: None,
            oracle: true,
        }
    }
}

/// A metric value, or the reason it does not exist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricValue {
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub undefined: Option<Undefined>,
}

impl MetricValue {
    pub fn defined(value: f64) -> Self {
        Self {
            value: Some(value),
            undefined: None,
        }
    }

    pub fn undefined(reason: Undefined) -> Self {
        Self {
            value: None,
            undefined: Some(reason),
        }
    }

    fn from_result(r: Result<f64>) -> Result<Self> {
        match r {
            Ok(v) => Ok(Self::defined(v)),
            Err(Error::Undefined { reason, .. }) => Ok(Self::undefined(reason)),
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Variants<T> {
    pub pixel: T,
    pub mean: T,
    pub block: T,
    pub patch: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSuite {
    pub correlation: Variants<MetricValue>,
    pub ause: Variants<MetricValue>,
    #[serde(skip)]
    pub curves: Variants<Option<SparsificationCurve>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TolerabilitySummary {
    pub mean_c: f64,
    pub epsilon: f64,
    pub tolerable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub image_count: usize,
    pub loss: LossKind,
    pub pooling: Pooling,
    #[serde(flatten)]
    pub metrics: MetricSuite,
    pub nll: MetricValue,
    pub tolerability: TolerabilitySummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<MetricSuite>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spec: Option<PerturbationSpec>,
    pub options: MetricOptions,
}

/// One image's worth of evaluation inputs. `prediction` is the unperturbed
/// model output; errors are measured against it, while NLL and tolerability
/// use the perturbed mean carried in `uncertainty`.
#[derive(Debug, Clone)]
pub struct EvalInput {
    pub uncertainty: UncertaintyMap,
    pub prediction: ImageTensor,
    pub ground_truth: ImageTensor,
}

struct Prepared {
    variance: ImageTensor,
    error: ImageTensor,
    labels: SegmentationLabels,
    patches: SegmentationLabels,
}

pub fn evaluate(inputs: &[EvalInput], opts: &MetricOptions, spec: Option<&PerturbationSpec>) -> Result<EvaluationReport> {
    let labels = inputs
        .iter()
        .map(|input| lcm_segment(&input.prediction, &opts.segmentation))
        .collect::<Result<Vec<_>>>()?;
    evaluate_with_labels(inputs, &labels, opts, spec)
}

/// [`evaluate`] with the block-wise segmentation of each prediction supplied
/// by the caller, e.g. when many perturbations share one set of predictions.
pub fn evaluate_with_labels(
    inputs: &[EvalInput],
    labels: &[SegmentationLabels],
    opts: &MetricOptions,
    spec: Option<&PerturbationSpec>,
) -> Result<EvaluationReport> {
    if inputs.is_empty() {
        return Err(Error::invalid("inputs", "no images to evaluate"));
    }
    if labels.len() != inputs.len() {
        return Err(Error::invalid(
            "labels",
            format!("{} segmentations for {} images", labels.len(), inputs.len()),
        ));
    }
    let mut prepared = Vec::with_capacity(inputs.len());
    let mut oracle_maps = Vec::new();
    let (mut nll_sum, mut nll_count) = (0.0, 0usize);
    let (mut c_sum, mut base_l1_sum) = (0.0, 0.0);
    for (input, labels) in inputs.iter().zip(labels) {
        let dims = input.prediction.dims();
        input.ground_truth.ensure_dims(dims)?;
        input.uncertainty.variance.ensure_dims(dims)?;
        input.uncertainty.mean.ensure_dims(dims)?;

        let error = error_map(&input.prediction, &input.ground_truth, opts.loss)?.values;
        if (labels.height(), labels.width()) != (dims.height, dims.width) {
            return Err(Error::invalid(
                "labels",
                format!("{}x{} segmentation for a {dims} image", labels.height(), labels.width()),
            ));
        }
        let patches = SegmentationLabels::patches(dims.height, dims.width, opts.patch_grid.0, opts.patch_grid.1)?;

        let n = dims.len();
        nll_sum += n as f64
            * nll_with_mean(
                &input.uncertainty.mean,
                &input.uncertainty.variance,
                &input.ground_truth,
                opts.nll_floor,
            )?;
        nll_count += n;

        let tol = tolerability(&input.uncertainty.mean, &input.ground_truth, 0.0)?;
        c_sum += tol.mean_c;
        base_l1_sum += error_map(&input.prediction, &input.ground_truth, LossKind::L1)?
            .values
            .mean();
        if opts.oracle {
            oracle_maps.push(oracle_uncertainty(&input.uncertainty, &tol.pixel_c)?.channel_mean());
        }

        prepared.push(Prepared {
            variance: input.uncertainty.variance.channel_mean(),
            error,
            labels: labels.clone(),
            patches,
        });
    }
    let count = inputs.len() as f64;
    let mean_c = c_sum / count;
    let epsilon = opts.epsilon.unwrap_or(1.5 * base_l1_sum / count);

    let metrics = suite(&prepared, |p| &p.variance, opts)?;
    let oracle = if opts.oracle {
        let with_oracle: Vec<Prepared> = prepared
            .iter()
            .zip(oracle_maps)
            .map(|(p, o)| Prepared {
                variance: o,
                error: p.error.clone(),
                labels: p.labels.clone(),
                patches: p.patches.clone(),
            })
            .collect();
        Some(suite(&with_oracle, |p| &p.variance, opts)?)
    } else {
        None
    };

    Ok(EvaluationReport {
        image_count: inputs.len(),
        loss: opts.loss,
        pooling: opts.pooling,
        metrics,
        nll: MetricValue::defined(nll_sum / nll_count as f64),
        tolerability: TolerabilitySummary {
            mean_c,
            epsilon,
            tolerable: mean_c <= epsilon,
        },
        oracle,
        spec: spec.cloned(),
        options: opts.clone(),
    })
}

fn suite(images: &[Prepared], uncertainty: impl Fn(&Prepared) -> &ImageTensor, opts: &MetricOptions) -> Result<MetricSuite> {
    // Region-replaced maps for each variant.
    let mut pixel = Vec::with_capacity(images.len());
    let mut block = Vec::with_capacity(images.len());
    let mut patch = Vec::with_capacity(images.len());
    for p in images {
        let u = uncertainty(p);
        pixel.push((u.clone(), p.error.clone()));
        block.push((region_means(u, &p.labels)?, region_means(&p.error, &p.labels)?));
        patch.push((region_means(u, &p.patches)?, region_means(&p.error, &p.patches)?));
    }
    let means: Vec<(f64, f64)> = images.iter().map(|p| (uncertainty(p).mean(), p.error.mean())).collect();

    let grid = &opts.sparsification;
    let (corr_pixel, ause_pixel, curve_pixel) = pooled_or_per_image(&pixel, opts.pooling, grid)?;
    let (corr_block, ause_block, curve_block) = pooled_or_per_image(&block, opts.pooling, grid)?;
    let (corr_patch, ause_patch, curve_patch) = pooled_or_per_image(&patch, opts.pooling, grid)?;

    let corr_mean = MetricValue::from_result(mean_correlation(&means))?;
    let (v, l): (Vec<f64>, Vec<f64>) = means.into_iter().unzip();
    let (ause_mean, curve_mean) = match sparsification(&v, &l, grid) {
        Ok(c) => (MetricValue::defined(ause(&c)), Some(c)),
        Err(Error::Undefined { reason, .. }) => (MetricValue::undefined(reason), None),
        Err(e) => return Err(e),
    };

    Ok(MetricSuite {
        correlation: Variants {
            pixel: corr_pixel,
            mean: corr_mean,
            block: corr_block,
            patch: corr_patch,
        },
        ause: Variants {
            pixel: ause_pixel,
            mean: ause_mean,
            block: ause_block,
            patch: ause_patch,
        },
        curves: Variants {
            pixel: curve_pixel,
            mean: curve_mean,
            block: curve_block,
            patch: curve_patch,
        },
    })
}

type Scored = (MetricValue, MetricValue, Option<SparsificationCurve>);

fn pooled_or_per_image(maps: &[(ImageTensor, ImageTensor)], pooling: Pooling, grid: &SparsificationGrid) -> Result<Scored> {
    match pooling {
        Pooling::Pooled => {
            let u: Vec<f64> = maps.iter().flat_map(|(u, _)| u.data().iter().copied()).collect();
            let e: Vec<f64> = maps.iter().flat_map(|(_, e)| e.data().iter().copied()).collect();
            let corr = MetricValue::from_result(pearson(&u, &e))?;
            match sparsification(&u, &e, grid) {
                Ok(c) => Ok((corr, MetricValue::defined(ause(&c)), Some(c))),
                Err(Error::Undefined { reason, .. }) => Ok((corr, MetricValue::undefined(reason), None)),
                Err(e) => Err(e),
            }
        }
        Pooling::PerImage => {
            let mut corrs = Vec::new();
            let mut curves = Vec::new();
            let (mut corr_reason, mut ause_reason) = (None, None);
            for (u, e) in maps {
                match map_correlation(u, e) {
                    Ok(r) => corrs.push(r),
                    Err(Error::Undefined { reason, .. }) => {
                        corr_reason.get_or_insert(reason);
                    }
                    Err(err) => return Err(err),
                }
                match sparsification(u.data(), e.data(), grid) {
                    Ok(c) => curves.push(c),
                    Err(Error::Undefined { reason, .. }) => {
                        ause_reason.get_or_insert(reason);
                    }
                    Err(err) => return Err(err),
                }
            }
            let corr = average(&corrs, corr_reason);
            // AUSE is linear in the curve, so the AUSE of the averaged curve
            // equals the average of per-image AUSE values.
            let curve = SparsificationCurve::average(&curves);
            let ause_value = match &curve {
                Some(c) => MetricValue::defined(ause(c)),
                None => MetricValue::undefined(ause_reason.unwrap_or(Undefined::TooFewValues)),
            };
            Ok((corr, ause_value, curve))
        }
    }
}

fn average(values: &[f64], reason: Option<Undefined>) -> MetricValue {
    if values.is_empty() {
        MetricValue::undefined(reason.unwrap_or(Undefined::TooFewValues))
    } else {
        MetricValue::defined(values.iter().sum::<f64>() / values.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    fn image(h: usize, w: usize, salt: usize) -> ImageTensor {
        ImageTensor::from_fn(Dims::new(h, w, 1), |r, c, _| ((r * 7 + c * 13 + salt * 5) % 17) as f64 / 17.0).unwrap()
    }

    /// Uncertainty equal to the L1 error of the prediction.
    fn self_consistent(salt: usize) -> EvalInput {
        let y = image(12, 12, salt);
        let pred = image(12, 12, salt + 3);
        let err = pred.zip_map(&y, |p, t| (p - t).abs()).unwrap();
        EvalInput {
            uncertainty: UncertaintyMap {
                variance: err,
                mean: pred.clone(),
                sample_count: 8,
            },
            prediction: pred,
            ground_truth: y,
        }
    }

    #[test]
    fn uncertainty_equal_to_error_is_perfect() {
        let inputs: Vec<_> = (0..3).map(self_consistent).collect();
        for pooling in [Pooling::PerImage, Pooling::Pooled] {
            let opts = MetricOptions {
                pooling,
                oracle: false,
                ..MetricOptions::default()
            };
            let r = evaluate(&inputs, &opts, None).unwrap();
            for v in [r.metrics.correlation.pixel, r.metrics.correlation.mean, r.metrics.correlation.block, r.metrics.correlation.patch] {
                assert!((v.value.unwrap() - 1.0).abs() < 1e-12, "{pooling:?} {v:?}");
            }
            for v in [r.metrics.ause.pixel, r.metrics.ause.mean, r.metrics.ause.block, r.metrics.ause.patch] {
                assert!(v.value.unwrap().abs() < 1e-12, "{pooling:?} {v:?}");
            }
        }
    }

    #[test]
    fn single_image_flags_mean_variants() {
        let r = evaluate(&[self_consistent(0)], &MetricOptions::default(), None).unwrap();
        assert_eq!(r.metrics.correlation.mean.value, None);
        assert_eq!(r.metrics.correlation.mean.undefined, Some(Undefined::TooFewValues));
        assert_eq!(r.metrics.ause.mean.value, None);
        assert!(r.metrics.correlation.pixel.value.is_some());
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["correlation"]["mean"]["value"].is_null());
        assert_eq!(json["correlation"]["mean"]["undefined"], "too_few_values");
    }

    #[test]
    fn zero_variance_flags_correlations() {
        let mut input = self_consistent(1);
        input.uncertainty.variance = ImageTensor::zeros(input.prediction.dims()).unwrap();
        let r = evaluate(&[input], &MetricOptions::default(), None).unwrap();
        assert_eq!(r.metrics.correlation.pixel.undefined, Some(Undefined::ConstantInput));
        assert!(r.nll.value.unwrap().is_finite());
    }

    #[test]
    fn pixel_metric_matches_direct_calls() {
        let inputs: Vec<_> = (0..2)
            .map(|s| {
                let mut i = self_consistent(s);
                i.uncertainty.variance = image(12, 12, s + 9);
                i
            })
            .collect();
        let opts = MetricOptions::default();
        let r = evaluate(&inputs, &opts, None).unwrap();
        let direct: f64 = inputs
            .iter()
            .map(|i| {
                let e = error_map(&i.prediction, &i.ground_truth, LossKind::L1).unwrap();
                map_correlation(&i.uncertainty.variance, &e.values).unwrap()
            })
            .sum::<f64>()
            / 2.0;
        assert!((r.metrics.correlation.pixel.value.unwrap() - direct).abs() < 1e-15);
    }
}
