use crate::error::{Error, Result, Undefined};
use crate::estimate::UncertaintyMap;
use crate::segment::{region_means, SegmentationLabels};
use crate::tensor::ImageTensor;

use super::ErrorMap;

/// Pearson product-moment correlation. Constant inputs have no correlation
/// and yield [`Error::Undefined`] rather than zero.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::invalid(
            "pearson",
            format!("length mismatch: {} vs {}", xs.len(), ys.len()),
        ));
    }
    let undefined = |reason| Error::Undefined {
        metric: "correlation",
        reason,
    };
    if xs.len() < 2 {
        return Err(undefined(Undefined::TooFewValues));
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(xs) || constant(ys) {
        return Err(undefined(Undefined::ConstantInput));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(undefined(Undefined::ConstantInput));
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    if !r.is_finite() {
        return Err(undefined(Undefined::ConstantInput));
    }
    Ok(r.clamp(-1.0, 1.0))
}

/// Correlation between two single-channel maps of equal dims.
pub fn map_correlation(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    b.ensure_dims(a.dims())?;
    pearson(a.data(), b.data())
}

pub fn pixel_correlation(u: &UncertaintyMap, e: &ErrorMap) -> Result<f64> {
    map_correlation(&u.variance.channel_mean(), &e.values)
}

/// Correlation of per-image `(mean variance, mean error)` pairs.
pub fn mean_correlation(pairs: &[(f64, f64)]) -> Result<f64> {
    let (v, l): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    pearson(&v, &l)
}

/// Pixel-wise correlation after replacing both maps by their cluster means.
pub fn block_correlation(u: &UncertaintyMap, e: &ErrorMap, labels: &SegmentationLabels) -> Result<f64> {
    let v = region_means(&u.variance.channel_mean(), labels)?;
    let l = region_means(&e.values, labels)?;
    map_correlation(&v, &l)
}

/// Block correlation with a `rows`×`cols` grid of rectangular patches.
pub fn patch_correlation(u: &UncertaintyMap, e: &ErrorMap, grid: (usize, usize)) -> Result<f64> {
    let d = e.values.dims();
    let labels = SegmentationLabels::patches(d.height, d.width, grid.0, grid.1)?;
    block_correlation(u, e, &labels)
}
