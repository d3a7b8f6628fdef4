//! Chebyshev-style performance bound `P(|Z - Y| >= t) <= V[Z] / (t - C)^2`,
//! valid for margins `t > C` where `C = |E[Z] - Y|`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimate::{SampleSet, UncertaintyMap};
use crate::tensor::ImageTensor;

/// Margin, in units of the image-average standard deviation, used for the
/// oracle uncertainty map.
pub const ORACLE_MARGIN_SIGMAS: f64 = 5.0;

/// Sample counts below this give visibly noisy empirical tails.
pub const MIN_TAIL_SAMPLES: usize = 1000;

/// Unclamped `variance / (t - c)^2`.
pub fn raw_bound(variance: f64, c: f64, t: f64) -> Result<f64> {
    if !(variance >= 0.0) || !(c >= 0.0) {
        return Err(Error::invalid("bound", format!("need variance >= 0 and C >= 0, got {variance}, {c}")));
    }
    if !(t > c) {
        return Err(Error::BoundInvalid { t, c });
    }
    Ok(variance / ((t - c) * (t - c)))
}

/// The bound clamped to [0, 1]; a probability bound above one says nothing.
pub fn performance_bound(variance: f64, c: f64, t: f64) -> Result<f64> {
    Ok(raw_bound(variance, c, t)?.min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundPoint {
    pub t: f64,
    pub empirical: f64,
    /// `None` where `t <= C`.
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCurve {
    pub points: Vec<BoundPoint>,
    pub variance: f64,
    pub c: f64,
    pub sample_count: usize,
    /// Fewer than [`MIN_TAIL_SAMPLES`] samples.
    pub noisy: bool,
}

impl BoundCurve {
    /// Trapezoidal area between the bound and the empirical tail. The bound is
    /// capped at 1 and counts as 1 where it is invalid, so the area stays
    /// finite near `t = C`.
    pub fn gap_area(&self) -> f64 {
        let gap = |p: &BoundPoint| p.bound.map_or(1.0, |b| b.min(1.0)) - p.empirical;
        self.points
            .windows(2)
            .map(|w| 0.5 * (w[1].t - w[0].t) * (gap(&w[0]) + gap(&w[1])))
            .sum()
    }
}

/// Empirical `P(|Z - y| >= t)` for one element of `samples`, alongside the
/// unclamped bound from that element's population variance and `C`.
pub fn bound_curve(samples: &SampleSet, y: f64, pixel: (usize, usize, usize), t_grid: &[f64]) -> Result<BoundCurve> {
    let d = samples.dims();
    let (row, col, ch) = pixel;
    if row >= d.height || col >= d.width || ch >= d.channels {
        return Err(Error::invalid("pixel", format!("({row}, {col}, {ch}) outside {d}")));
    }
    let z = samples.pixel_values(row, col, ch);
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let variance = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let c = (mean - y).abs();
    let points = t_grid
        .iter()
        .map(|&t| {
            let hits = z.iter().filter(|&&v| (v - y).abs() >= t).count();
            BoundPoint {
                t,
                empirical: hits as f64 / n,
                bound: raw_bound(variance, c, t).ok(),
            }
        })
        .collect();
    Ok(BoundCurve {
        points,
        variance,
        c,
        sample_count: z.len(),
        noisy: z.len() < MIN_TAIL_SAMPLES,
    })
}

/// Per-element `V / (t - C)^2` with `t = 5 sigma`, `sigma^2` the mean of `V`
/// over the image. Elements with `t <= C` get the clamp value 1.
pub fn oracle_uncertainty(u: &UncertaintyMap, c_map: &ImageTensor) -> Result<ImageTensor> {
    c_map.ensure_dims(u.variance.dims())?;
    let t = ORACLE_MARGIN_SIGMAS * u.variance.mean().sqrt();
    u.variance
        .zip_map(c_map, |v, c| if t > c { (v / ((t - c) * (t - c))).min(1.0) } else { 1.0 })
}
