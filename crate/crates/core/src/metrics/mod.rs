//! Error maps, correlation and sparsification metrics, NLL, and the
//! Chebyshev-style performance bound.

mod bound;
mod correlation;
mod evaluation;
mod nll;
mod sparsification;

pub use bound::{bound_curve, oracle_uncertainty, performance_bound, raw_bound, BoundCurve, BoundPoint, MIN_TAIL_SAMPLES, ORACLE_MARGIN_SIGMAS};
pub use correlation::{block_correlation, map_correlation, mean_correlation, patch_correlation, pearson, pixel_correlation};
pub use evaluation::{evaluate, evaluate_with_labels, EvalInput, EvaluationReport, MetricOptions, MetricSuite, MetricValue, Pooling, TolerabilitySummary, Variants};
pub use nll::{nll, nll_with_mean, DEFAULT_VARIANCE_FLOOR};
pub use sparsification::{ause, sparsification, sparsification_maps, SparsificationCurve, SparsificationGrid};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    L1,
    L2,
}

/// Per-pixel loss, averaged over channels (H×W×1).
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMap {
    pub values: ImageTensor,
    pub loss_kind: LossKind,
}

pub fn error_map(prediction: &ImageTensor, truth: &ImageTensor, kind: LossKind) -> Result<ErrorMap> {
    let per_element = prediction.zip_map(truth, |p, y| match kind {
        LossKind::L1 => (p - y).abs(),
        LossKind::L2 => (p - y) * (p - y),
    })?;
    Ok(ErrorMap {
        values: per_element.channel_mean(),
        loss_kind: kind,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    #[test]
    fn exact_prediction_has_zero_error() {
        let y = ImageTensor::from_fn(Dims::new(3, 4, 2), |r, c, ch| (r + c + ch) as f64).unwrap();
        let e = error_map(&y, &y, LossKind::L1).unwrap();
        assert!(e.values.data().iter().all(|&v| v == 0.0));
        assert_eq!(e.values.dims(), Dims::new(3, 4, 1));
    }

    #[test]
    fn half_offset_l2() {
        let y = ImageTensor::filled(Dims::new(2, 2, 1), 0.2).unwrap();
        let p = y.map(|v| v + 0.5).unwrap();
        let e = error_map(&p, &y, LossKind::L2).unwrap();
        assert!(e.values.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn matches_elementwise_loop() {
        let p = ImageTensor::from_fn(Dims::new(4, 3, 3), |r, c, ch| ((r * 31 + c * 17 + ch * 7) % 13) as f64 / 13.0).unwrap();
        let y = ImageTensor::from_fn(Dims::new(4, 3, 3), |r, c, ch| ((r * 11 + c * 5 + ch * 3) % 9) as f64 / 9.0).unwrap();
        for kind in [LossKind::L1, LossKind::L2] {
            let e = error_map(&p, &y, kind).unwrap();
            for r in 0..4 {
                for c in 0..3 {
                    let mut s = 0.0;
                    for ch in 0..3 {
                        let d = p.get(r, c, ch) - y.get(r, c, ch);
                        s += if kind == LossKind::L1 { d.abs() } else { d * d };
                    }
                    assert_eq!(e.values.get(r, c, 0), s / 3.0);
                }
            }
        }
    }

    #[test]
    fn dims_must_match() {
        let a = ImageTensor::zeros(Dims::new(2, 2, 1)).unwrap();
        let b = ImageTensor::zeros(Dims::new(2, 3, 1)).unwrap();
        assert!(error_map(&a, &b, LossKind::L1).is_err());
    }
}
