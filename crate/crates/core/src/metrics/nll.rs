use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::estimate::UncertaintyMap;
use crate::tensor::ImageTensor;

/// Training-free variance can be exactly zero, so every variance is floored.
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-6;

/// Gaussian negative log-likelihood of `y` under `N(mean, max(V, floor))`,
/// averaged over every element.
pub fn nll(u: &UncertaintyMap, y: &ImageTensor, variance_floor: f64) -> Result<f64> {
    nll_with_mean(&u.mean, &u.variance, y, variance_floor)
}

pub fn nll_with_mean(mean: &ImageTensor, variance: &ImageTensor, y: &ImageTensor, variance_floor: f64) -> Result<f64> {
    if !(variance_floor > 0.0) || !variance_floor.is_finite() {
        return Err(Error::invalid("variance_floor", format!("must be positive, got {variance_floor}")));
    }
    variance.ensure_dims(mean.dims())?;
    y.ensure_dims(mean.dims())?;
    let total: f64 = mean
        .data()
        .iter()
        .zip(variance.data())
        .zip(y.data())
        .map(|((&mu, &v), &t)| {
            let s2 = v.max(variance_floor);
            0.5 * (2.0 * PI * s2).ln() + (t - mu).powi(2) / (2.0 * s2)
        })
        .sum();
    Ok(total / mean.data().len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    fn map(mean: &ImageTensor, var: f64) -> UncertaintyMap {
        UncertaintyMap {
            mean: mean.clone(),
            variance: ImageTensor::filled(mean.dims(), var).unwrap(),
            sample_count: 8,
        }
    }

    #[test]
    fn closed_forms() {
        let y = ImageTensor::from_fn(Dims::new(3, 3, 1), |r, c, _| (r * 3 + c) as f64 / 9.0).unwrap();
        let v = nll(&map(&y, 1.0 / (2.0 * PI)), &y, DEFAULT_VARIANCE_FLOOR).unwrap();
        assert!(v.abs() < 1e-12, "{v}");
        let v = nll(&map(&y, 1.0), &y, DEFAULT_VARIANCE_FLOOR).unwrap();
        assert!((v - 0.5 * (2.0 * PI).ln()).abs() < 1e-12);
        assert!((0.5 * (2.0 * PI).ln() - 0.918_938_533_204_672_7).abs() < 1e-15);
    }

    #[test]
    fn zero_variance_is_floored() {
        let y = ImageTensor::filled(Dims::new(2, 2, 1), 0.5).unwrap();
        let mu = y.map(|v| v + 0.1).unwrap();
        let v = nll(&map(&mu, 0.0), &y, 1e-6).unwrap();
        assert!(v.is_finite());
        let want = 0.5 * (2.0 * PI * 1e-6).ln() + 0.01 / 2e-6;
        assert!((v - want).abs() < 1e-6 * want.abs());
        assert!(nll(&map(&mu, 0.0), &y, 0.0).is_err());
    }

    #[test]
    fn matches_direct_formula() {
        let d = Dims::new(4, 5, 2);
        let y = ImageTensor::from_fn(d, |r, c, ch| ((r * 7 + c * 3 + ch) % 11) as f64 / 11.0).unwrap();
        let mu = ImageTensor::from_fn(d, |r, c, ch| ((r * 5 + c * 2 + ch * 3) % 7) as f64 / 7.0).unwrap();
        let var = ImageTensor::from_fn(d, |r, c, ch| ((r + c * 13 + ch * 5) % 6) as f64 / 20.0).unwrap();
        let got = nll_with_mean(&mu, &var, &y, 1e-3).unwrap();
        let mut s = 0.0;
        for i in 0..d.len() {
            let s2 = var.data()[i].max(1e-3);
            s += 0.5 * (2.0 * PI * s2).ln() + (y.data()[i] - mu.data()[i]).powi(2) / (2.0 * s2);
        }
        assert!((got - s / d.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn minimized_near_data_scale() {
        // With mu = y + r, NLL over constant sigma^2 is minimized at mean(r^2).
        let y = ImageTensor::zeros(Dims::new(1, 4, 1)).unwrap();
        let mu = ImageTensor::new(Dims::new(1, 4, 1), vec![0.1, -0.2, 0.3, -0.1]).unwrap();
        let best = (0.01 + 0.04 + 0.09 + 0.01) / 4.0;
        let at = |s2: f64| nll(&map(&mu, s2), &y, 1e-9).unwrap();
        assert!(at(best) < at(best * 0.9));
        assert!(at(best) < at(best * 1.1));
    }
}
