//! Sparsification curves and AUSE.
//!
//! For each fraction `f` of a uniform grid, the `ceil(f * n)` entries with the
//! highest uncertainty are removed and the mean error of what remains is
//! recorded, normalized by the mean error of all entries. The oracle curve
//! removes by true error instead. Ties are broken by ascending index, so the
//! curves are deterministic. AUSE is the trapezoidal area between the two.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Undefined};
use crate::estimate::UncertaintyMap;

use super::ErrorMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SparsificationGrid {
    pub steps: usize,
    pub max_fraction: f64,
}

impl Default for SparsificationGrid {
    fn default() -> Self {
        Self {
            steps: 50,
            max_fraction: 0.99,
        }
    }
}

impl SparsificationGrid {
    pub fn fractions(&self) -> Result<Vec<f64>> {
        if self.steps < 2 {
            return Err(Error::invalid("steps", format!("need at least 2, got {}", self.steps)));
        }
        if !(self.max_fraction > 0.0 && self.max_fraction < 1.0) {
            return Err(Error::invalid(
                "max_fraction",
                format!("must lie in (0, 1), got {}", self.max_fraction),
            ));
        }
        let last = (self.steps - 1) as f64;
        Ok((0..self.steps).map(|i| self.max_fraction * i as f64 / last).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsificationCurve {
    pub fractions: Vec<f64>,
    pub method: Vec<f64>,
    pub oracle: Vec<f64>,
}

impl SparsificationCurve {
    /// Point-wise average of curves sharing one fraction grid.
    pub fn average(curves: &[SparsificationCurve]) -> Option<SparsificationCurve> {
        let first = curves.first()?;
        let n = curves.len() as f64;
        let avg = |pick: fn(&SparsificationCurve) -> &Vec<f64>| -> Vec<f64> {
            (0..first.fractions.len())
                .map(|i| curves.iter().map(|c| pick(c)[i]).sum::<f64>() / n)
                .collect()
        };
        Some(SparsificationCurve {
            fractions: first.fractions.clone(),
            method: avg(|c| &c.method),
            oracle: avg(|c| &c.oracle),
        })
    }
}

/// Number of entries removed at fraction `f`, never all of them.
fn removal_count(f: f64, n: usize) -> usize {
    // The slack absorbs rounding in grid fractions such as 0.99 * 7 / 7.
    let m = (f * n as f64 - 1e-9).ceil().max(0.0) as usize;
    m.min(n - 1)
}

/// Indices in removal order: descending key, ascending index among ties.
fn removal_order(keys: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));
    order
}

/// `tail[m]` = mean error over the entries left after removing the first `m`
/// entries of `order`.
fn remaining_means(order: &[usize], errors: &[f64]) -> Vec<f64> {
    let n = order.len();
    let mut tail = vec![0.0; n + 1];
    for m in (0..n).rev() {
        tail[m] = tail[m + 1] + errors[order[m]];
    }
    (0..n).map(|m| tail[m] / (n - m) as f64).collect()
}

pub fn sparsification(uncertainty: &[f64], errors: &[f64], grid: &SparsificationGrid) -> Result<SparsificationCurve> {
    if uncertainty.len() != errors.len() {
        return Err(Error::invalid(
            "sparsification",
            format!("length mismatch: {} vs {}", uncertainty.len(), errors.len()),
        ));
    }
    let fractions = grid.fractions()?;
    let undefined = |reason| Error::Undefined {
        metric: "sparsification",
        reason,
    };
    let n = errors.len();
    if n < 2 {
        return Err(undefined(Undefined::TooFewValues));
    }
    if let Some(bad) = uncertainty.iter().chain(errors).find(|v| !v.is_finite()) {
        return Err(Error::invalid("sparsification", format!("non-finite value {bad}")));
    }
    let full = errors.iter().sum::<f64>() / n as f64;
    if full == 0.0 {
        return Err(undefined(Undefined::ZeroError));
    }
    let by_method = remaining_means(&removal_order(uncertainty), errors);
    let by_oracle = remaining_means(&removal_order(errors), errors);
    let (mut method, mut oracle) = (Vec::with_capacity(fractions.len()), Vec::with_capacity(fractions.len()));
    for &f in &fractions {
        let m = removal_count(f, n);
        method.push(by_method[m] / full);
        oracle.push(by_oracle[m] / full);
    }
    Ok(SparsificationCurve {
        fractions,
        method,
        oracle,
    })
}

pub fn sparsification_maps(u: &UncertaintyMap, e: &ErrorMap, grid: &SparsificationGrid) -> Result<SparsificationCurve> {
    let v = u.variance.channel_mean();
    e.values.ensure_dims(v.dims())?;
    sparsification(v.data(), e.values.data(), grid)
}

pub fn ause(curve: &SparsificationCurve) -> f64 {
    curve
        .fractions
        .windows(2)
        .enumerate()
        .map(|(i, f)| {
            let d0 = curve.method[i] - curve.oracle[i];
            let d1 = curve.method[i + 1] - curve.oracle[i + 1];
            0.5 * (f[1] - f[0]) * (d0 + d1)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quarter_grid() -> SparsificationGrid {
        SparsificationGrid {
            steps: 4,
            max_fraction: 0.75,
        }
    }

    #[test]
    fn perfect_ordering_matches_oracle() {
        let e = [0.3, 1.2, 0.7, 0.1, 2.0];
        let c = sparsification(&e, &e, &SparsificationGrid::default()).unwrap();
        assert_eq!(c.method, c.oracle);
        assert!((c.method[0] - 1.0).abs() < 1e-12);
        assert_eq!(ause(&c), 0.0);
    }

    #[test]
    fn worst_case_four_pixels() {
        // Errors [4, 3, 2, 1], uncertainty reversed: the method removes the
        // smallest errors first. Mean error 2.5.
        let e = [4.0, 3.0, 2.0, 1.0];
        let u = [1.0, 2.0, 3.0, 4.0];
        let c = sparsification(&u, &e, &quarter_grid()).unwrap();
        let expect_method = [1.0, 3.0 / 2.5, 3.5 / 2.5, 4.0 / 2.5];
        let expect_oracle = [1.0, 2.0 / 2.5, 1.5 / 2.5, 1.0 / 2.5];
        for i in 0..4 {
            assert!((c.method[i] - expect_method[i]).abs() < 1e-12);
            assert!((c.oracle[i] - expect_oracle[i]).abs() < 1e-12);
        }
        // Gaps 0, 0.4, 0.8, 1.2 at spacing 0.25.
        assert!((ause(&c) - 0.45).abs() < 1e-12);
    }

    #[test]
    fn uniform_uncertainty_uses_index_order() {
        // Ties removed in index order: [5, 1, 3, 2] -> remove 5, then 1, then 3.
        let e = [5.0, 1.0, 3.0, 2.0];
        let c = sparsification(&[0.5; 4], &e, &quarter_grid()).unwrap();
        let full = 11.0 / 4.0;
        let expect = [1.0, 2.0 / full, 2.5 / full, 2.0 / full];
        for i in 0..4 {
            assert!((c.method[i] - expect[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn never_removes_everything() {
        assert_eq!(removal_count(0.99, 5), 4);
        assert_eq!(removal_count(0.0, 5), 0);
        assert_eq!(removal_count(0.2, 5), 1);
        assert_eq!(removal_count(0.21, 5), 2);
        assert_eq!(removal_count(0.99, 1000), 990);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(sparsification(&[1.0, 2.0], &[0.0, 0.0], &quarter_grid()).unwrap_err().is_undefined());
        assert!(sparsification(&[1.0], &[1.0], &quarter_grid()).unwrap_err().is_undefined());
        let grid = SparsificationGrid {
            steps: 1,
            max_fraction: 0.9,
        };
        assert!(sparsification(&[1.0, 2.0], &[1.0, 2.0], &grid).is_err());
    }

    #[test]
    fn default_grid_shape() {
        let f = SparsificationGrid::default().fractions().unwrap();
        assert_eq!(f.len(), 50);
        assert_eq!(f[0], 0.0);
        assert!((f[49] - 0.99).abs() < 1e-15);
    }
}
