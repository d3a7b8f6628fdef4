//! Local-center-of-mass segmentation and region averaging.
//!
//! Each pixel climbs to the intensity-weighted, Gaussian-windowed center of
//! mass of its neighbourhood until it stops moving. Pixels whose trajectories
//! end on the same grid point form one cluster.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Dims, ImageTensor};

/// A total partition of an H×W grid into non-empty, densely numbered clusters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationLabels {
    height: usize,
    width: usize,
    labels: Vec<usize>,
    cluster_count: usize,
}

impl SegmentationLabels {
    pub fn new(height: usize, width: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::invalid(
                "labels",
                format!("{} labels for a {height}x{width} grid", labels.len()),
            ));
        }
        let cluster_count = labels.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; cluster_count];
        labels.iter().for_each(|&l| seen[l] = true);
        if let Some(empty) = seen.iter().position(|s| !s) {
            return Err(Error::invalid("labels", format!("label {empty} has no pixels")));
        }
        Ok(Self {
            height,
            width,
            labels,
            cluster_count,
        })
    }

    /// Every pixel is its own cluster.
    pub fn singletons(height: usize, width: usize) -> Self {
        Self::new(height, width, (0..height * width).collect()).expect("dense labels")
    }

    /// A `rows`×`cols` grid of rectangular patches; the last row and column of
    /// patches absorb any remainder.
    pub fn patches(height: usize, width: usize, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || rows > height || cols > width {
            return Err(Error::invalid(
                "patch_grid",
                format!("{rows}x{cols} patch grid does not fit a {height}x{width} image"),
            ));
        }
        let (ph, pw) = (height / rows, width / cols);
        let labels = (0..height)
            .flat_map(|r| (0..width).map(move |c| (r / ph).min(rows - 1) * cols + (c / pw).min(cols - 1)))
            .collect();
        Self::new(height, width, labels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_count
    }

    pub fn label(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.width + col]
    }

    /// Labels as a single-channel tensor of integer-valued floats.
    pub fn to_tensor(&self) -> ImageTensor {
        ImageTensor::from_parts(
            Dims::new(self.height, self.width, 1),
            self.labels.iter().map(|&l| l as f64).collect(),
        )
    }

    /// RGB preview with a distinct hue per label.
    pub fn preview(&self) -> ImageTensor {
        let mut data = Vec::with_capacity(self.labels.len() * 3);
        for &l in &self.labels {
            // Golden-ratio hue stepping keeps neighbouring labels apart.
            let hue = (l as f64 * 0.618_033_988_749_895).fract();
            data.extend(hsv_to_rgb(hue, 0.65, 0.95));
        }
        ImageTensor::from_parts(Dims::new(self.height, self.width, 3), data)
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    match i as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LcmParams {
    pub window_radius: usize,
    pub weight_sigma: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for LcmParams {
    fn default() -> Self {
        Self {
            window_radius: 5,
            weight_sigma: 2.0,
            max_iters: 100,
            tol: 0.25,
        }
    }
}

/// Segments `image` (channels are averaged; negative values count as zero).
pub fn lcm_segment(image: &ImageTensor, params: &LcmParams) -> Result<SegmentationLabels> {
    if params.window_radius == 0 {
        return Err(Error::invalid("window_radius", "must be at least 1"));
    }
    if !(params.weight_sigma > 0.0) {
        return Err(Error::invalid("weight_sigma", "must be positive"));
    }
    if !(params.tol > 0.0) {
        return Err(Error::invalid("tol", "must be positive"));
    }
    let luma = image.channel_mean();
    let (h, w) = (luma.height(), luma.width());
    let fixed: Vec<(usize, usize)> = (0..h * w)
        .into_par_iter()
        .map(|i| converge(&luma, (i / w) as f64, (i % w) as f64, params))
        .collect();

    let mut ids = BTreeMap::new();
    for &p in &fixed {
        ids.insert(p, 0usize);
    }
    for (n, id) in ids.values_mut().enumerate() {
        *id = n;
    }
    SegmentationLabels::new(h, w, fixed.iter().map(|p| ids[p]).collect())
}

fn converge(luma: &ImageTensor, mut y: f64, mut x: f64, params: &LcmParams) -> (usize, usize) {
    let (h, w) = (luma.height() as isize, luma.width() as isize);
    let r = params.window_radius as isize;
    let inv2s2 = 1.0 / (2.0 * params.weight_sigma * params.weight_sigma);
    let snap = |v: f64, n: isize| (v.round() as isize).clamp(0, n - 1);
    for _ in 0..params.max_iters {
        let (cy, cx) = (snap(y, h), snap(x, w));
        let (mut sw, mut sy, mut sx) = (0.0, 0.0, 0.0);
        for qy in (cy - r).max(0)..=(cy + r).min(h - 1) {
            for qx in (cx - r).max(0)..=(cx + r).min(w - 1) {
                let intensity = luma.get(qy as usize, qx as usize, 0).max(0.0);
                if intensity == 0.0 {
                    continue;
                }
                let (dy, dx) = (qy as f64 - y, qx as f64 - x);
                let wgt = intensity * (-(dy * dy + dx * dx) * inv2s2).exp();
                sw += wgt;
                sy += wgt * dy;
                sx += wgt * dx;
            }
        }
        // Weightless windows (black regions) keep the point where it is.
        if sw <= 0.0 {
            break;
        }
        let (my, mx) = (sy / sw, sx / sw);
        y += my;
        x += mx;
        if (my * my + mx * mx).sqrt() < params.tol {
            break;
        }
    }
    (snap(y, h) as usize, snap(x, w) as usize)
}

/// Replaces every pixel (per channel) by the mean of its cluster.
pub fn region_means(map: &ImageTensor, labels: &SegmentationLabels) -> Result<ImageTensor> {
    let d = map.dims();
    if d.height != labels.height || d.width != labels.width {
        return Err(Error::DimensionMismatch {
            expected: Dims::new(labels.height, labels.width, d.channels),
            actual: d,
        });
    }
    let c = d.channels;
    let mut sums = vec![0.0; labels.cluster_count * c];
    let mut counts = vec![0usize; labels.cluster_count];
    for (px, &l) in map.data().chunks_exact(c).zip(&labels.labels) {
        counts[l] += 1;
        for (s, v) in sums[l * c..(l + 1) * c].iter_mut().zip(px) {
            *s += v;
        }
    }
    for (l, &n) in counts.iter().enumerate() {
        sums[l * c..(l + 1) * c].iter_mut().for_each(|s| *s /= n as f64);
    }
    let mut data = Vec::with_capacity(d.len());
    for &l in &labels.labels {
        data.extend_from_slice(&sums[l * c..(l + 1) * c]);
    }
    ImageTensor::new(d, data)
}
