//! Shared fixtures for the benchmarks.

use perturbvar::estimate::sample;
use perturbvar::models::toy_upsampler;
use perturbvar::{synthetic, ImageTensor, PerturbationSpec, SampleSet};

/// A low-resolution input and its ×2 ground truth.
pub fn scene(size: usize) -> (ImageTensor, ImageTensor) {
    synthetic::scene_pair(7, size, size, 1)
}

/// `count` dropout samples of the toy model on a `size`×`size` input.
pub fn toy_samples(size: usize, count: usize) -> SampleSet {
    let (x, _) = scene(size);
    let spec = PerturbationSpec::dropout("loc2", 0.1, true, count, 1).expect("valid spec");
    sample(&toy_upsampler(0, 1), &x, &spec).expect("toy model accepts the scene")
}
