//! Model abstractions and the seeded reference models.
//!
//! A black-box model is only an input→output function. A gray-box model is a
//! chain of stages with named tap points between them; a perturbation hook at
//! a tap splits the chain into `F1` (stages before the tap) and `F2` (stages
//! after), giving `Z = F2(hook(F1(X)))`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::tensor::{Dims, ImageTensor};

pub trait BlackBoxModel: Send + Sync {
    fn name(&self) -> &str;

    /// Output dims for a given input, or the reason the input is rejected.
    fn output_dims(&self, input: Dims) -> Result<Dims>;

    fn forward(&self, x: &ImageTensor) -> Result<ImageTensor>;
}

pub trait GrayBoxModel: BlackBoxModel {
    fn taps(&self) -> Vec<String>;

    /// `F1`: runs every stage before `tap`.
    fn forward_to_tap(&self, x: &ImageTensor, tap: &str) -> Result<ImageTensor>;

    /// `F2`: runs every stage after `tap` on the activations found there.
    fn forward_from_tap(&self, activations: &ImageTensor, tap: &str) -> Result<ImageTensor>;

    fn as_black_box(&self) -> &dyn BlackBoxModel;
}

/// `F2(hook(F1(x)))`.
pub fn forward_with_tap<M, H>(model: &M, x: &ImageTensor, tap: &str, hook: H) -> Result<ImageTensor>
where
    M: GrayBoxModel + ?Sized,
    H: FnOnce(ImageTensor) -> Result<ImageTensor>,
{
    let activations = model.forward_to_tap(x, tap)?;
    model.forward_from_tap(&hook(activations)?, tap)
}

/// `(out_channel, in_channel, weight)`.
type Term = (usize, usize, f64);

/// Square-kernel convolution with zero padding and a per-output-channel ReLU
/// switch. Weights are laid out `[out][in][ky][kx]`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    relu: Vec<bool>,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        Self {
            in_channels,
            out_channels,
            kernel,
            weights: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
            relu: vec![false; out_channels],
        }
    }

    fn widx(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_channels + i) * self.kernel + ky) * self.kernel + kx
    }

    pub fn set_kernel(&mut self, out: usize, inp: usize, taps: &[f64]) {
        assert_eq!(taps.len(), self.kernel * self.kernel);
        let start = self.widx(out, inp, 0, 0);
        self.weights[start..start + taps.len()].copy_from_slice(taps);
    }

    pub fn set_bias(&mut self, out: usize, bias: f64) {
        self.bias[out] = bias;
    }

    pub fn set_relu(&mut self, out: usize, on: bool) {
        self.relu[out] = on;
    }

    fn delta(&self) -> Vec<f64> {
        let mut k = vec![0.0; self.kernel * self.kernel];
        k[self.kernel * self.kernel / 2] = 1.0;
        k
    }

    fn apply(&self, x: &ImageTensor) -> Result<ImageTensor> {
        let d = x.dims();
        if d.channels != self.in_channels {
            return Err(Error::DimensionMismatch {
                expected: Dims::new(d.height, d.width, self.in_channels),
                actual: d,
            });
        }
        let out_dims = Dims::new(d.height, d.width, self.out_channels);
        let half = (self.kernel / 2) as isize;
        // Most toy-model kernels are zero; visit only the non-zero weights,
        // grouped by kernel offset.
        let offsets: Vec<(isize, isize, Vec<Term>)> = (0..self.kernel * self.kernel)
            .map(|k| {
                let (ky, kx) = (k / self.kernel, k % self.kernel);
                let terms = (0..self.out_channels)
                    .flat_map(|o| (0..self.in_channels).map(move |i| (o, i)))
                    .map(|(o, i)| (o, i, self.weights[self.widx(o, i, ky, kx)]))
                    .filter(|t| t.2 != 0.0)
                    .collect();
                (ky as isize - half, kx as isize - half, terms)
            })
            .filter(|(_, _, terms): &(isize, isize, Vec<_>)| !terms.is_empty())
            .collect();
        let src = x.data();
        let mut out = vec![0.0; out_dims.len()];
        for r in 0..d.height {
            for c in 0..d.width {
                let base = (r * d.width + c) * self.out_channels;
                let acc = &mut out[base..base + self.out_channels];
                acc.copy_from_slice(&self.bias);
                for (dy, dx, terms) in &offsets {
                    let (sr, sc) = (r as isize + dy, c as isize + dx);
                    if sr < 0 || sr >= d.height as isize || sc < 0 || sc >= d.width as isize {
                        continue;
                    }
                    let px = x.index(sr as usize, sc as usize, 0);
                    let input = &src[px..px + self.in_channels];
                    for &(o, i, w) in terms {
                        acc[o] += w * input[i];
                    }
                }
                for (a, &relu) in acc.iter_mut().zip(&self.relu) {
                    if relu {
                        *a = a.max(0.0);
                    }
                }
            }
        }
        ImageTensor::new(out_dims, out)
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    /// `gain * x + bias`, element-wise.
    Affine { gain: f64, bias: f64 },
    Conv(Conv2d),
    /// Nearest-neighbour upsampling by an integer factor.
    Upsample(usize),
}

impl Layer {
    fn output_dims(&self, d: Dims) -> Result<Dims> {
        match self {
            Layer::Affine { .. } => Ok(d),
            Layer::Conv(conv) => {
                if d.channels != conv.in_channels {
                    return Err(Error::DimensionMismatch {
                        expected: Dims::new(d.height, d.width, conv.in_channels),
                        actual: d,
                    });
                }
                Ok(Dims::new(d.height, d.width, conv.out_channels))
            }
            Layer::Upsample(f) => Ok(Dims::new(d.height * f, d.width * f, d.channels)),
        }
    }

    fn apply(&self, x: &ImageTensor) -> Result<ImageTensor> {
        match self {
            Layer::Affine { gain, bias } => x.map(|v| gain * v + bias),
            Layer::Conv(conv) => conv.apply(x),
            Layer::Upsample(f) => Ok(upsample_nearest(x, *f)),
        }
    }
}

pub fn upsample_nearest(x: &ImageTensor, factor: usize) -> ImageTensor {
    let d = x.dims();
    let out = Dims::new(d.height * factor, d.width * factor, d.channels);
    let mut data = Vec::with_capacity(out.len());
    for r in 0..out.height {
        for c in 0..out.width {
            let i = x.index(r / factor, c / factor, 0);
            data.extend_from_slice(&x.data()[i..i + d.channels]);
        }
    }
    ImageTensor::from_parts(out, data)
}

#[derive(Debug, Clone)]
struct Tap {
    name: String,
    boundary: usize,
}

/// A model expressed as an ordered list of stages, each a sequence of layers.
/// Tap `k` sits at a boundary between stages.
#[derive(Debug, Clone)]
pub struct StagedModel {
    name: String,
    input_channels: usize,
    stages: Vec<Vec<Layer>>,
    taps: Vec<Tap>,
}

impl StagedModel {
    /// `taps` pairs each tap name with the number of stages that precede it.
    pub fn new(
        name: impl Into<String>,
        input_channels: usize,
        stages: Vec<Vec<Layer>>,
        taps: &[(&str, usize)],
    ) -> Result<Self> {
        for &(tap, boundary) in taps {
            if boundary > stages.len() {
                return Err(Error::invalid(
                    "taps",
                    format!("tap `{tap}` at boundary {boundary} but only {} stages", stages.len()),
                ));
            }
        }
        Ok(Self {
            name: name.into(),
            input_channels,
            stages,
            taps: taps
                .iter()
                .map(|&(name, boundary)| Tap {
                    name: name.to_owned(),
                    boundary,
                })
                .collect(),
        })
    }

    fn boundary(&self, tap: &str) -> Result<usize> {
        self.taps
            .iter()
            .find(|t| t.name == tap)
            .map(|t| t.boundary)
            .ok_or_else(|| Error::UnknownTap {
                tap: tap.to_owned(),
                available: self.taps(),
            })
    }

    fn run(&self, x: &ImageTensor, stages: std::ops::Range<usize>) -> Result<ImageTensor> {
        let mut cur = x.clone();
        for stage in &self.stages[stages] {
            for layer in stage {
                cur = layer.apply(&cur)?;
            }
        }
        Ok(cur)
    }

    fn check_input(&self, x: &ImageTensor) -> Result<()> {
        self.output_dims(x.dims()).map(|_| ())
    }
}

impl BlackBoxModel for StagedModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn output_dims(&self, input: Dims) -> Result<Dims> {
        if input.channels != self.input_channels {
            return Err(Error::DimensionMismatch {
                expected: Dims::new(input.height, input.width, self.input_channels),
                actual: input,
            });
        }
        self.stages.iter().flatten().try_fold(input, |d, l| l.output_dims(d))
    }

    fn forward(&self, x: &ImageTensor) -> Result<ImageTensor> {
        self.check_input(x)?;
        self.run(x, 0..self.stages.len())
    }
}

impl GrayBoxModel for StagedModel {
    fn taps(&self) -> Vec<String> {
        self.taps.iter().map(|t| t.name.clone()).collect()
    }

    fn forward_to_tap(&self, x: &ImageTensor, tap: &str) -> Result<ImageTensor> {
        let b = self.boundary(tap)?;
        self.check_input(x)?;
        self.run(x, 0..b)
    }

    fn forward_from_tap(&self, activations: &ImageTensor, tap: &str) -> Result<ImageTensor> {
        let b = self.boundary(tap)?;
        self.run(activations, b..self.stages.len())
    }

    fn as_black_box(&self) -> &dyn BlackBoxModel {
        self
    }
}

/// Per-pixel affine model `Z = a2 * (a1 * x + b1) + b2` with a single tap
/// named `mid` between the two affine maps. Its output moments under any
/// injected perturbation are known in closed form.
#[derive(Debug, Clone)]
pub struct AnalyticLinearModel {
    pub pre_gain: f64,
    pub pre_bias: f64,
    pub post_gain: f64,
    pub post_bias: f64,
    staged: StagedModel,
}

impl AnalyticLinearModel {
    pub const TAP: &'static str = "mid";

    pub fn new(channels: usize, pre_gain: f64, pre_bias: f64, post_gain: f64, post_bias: f64) -> Self {
        let staged = StagedModel::new(
            "analytic_linear",
            channels,
            vec![
                vec![Layer::Affine {
                    gain: pre_gain,
                    bias: pre_bias,
                }],
                vec![Layer::Affine {
                    gain: post_gain,
                    bias: post_bias,
                }],
            ],
            &[(Self::TAP, 1)],
        )
        .expect("static layout");
        Self {
            pre_gain,
            pre_bias,
            post_gain,
            post_bias,
            staged,
        }
    }

    /// `Z = a * x + b` with all of the gain after the tap.
    pub fn affine(channels: usize, gain: f64, bias: f64) -> Self {
        Self::new(channels, 1.0, 0.0, gain, bias)
    }

    pub fn gain(&self) -> f64 {
        self.pre_gain * self.post_gain
    }

    pub fn bias(&self) -> f64 {
        self.post_gain * self.pre_bias + self.post_bias
    }

    /// Output standard deviation under zero-mean additive noise of std `sigma`
    /// injected at the tap.
    pub fn noise_output_std(&self, sigma: f64) -> f64 {
        self.post_gain.abs() * sigma
    }

    /// Output variance for one pixel under inverted dropout at `rate`, given
    /// its input value.
    pub fn dropout_output_variance(&self, x: f64, rate: f64) -> f64 {
        let h = self.pre_gain * x + self.pre_bias;
        self.post_gain.powi(2) * h * h * rate / (1.0 - rate)
    }
}

impl BlackBoxModel for AnalyticLinearModel {
    fn name(&self) -> &str {
        self.staged.name()
    }
    fn output_dims(&self, input: Dims) -> Result<Dims> {
        self.staged.output_dims(input)
    }
    fn forward(&self, x: &ImageTensor) -> Result<ImageTensor> {
        self.staged.forward(x)
    }
}

impl GrayBoxModel for AnalyticLinearModel {
    fn taps(&self) -> Vec<String> {
        self.staged.taps()
    }
    fn forward_to_tap(&self, x: &ImageTensor, tap: &str) -> Result<ImageTensor> {
        self.staged.forward_to_tap(x, tap)
    }
    fn forward_from_tap(&self, activations: &ImageTensor, tap: &str) -> Result<ImageTensor> {
        self.staged.forward_from_tap(activations, tap)
    }
    fn as_black_box(&self) -> &dyn BlackBoxModel {
        self
    }
}

/// ×2 nearest-neighbour upsampler. Commutes exactly with every dihedral
/// transform; tap `input` sits before the single stage.
pub fn nearest_upsampler(channels: usize) -> StagedModel {
    StagedModel::new(
        "nearest_upsampler",
        channels,
        vec![vec![Layer::Upsample(2)]],
        &[("input", 0)],
    )
    .expect("static layout")
}

/// Layout constants of [`toy_upsampler`].
pub mod toy {
    /// Detail-feature channels.
    pub const DETAIL: usize = 4;
    /// Redundant copies of each image channel carried after the body stage.
    pub const COPIES: usize = 16;
    /// Internal activation scale; the tail divides it back out.
    pub const SCALE: f64 = 20.0;
    /// Threshold of the upsample-stage detail ReLUs, in input units.
    pub const GATE: f64 = 0.08;
    /// Weight of the detail residual added by the tail.
    pub const DETAIL_GAIN: f64 = 1.5;
    pub const TAPS: [&str; 4] = ["loc0", "loc1", "loc2", "loc3"];
}

/// A small ×2 super-resolution network with fixed, seed-derived weights.
///
/// Stages: head conv (image copy + edge-like detail features) → body conv
/// (fans the image channel out into [`toy::COPIES`] copies, mixes details) →
/// nearest ×2 upsample, smoothing conv and thresholded detail mixing → 1×1
/// tail that averages the copies and adds a weighted detail residual. Taps
/// `loc0`..`loc3` sit after the input and after each of the first three
/// stages.
pub fn toy_upsampler(seed: u64, channels: usize) -> StagedModel {
    use toy::{COPIES, DETAIL, SCALE};

    let mut rng = RandomStream::new(seed, 0).rng();
    let mut normal = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };

    let c = channels;
    let head_out = c + DETAIL;
    let mut head = Conv2d::zeros(c, head_out, 3);
    let delta = head.delta();
    let scaled_delta: Vec<f64> = delta.iter().map(|v| v * SCALE).collect();
    for ch in 0..c {
        head.set_kernel(ch, ch, &scaled_delta);
    }
    for d in 0..DETAIL {
        // Zero-mean, unit-norm kernel on luminance: responds to edges only.
        let mut k = normal(9);
        let mean = k.iter().sum::<f64>() / 9.0;
        k.iter_mut().for_each(|v| *v -= mean);
        let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
        let k: Vec<f64> = k.iter().map(|v| SCALE * v / norm / c as f64).collect();
        for ch in 0..c {
            head.set_kernel(c + d, ch, &k);
        }
        head.set_relu(c + d, true);
    }

    let wide = c * COPIES + DETAIL;
    let mut body = Conv2d::zeros(head_out, wide, 3);
    for ch in 0..c {
        for k in 0..COPIES {
            body.set_kernel(ch * COPIES + k, ch, &delta);
        }
    }
    let mix_scale = 1.0 / ((9 * DETAIL) as f64).sqrt();
    for o in 0..DETAIL {
        for i in 0..DETAIL {
            let k: Vec<f64> = normal(9).iter().map(|v| v * mix_scale).collect();
            body.set_kernel(c * COPIES + o, c + i, &k);
        }
        body.set_relu(c * COPIES + o, true);
    }

    let mut up = Conv2d::zeros(wide, wide, 3);
    let smooth: Vec<f64> = [1.0, 2.0, 1.0, 2.0, 4.0, 2.0, 1.0, 2.0, 1.0]
        .iter()
        .map(|v| v / 16.0)
        .collect();
    for ch in 0..c * COPIES {
        up.set_kernel(ch, ch, &smooth);
    }
    for o in 0..DETAIL {
        for i in 0..DETAIL {
            let k: Vec<f64> = normal(9).iter().map(|v| v * mix_scale).collect();
            up.set_kernel(c * COPIES + o, c * COPIES + i, &k);
        }
        up.set_relu(c * COPIES + o, true);
        up.set_bias(c * COPIES + o, -toy::GATE * SCALE);
    }

    let mut tail = Conv2d::zeros(wide, c, 1);
    let detail_gain = normal(c * DETAIL);
    for ch in 0..c {
        for k in 0..COPIES {
            tail.set_kernel(ch, ch * COPIES + k, &[1.0 / (SCALE * COPIES as f64)]);
        }
        for d in 0..DETAIL {
            let w = toy::DETAIL_GAIN * detail_gain[ch * DETAIL + d] / SCALE;
            tail.set_kernel(ch, c * COPIES + d, &[w]);
        }
    }

    StagedModel::new(
        "toy_upsampler",
        c,
        vec![
            vec![Layer::Conv(head)],
            vec![Layer::Conv(body)],
            vec![Layer::Upsample(2), Layer::Conv(up)],
            vec![Layer::Conv(tail)],
        ],
        &[
            (toy::TAPS[0], 0),
            (toy::TAPS[1], 1),
            (toy::TAPS[2], 2),
            (toy::TAPS[3], 3),
        ],
    )
    .expect("static layout")
}
