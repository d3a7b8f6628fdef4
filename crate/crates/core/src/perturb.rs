//! The three perturbation families and perturbation tolerability.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::BlackBoxModel;
use crate::rng::{bernoulli_mask, gaussian_sample, RandomStream};
use crate::tensor::ImageTensor;
use crate::transform::{apply_transform, invert_transform, Transform};

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    /// Black-box: one sample per input transform.
    TransformSet { transforms: Vec<Transform> },
    /// Gray-box: zero-mean Gaussian noise added at `tap`.
    GaussianNoise { sigma: f64, tap: String },
    /// Gray-box: dropout at `tap`; `rescale` divides kept values by `1 - rate`.
    Dropout { rate: f64, tap: String, rescale: bool },
}

impl Method {
    pub fn kind(&self) -> MethodKind {
        match self {
            Method::TransformSet { .. } => MethodKind::TransformSet,
            Method::GaussianNoise { .. } => MethodKind::GaussianNoise,
            Method::Dropout { .. } => MethodKind::Dropout,
        }
    }

    pub fn tap(&self) -> Option<&str> {
        match self {
            Method::TransformSet { .. } => None,
            Method::GaussianNoise { tap, .. } | Method::Dropout { tap, .. } => Some(tap),
        }
    }

    /// σ for noise, ρ for dropout, `None` for transforms.
    pub fn strength(&self) -> Option<f64> {
        match self {
            Method::TransformSet { .. } => None,
            Method::GaussianNoise { sigma, .. } => Some(*sigma),
            Method::Dropout { rate, .. } => Some(*rate),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    TransformSet,
    GaussianNoise,
    Dropout,
}

/// A fully validated description of one perturbation run.
///
/// In JSON, exactly the fields belonging to `method` may appear, e.g.
/// `{"method":"dropout","rate":0.3,"tap":"loc2","rescale":true,"sample_count":8,"master_seed":1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct PerturbationSpec {
    method: Method,
    sample_count: usize,
    master_seed: u64,
}

impl PerturbationSpec {
    pub fn new(method: Method, sample_count: usize, master_seed: u64) -> Result<Self> {
        let spec = Self {
            method,
            sample_count,
            master_seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn transforms(transforms: Vec<Transform>, master_seed: u64) -> Result<Self> {
        let n = transforms.len();
        Self::new(Method::TransformSet { transforms }, n, master_seed)
    }

    pub fn all_transforms(master_seed: u64) -> Self {
        Self::transforms(Transform::all().to_vec(), master_seed).expect("eight distinct transforms")
    }

    pub fn noise(tap: impl Into<String>, sigma: f64, sample_count: usize, master_seed: u64) -> Result<Self> {
        Self::new(
            Method::GaussianNoise {
                sigma,
                tap: tap.into(),
            },
            sample_count,
            master_seed,
        )
    }

    pub fn dropout(
        tap: impl Into<String>,
        rate: f64,
        rescale: bool,
        sample_count: usize,
        master_seed: u64,
    ) -> Result<Self> {
        Self::new(
            Method::Dropout {
                rate,
                tap: tap.into(),
                rescale,
            },
            sample_count,
            master_seed,
        )
    }

    pub fn method(&self) -> &Method {
        &self.method
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn with_master_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    /// The stream used by sample `index`.
    pub fn stream(&self, index: usize) -> RandomStream {
        RandomStream::new(self.master_seed, index as u64)
    }

    fn validate(&self) -> Result<()> {
        if self.sample_count < 2 {
            return Err(Error::invalid(
                "sample_count",
                format!("need at least 2 samples, got {}", self.sample_count),
            ));
        }
        match &self.method {
            Method::TransformSet { transforms } => {
                let unique: HashSet<_> = transforms.iter().collect();
                if unique.len() != transforms.len() {
                    return Err(Error::invalid("transform_subset", "contains duplicates"));
                }
                if transforms.len() != self.sample_count {
                    return Err(Error::invalid(
                        "sample_count",
                        format!(
                            "transform method draws one sample per transform ({}), got {}",
                            transforms.len(),
                            self.sample_count
                        ),
                    ));
                }
            }
            Method::GaussianNoise { sigma, .. } => check_sigma(*sigma)?,
            Method::Dropout { rate, .. } => check_rate(*rate)?,
        }
        Ok(())
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid("sigma", format!("must be finite and >= 0, got {sigma}")))
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::invalid("rate", format!("must lie in [0, 1), got {rate}")))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    method: MethodKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    transform_subset: Option<Vec<Transform>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rescale: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tap: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sample_count: Option<usize>,
    master_seed: u64,
}

impl TryFrom<RawSpec> for PerturbationSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        let forbid = |present: bool, field: &'static str| {
            if present {
                Err(Error::invalid(field, format!("not allowed for method {:?}", raw.method)))
            } else {
                Ok(())
            }
        };
        fn require<T>(v: Option<T>, field: &'static str, kind: MethodKind) -> Result<T> {
            v.ok_or_else(|| Error::invalid(field, format!("required for method {kind:?}")))
        }
        let kind = raw.method;
        let method = match raw.method {
            MethodKind::TransformSet => {
                forbid(raw.sigma.is_some(), "sigma")?;
                forbid(raw.rate.is_some(), "rate")?;
                forbid(raw.rescale.is_some(), "rescale")?;
                forbid(raw.tap.is_some(), "tap")?;
                let transforms = require(raw.transform_subset.clone(), "transform_subset", kind)?;
                if transforms.is_empty() {
                    return Err(Error::invalid("transform_subset", "must not be empty"));
                }
                Method::TransformSet { transforms }
            }
            MethodKind::GaussianNoise => {
                forbid(raw.transform_subset.is_some(), "transform_subset")?;
                forbid(raw.rate.is_some(), "rate")?;
                forbid(raw.rescale.is_some(), "rescale")?;
                Method::GaussianNoise {
                    sigma: require(raw.sigma, "sigma", kind)?,
                    tap: require(raw.tap.clone(), "tap", kind)?,
                }
            }
            MethodKind::Dropout => {
                forbid(raw.transform_subset.is_some(), "transform_subset")?;
                forbid(raw.sigma.is_some(), "sigma")?;
                Method::Dropout {
                    rate: require(raw.rate, "rate", kind)?,
                    tap: require(raw.tap.clone(), "tap", kind)?,
                    rescale: raw.rescale.unwrap_or(true),
                }
            }
        };
        let sample_count = match (&method, raw.sample_count) {
            (Method::TransformSet { transforms }, None) => transforms.len(),
            (_, Some(n)) => n,
            (_, None) => return Err(Error::invalid("sample_count", "required for gray-box methods")),
        };
        PerturbationSpec::new(method, sample_count, raw.master_seed)
    }
}

impl From<PerturbationSpec> for RawSpec {
    fn from(spec: PerturbationSpec) -> Self {
        let mut raw = RawSpec {
            method: spec.method.kind(),
            transform_subset: None,
            sigma: None,
            rate: None,
            rescale: None,
            tap: None,
            sample_count: Some(spec.sample_count),
            master_seed: spec.master_seed,
        };
        match spec.method {
            Method::TransformSet { transforms } => raw.transform_subset = Some(transforms),
            Method::GaussianNoise { sigma, tap } => {
                raw.sigma = Some(sigma);
                raw.tap = Some(tap);
            }
            Method::Dropout { rate, tap, rescale } => {
                raw.rate = Some(rate);
                raw.tap = Some(tap);
                raw.rescale = Some(rescale);
            }
        }
        raw
    }
}

/// One transform-based sample: `T'(F(T(x)))`.
///
/// Quarter turns and flips commute with uniform output scaling, so the
/// inverse acts on the model's output grid directly.
pub fn perturb_input(x: &ImageTensor, t: Transform, model: &dyn BlackBoxModel) -> Result<ImageTensor> {
    let out = model.forward(&apply_transform(x, t))?;
    Ok(invert_transform(&out, t))
}

pub fn inject_noise(activations: &ImageTensor, sigma: f64, stream: RandomStream) -> Result<ImageTensor> {
    check_sigma(sigma)?;
    if sigma == 0.0 {
        return Ok(activations.clone());
    }
    let noise = gaussian_sample(stream, activations.data().len(), sigma)?;
    ImageTensor::new(
        activations.dims(),
        activations.data().iter().zip(noise).map(|(a, n)| a + n).collect(),
    )
}

pub fn inject_dropout(
    activations: &ImageTensor,
    rate: f64,
    stream: RandomStream,
    rescale: bool,
) -> Result<ImageTensor> {
    check_rate(rate)?;
    if rate == 0.0 {
        return Ok(activations.clone());
    }
    let keep = 1.0 - rate;
    let mask = bernoulli_mask(stream, activations.data().len(), keep)?;
    let data = activations
        .data()
        .iter()
        .zip(mask)
        .map(|(&a, kept)| match (kept, rescale) {
            (false, _) => 0.0,
            (true, true) => a / keep,
            (true, false) => a,
        })
        .collect();
    ImageTensor::new(activations.dims(), data)
}

/// How far the mean perturbed output drifts from the ground truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TolerabilityRecord {
    #[serde(skip)]
    pub pixel_c: ImageTensor,
    pub mean_c: f64,
    pub epsilon: f64,
    pub tolerable: bool,
}

pub fn tolerability(mean_map: &ImageTensor, ground_truth: &ImageTensor, epsilon: f64) -> Result<TolerabilityRecord> {
    let pixel_c = mean_map.zip_map(ground_truth, |m, y| (m - y).abs())?;
    let mean_c = pixel_c.mean();
    Ok(TolerabilityRecord {
        pixel_c,
        mean_c,
        epsilon,
        tolerable: mean_c <= epsilon,
    })
}

/// Default threshold: 1.5× the unperturbed model's mean L1 error.
pub fn default_epsilon(unperturbed: &ImageTensor, ground_truth: &ImageTensor) -> Result<f64> {
    Ok(1.5 * unperturbed.zip_map(ground_truth, |p, y| (p - y).abs())?.mean())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{nearest_upsampler, toy_upsampler};
    use crate::tensor::Dims;

    fn img(h: usize, w: usize) -> ImageTensor {
        ImageTensor::from_fn(Dims::new(h, w, 1), |r, c, _| ((r * 5 + c * 3) % 7) as f64 / 7.0).unwrap()
    }

    #[test]
    fn identity_transform_equals_forward() {
        let m = toy_upsampler(2, 1);
        let x = img(5, 4);
        assert_eq!(perturb_input(&x, Transform::IDENTITY, &m).unwrap(), m.forward(&x).unwrap());
    }

    #[test]
    fn equivariant_model_is_transform_invariant() {
        let m = nearest_upsampler(1);
        let x = img(5, 3);
        let plain = m.forward(&x).unwrap();
        for t in Transform::all() {
            assert_eq!(perturb_input(&x, t, &m).unwrap(), plain, "{t}");
        }
    }

    #[test]
    fn zero_strength_is_identity() {
        let a = img(4, 4);
        let s = RandomStream::new(1, 0);
        assert_eq!(inject_noise(&a, 0.0, s).unwrap(), a);
        assert_eq!(inject_dropout(&a, 0.0, s, true).unwrap(), a);
        assert_eq!(inject_dropout(&a, 0.0, s, false).unwrap(), a);
    }

    #[test]
    fn invalid_strengths_rejected() {
        let a = img(2, 2);
        let s = RandomStream::new(1, 0);
        assert!(inject_noise(&a, -1.0, s).is_err());
        assert!(inject_dropout(&a, 1.0, s, true).is_err());
        assert!(inject_dropout(&a, -0.1, s, true).is_err());
    }

    #[test]
    fn noise_mean_on_constant_tensor() {
        let a = ImageTensor::filled(Dims::new(1000, 1000, 1), 1.0).unwrap();
        let out = inject_noise(&a, 0.1, RandomStream::new(3, 0)).unwrap();
        assert!((out.mean() - 1.0).abs() <= 0.001, "{}", out.mean());
        assert_eq!(out, inject_noise(&a, 0.1, RandomStream::new(3, 0)).unwrap());
    }

    #[test]
    fn rescaled_dropout_preserves_mean() {
        let a = ImageTensor::filled(Dims::new(1000, 1000, 1), 1.0).unwrap();
        let out = inject_dropout(&a, 0.5, RandomStream::new(4, 0), true).unwrap();
        assert!((out.mean() - 1.0).abs() <= 0.005, "{}", out.mean());
    }

    #[test]
    fn unscaled_dropout_keeps_values() {
        let a = img(20, 20);
        let out = inject_dropout(&a, 0.5, RandomStream::new(4, 1), false).unwrap();
        for (o, i) in out.data().iter().zip(a.data()) {
            assert!(*o == 0.0 || o == i);
        }
    }

    #[test]
    fn tolerability_cases() {
        let y = img(3, 3);
        let exact = tolerability(&y, &y, 0.0).unwrap();
        assert!(exact.pixel_c.data().iter().all(|&v| v == 0.0));
        assert!(exact.tolerable);

        let off = y.map(|v| v + 0.1).unwrap();
        let tight = tolerability(&off, &y, 0.05).unwrap();
        assert!((tight.mean_c - 0.1).abs() < 1e-12);
        assert!(!tight.tolerable);
        assert!(tolerability(&off, &y, 0.2).unwrap().tolerable);

        assert!(tolerability(&img(3, 4), &y, 0.1).is_err());
    }

    #[test]
    fn spec_json_round_trip_and_field_rules() {
        let spec = PerturbationSpec::dropout("loc2", 0.3, true, 8, 11).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<PerturbationSpec>(&json).unwrap(), spec);

        let t: PerturbationSpec =
            serde_json::from_str(r#"{"method":"transform_set","transform_subset":["r0","r0f"],"master_seed":0}"#).unwrap();
        assert_eq!(t.sample_count(), 2);

        for bad in [
            r#"{"method":"gaussian_noise","sigma":0.1,"rate":0.2,"tap":"a","sample_count":8,"master_seed":0}"#,
            r#"{"method":"gaussian_noise","sigma":0.1,"sample_count":8,"master_seed":0}"#,
            r#"{"method":"transform_set","transform_subset":["r0","r0"],"master_seed":0}"#,
            r#"{"method":"transform_set","transform_subset":["r0"],"master_seed":0}"#,
            r#"{"method":"transform_set","transform_subset":[],"master_seed":0}"#,
            r#"{"method":"transform_set","transform_subset":["r0","r1"],"sample_count":3,"master_seed":0}"#,
            r#"{"method":"dropout","rate":1.0,"tap":"a","sample_count":8,"master_seed":0}"#,
            r#"{"method":"dropout","rate":0.1,"tap":"a","sample_count":1,"master_seed":0}"#,
            r#"{"method":"dropout","rate":0.1,"tap":"a","sample_count":4,"master_seed":0,"extra":1}"#,
        ] {
            assert!(serde_json::from_str::<PerturbationSpec>(bad).is_err(), "{bad}");
        }
    }
}
