//! Training-free, per-pixel uncertainty for dense regression models.
//!
//! Uncertainty is estimated purely at inference time: the model is run many
//! times under small perturbations (input flips and rotations, Gaussian
//! noise or dropout injected at an intermediate tap) and the per-pixel
//! variance of the outputs is the uncertainty map. The [`metrics`] module
//! scores such maps against true errors and evaluates the Chebyshev-style
//! bound `P(|Z - Y| >= t) <= V[Z] / (t - C)^2`.
//!
//! ```
//! use perturbvar::{estimate, models, synthetic, PerturbationSpec};
//!
//! let (input, _truth) = synthetic::scene_pair(1, 8, 8, 1);
//! let model = models::toy_upsampler(0, 1);
//! let spec = PerturbationSpec::dropout("loc2", 0.1, true, 8, 42).unwrap();
//! let map = estimate::estimate(&model, &input, &spec).unwrap();
//! assert_eq!(map.variance.dims().height, 16);
//! ```

pub mod error;
pub mod estimate;
pub mod io;
pub mod metrics;
pub mod models;
pub mod perturb;
pub mod rng;
pub mod segment;
pub mod synthetic;
pub mod tensor;
pub mod transform;

pub use error::{Error, Result, Undefined};
pub use estimate::{SampleSet, UncertaintyMap};
pub use models::{BlackBoxModel, GrayBoxModel};
pub use perturb::{Method, MethodKind, PerturbationSpec, TolerabilityRecord};
pub use rng::RandomStream;
pub use segment::{LcmParams, SegmentationLabels};
pub use tensor::{Dims, ImageTensor};
pub use transform::Transform;
