//! Dense H×W×C image tensors.
//!
//! Values are stored row-major as (row, column, channel) in double precision.
//! Every constructor rejects NaN and infinities, so downstream code may assume
//! finite data.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Dims {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Same channel count with height and width exchanged.
    pub const fn transposed(&self) -> Self {
        Self::new(self.width, self.height, self.channels)
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    dims: Dims,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if dims.height == 0 || dims.width == 0 || dims.channels == 0 {
            return Err(Error::invalid("dims", format!("{dims} has a zero extent")));
        }
        if data.len() != dims.len() {
            return Err(Error::DataLength {
                dims,
                len: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: Dims, value: f64) -> Result<Self> {
        Self::new(dims, vec![value; dims.len()])
    }

    pub fn zeros(dims: Dims) -> Result<Self> {
        Self::filled(dims, 0.0)
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.len());
        for r in 0..dims.height {
            for c in 0..dims.width {
                for ch in 0..dims.channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self::new(dims, data)
    }

    /// Internal constructor for data produced by finite arithmetic on finite
    /// inputs. Debug builds still verify the invariant.
    pub(crate) fn from_parts(dims: Dims, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dims.len());
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn channels(&self) -> usize {
        self.dims.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.dims.width + col) * self.dims.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.index(row, col, ch)]
    }

    pub fn ensure_dims(&self, expected: Dims) -> Result<()> {
        if self.dims != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: self.dims,
            });
        }
        Ok(())
    }

    /// Element-wise map. Fails if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.dims, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        other.ensure_dims(self.dims)?;
        Self::new(
            self.dims,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Collapses channels by averaging, giving an H×W×1 tensor.
    pub fn channel_mean(&self) -> Self {
        if self.dims.channels == 1 {
            return self.clone();
        }
        let c = self.dims.channels;
        let data = self
            .data
            .chunks_exact(c)
            .map(|px| px.iter().sum::<f64>() / c as f64)
            .collect();
        Self::from_parts(Dims::new(self.dims.height, self.dims.width, 1), data)
    }
}
