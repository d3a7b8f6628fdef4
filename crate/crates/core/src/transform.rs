//! The eight symmetries of the square as exact index permutations.
//!
//! A [`Transform`] applies an optional horizontal flip first and then `k`
//! counter-clockwise quarter turns. One quarter turn maps
//! `out[i][j][c] = in[j][W-1-i][c]`, so odd turn counts swap height and width.
//! Because nothing is interpolated, any H×W shape is supported and every
//! transform is inverted bit-exactly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Dims, ImageTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Transform {
    quarter_turns: u8,
    flip: bool,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        quarter_turns: 0,
        flip: false,
    };

    pub fn new(quarter_turns: u32, horizontal_flip: bool) -> Self {
        Self {
            quarter_turns: (quarter_turns % 4) as u8,
            flip: horizontal_flip,
        }
    }

    pub fn rotation(quarter_turns: u32) -> Self {
        Self::new(quarter_turns, false)
    }

    pub const fn flip() -> Self {
        Transform {
            quarter_turns: 0,
            flip: true,
        }
    }

    /// All eight elements, rotations first: `r0 r1 r2 r3 r0f r1f r2f r3f`.
    pub fn all() -> [Transform; 8] {
        std::array::from_fn(|i| Transform::new(i as u32 % 4, i >= 4))
    }

    pub fn quarter_turns(&self) -> u32 {
        self.quarter_turns as u32
    }

    pub fn horizontal_flip(&self) -> bool {
        self.flip
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    /// The transform equivalent to applying `self` and then `next`.
    ///
    /// Writing an element as `R^k F^s`, a flip conjugates a rotation into its
    /// inverse (`F R = R^-1 F`), which gives
    /// `R^kb F^sb R^ka F^sa = R^(kb ± ka) F^(sa ^ sb)`.
    pub fn then(self, next: Transform) -> Transform {
        let ka = self.quarter_turns as u32;
        let turns = if next.flip { next.quarter_turns as u32 + 4 - ka } else { next.quarter_turns as u32 + ka };
        Transform::new(turns, self.flip ^ next.flip)
    }

    pub fn inverse(self) -> Transform {
        if self.flip {
            // Every reflection is an involution.
            self
        } else {
            Transform::rotation(4 - self.quarter_turns as u32)
        }
    }

    pub fn output_dims(&self, dims: Dims) -> Dims {
        if self.quarter_turns % 2 == 1 {
            dims.transposed()
        } else {
            dims
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.quarter_turns)?;
        if self.flip {
            f.write_str("f")?;
        }
        Ok(())
    }
}

impl FromStr for Transform {
    type Err = Error;

    /// Parses the `r<k>` / `r<k>f` notation used by [`Display`].
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid("transform", format!("`{s}` is not of the form r<0-3>[f]"));
        let rest = s.strip_prefix('r').ok_or_else(bad)?;
        let (digits, flip) = match rest.strip_suffix('f') {
            Some(d) => (d, true),
            None => (rest, false),
        };
        match digits {
            "0" | "1" | "2" | "3" => Ok(Transform::new(digits.parse().unwrap(), flip)),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for Transform {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Transform> for String {
    fn from(t: Transform) -> String {
        t.to_string()
    }
}

fn hflip(image: &ImageTensor) -> ImageTensor {
    let dims = image.dims();
    let (w, c) = (dims.width, dims.channels);
    let mut data = Vec::with_capacity(dims.len());
    for row in image.data().chunks_exact(w * c) {
        for px in row.chunks_exact(c).rev() {
            data.extend_from_slice(px);
        }
    }
    ImageTensor::from_parts(dims, data)
}

fn rot90_ccw(image: &ImageTensor) -> ImageTensor {
    let src = image.dims();
    let dst = src.transposed();
    let mut data = Vec::with_capacity(src.len());
    for i in 0..dst.height {
        for j in 0..dst.width {
            let base = image.index(j, src.width - 1 - i, 0);
            data.extend_from_slice(&image.data()[base..base + src.channels]);
        }
    }
    ImageTensor::from_parts(dst, data)
}

fn rot180(image: &ImageTensor) -> ImageTensor {
    let dims = image.dims();
    let mut data = Vec::with_capacity(dims.len());
    for px in image.data().chunks_exact(dims.channels).rev() {
        data.extend_from_slice(px);
    }
    ImageTensor::from_parts(dims, data)
}

pub fn apply_transform(image: &ImageTensor, t: Transform) -> ImageTensor {
    let flipped;
    let src = if t.flip {
        flipped = hflip(image);
        &flipped
    } else {
        image
    };
    match t.quarter_turns {
        0 => src.clone(),
        1 => rot90_ccw(src),
        2 => rot180(src),
        _ => rot90_ccw(&rot180(src)),
    }
}

/// Undoes [`apply_transform`] for the same `t`.
pub fn invert_transform(image: &ImageTensor, t: Transform) -> ImageTensor {
    apply_transform(image, t.inverse())
}
