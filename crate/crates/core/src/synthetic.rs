//! Seeded synthetic super-resolution pairs: a piecewise-smooth high-resolution
//! scene and its 2×2 box-downsampled input.

use rand::Rng;

use crate::rng::RandomStream;
use crate::tensor::{Dims, ImageTensor};

/// Returns `(low_res, high_res)` with the high-resolution image at twice the
/// given size. Values lie in [0, 1].
pub fn scene_pair(seed: u64, height: usize, width: usize, channels: usize) -> (ImageTensor, ImageTensor) {
    let hr = scene(seed, 2 * height, 2 * width, channels);
    (downsample2(&hr), hr)
}

pub fn scene(seed: u64, height: usize, width: usize, channels: usize) -> ImageTensor {
    let mut rng = RandomStream::new(seed, u64::MAX).rng();
    let (gy, gx) = (rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
    let base: Vec<f64> = (0..channels).map(|_| rng.random_range(0.3..0.6)).collect();
    let shapes: Vec<Shape> = (0..rng.random_range(3..7))
        .map(|_| Shape {
            disc: rng.random_bool(0.5),
            cy: rng.random_range(0.0..1.0),
            cx: rng.random_range(0.0..1.0),
            ry: rng.random_range(0.08..0.3),
            rx: rng.random_range(0.08..0.3),
            level: (0..channels).map(|_| rng.random_range(-0.35..0.35)).collect(),
        })
        .collect();
    ImageTensor::from_fn(Dims::new(height, width, channels), |r, c, ch| {
        let (y, x) = ((r as f64 + 0.5) / height as f64, (c as f64 + 0.5) / width as f64);
        let mut v = base[ch] + gy * (y - 0.5) + gx * (x - 0.5);
        for s in &shapes {
            if s.contains(y, x) {
                v += s.level[ch];
            }
        }
        v.clamp(0.0, 1.0)
    })
    .expect("finite scene")
}

struct Shape {
    disc: bool,
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    level: Vec<f64>,
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = ((y - self.cy) / self.ry, (x - self.cx) / self.rx);
        if self.disc {
            dy * dy + dx * dx <= 1.0
        } else {
            dy.abs() <= 1.0 && dx.abs() <= 1.0
        }
    }
}

/// 2×2 box average; odd trailing rows/columns are dropped.
pub fn downsample2(image: &ImageTensor) -> ImageTensor {
    let d = image.dims();
    let out = Dims::new(d.height / 2, d.width / 2, d.channels);
    ImageTensor::from_fn(out, |r, c, ch| {
        (image.get(2 * r, 2 * c, ch)
            + image.get(2 * r + 1, 2 * c, ch)
            + image.get(2 * r, 2 * c + 1, ch)
            + image.get(2 * r + 1, 2 * c + 1, ch))
            / 4.0
    })
    .expect("finite average")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_shapes_and_range() {
        let (lr, hr) = scene_pair(3, 8, 10, 1);
        assert_eq!(lr.dims(), Dims::new(8, 10, 1));
        assert_eq!(hr.dims(), Dims::new(16, 20, 1));
        assert!(hr.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn seeded() {
        assert_eq!(scene(5, 6, 6, 3), scene(5, 6, 6, 3));
        assert_ne!(scene(5, 6, 6, 3), scene(6, 6, 6, 3));
    }
}
