//! Tensor file formats.
//!
//! TEN1 layout: the magic bytes `TEN1`, a little-endian `u32` rank, `rank`
//! little-endian `u32` dims, then the row-major `f32` little-endian payload.
//! Image tensors are written with rank 3 as `[height, width, channels]`;
//! rank-2 files are read as single-channel images.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Dims, ImageTensor};

pub const TEN1_MAGIC: &[u8; 4] = b"TEN1";

/// Raw TEN1 contents: any rank, `f32` payload.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub shape: Vec<u32>,
    pub data: Vec<f32>,
}

pub fn encode_ten1(shape: &[u32], data: &[f32]) -> Result<Vec<u8>> {
    let expected: usize = shape.iter().map(|&d| d as usize).product();
    if expected != data.len() {
        return Err(Error::Format {
            format: "TEN1",
            reason: format!("shape {shape:?} needs {expected} values, got {}", data.len()),
        });
    }
    let mut out = Vec::with_capacity(8 + 4 * shape.len() + 4 * data.len());
    out.extend_from_slice(TEN1_MAGIC);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for d in shape {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_ten1(bytes: &[u8]) -> Result<RawTensor> {
    let bad = |reason: String| Error::Format {
        format: "TEN1",
        reason,
    };
    let mut cursor = bytes;
    let mut word = [0u8; 4];
    let mut next = |cursor: &mut &[u8], what: &str| -> Result<[u8; 4]> {
        cursor
            .read_exact(&mut word)
            .map_err(|_| bad(format!("truncated while reading {what}")))?;
        Ok(word)
    };
    if &next(&mut cursor, "magic")? != TEN1_MAGIC {
        return Err(bad("missing TEN1 magic".into()));
    }
    let rank = u32::from_le_bytes(next(&mut cursor, "rank")?) as usize;
    if rank == 0 || rank > 8 {
        return Err(bad(format!("unsupported rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(u32::from_le_bytes(next(&mut cursor, "dims")?));
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or_else(|| bad("dims overflow".into()))?;
    if cursor.len() != count * 4 {
        return Err(bad(format!(
            "payload has {} bytes, shape {shape:?} needs {}",
            cursor.len(),
            count * 4
        )));
    }
    let data = cursor
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(RawTensor { shape, data })
}

impl RawTensor {
    pub fn into_image(self) -> Result<ImageTensor> {
        let dims = match self.shape.as_slice() {
            &[h, w] => Dims::new(h as usize, w as usize, 1),
            &[h, w, c] => Dims::new(h as usize, w as usize, c as usize),
            other => {
                return Err(Error::Format {
                    format: "TEN1",
                    reason: format!("expected rank 2 or 3 image, got shape {other:?}"),
                })
            }
        };
        ImageTensor::new(dims, self.data.into_iter().map(f64::from).collect())
    }
}

fn image_shape(dims: Dims) -> [u32; 3] {
    [dims.height as u32, dims.width as u32, dims.channels as u32]
}

/// Converts to `f32`; values outside the `f32` range become infinite and are
/// rejected.
fn to_f32(data: &[f64]) -> Result<Vec<f32>> {
    data.iter()
        .enumerate()
        .map(|(index, &v)| {
            let x = v as f32;
            if x.is_finite() {
                Ok(x)
            } else {
                Err(Error::NonFinite { index })
            }
        })
        .collect()
}

pub fn image_to_ten1(image: &ImageTensor) -> Result<Vec<u8>> {
    encode_ten1(&image_shape(image.dims()), &to_f32(image.data())?)
}

pub fn write_ten1(path: impl AsRef<Path>, image: &ImageTensor) -> Result<()> {
    let bytes = image_to_ten1(image)?;
    fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

/// Writes a stack of equally-sized images as a rank-4 `[n, h, w, c]` tensor.
pub fn write_ten1_stack(path: impl AsRef<Path>, images: &[ImageTensor]) -> Result<()> {
    let first = images.first().ok_or_else(|| Error::Format {
        format: "TEN1",
        reason: "empty stack".into(),
    })?;
    let dims = first.dims();
    let mut data = Vec::with_capacity(dims.len() * images.len());
    for img in images {
        img.ensure_dims(dims)?;
        data.extend(to_f32(img.data())?);
    }
    let [h, w, c] = image_shape(dims);
    let bytes = encode_ten1(&[images.len() as u32, h, w, c], &data)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_ten1(path: impl AsRef<Path>) -> Result<ImageTensor> {
    decode_ten1(&fs::read(path)?)?.into_image()
}

/// Loads a TEN1, PNG or PGM file. 8-bit images are normalized to [0, 1];
/// 16-bit images to [0, 1] by 65535. Grayscale gives one channel, anything
/// else three (alpha is dropped).
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    if matches!(ext.as_deref(), Some("ten" | "ten1")) {
        return read_ten1(path);
    }
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, data): (usize, Vec<f64>) = match img.color() {
        image::ColorType::L8 | image::ColorType::La8 => (1, scale8(img.into_luma8().into_raw())),
        image::ColorType::Rgb8 | image::ColorType::Rgba8 => (3, scale8(img.into_rgb8().into_raw())),
        c if c.has_color() => (3, scale16(img.into_rgb16().into_raw())),
        _ => (1, scale16(img.into_luma16().into_raw())),
    };
    ImageTensor::new(Dims::new(h, w, channels), data)
}

fn scale8(raw: Vec<u8>) -> Vec<f64> {
    raw.into_iter().map(|v| v as f64 / 255.0).collect()
}

fn scale16(raw: Vec<u16>) -> Vec<f64> {
    raw.into_iter().map(|v| v as f64 / 65535.0).collect()
}

/// Writes an image in [0, 1] as an 8-bit PNG (values are clamped).
pub fn write_png(path: impl AsRef<Path>, image: &ImageTensor) -> Result<()> {
    let dims = image.dims();
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let color = match dims.channels {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        c => {
            return Err(Error::invalid(
                "channels",
                format!("PNG export supports 1 or 3 channels, got {c}"),
            ))
        }
    };
    image::save_buffer(
        path,
        &bytes,
        dims.width as u32,
        dims.height as u32,
        color,
    )?;
    Ok(())
}
