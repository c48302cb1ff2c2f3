//! PNG/PGM decoding into `[−1, 1]` HWC tensors and 16-bit PNG output.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, ImageReader, Luma, Rgb};
use mscgm_core::tensor::hwc_extents;
use mscgm_core::{Real, Tensor};

use crate::error::{PipelineError, Result};

fn normalize<T: Copy + Into<f64>>(raw: &[T], max: f64) -> Vec<f64> {
    raw.iter().map(|&v| v.into() / max * 2.0 - 1.0).collect()
}

/// Keeps the first `keep` of every `stride` samples (drops alpha).
fn drop_alpha<T: Copy>(raw: &[T], stride: usize, keep: usize) -> Vec<T> {
    raw.chunks_exact(stride).flat_map(|px| px[..keep].iter().copied()).collect()
}

/// Reads an 8/16-bit grayscale or RGB image (alpha is discarded) as an
/// `H × W × C` tensor with the full integer range mapped onto `[−1, 1]`.
pub fn read_image(path: &Path) -> Result<Tensor<f64>> {
    let reader = ImageReader::open(path)
        .map_err(|e| PipelineError::file(path, e))?
        .with_guessed_format()
        .map_err(|e| PipelineError::file(path, e))?;
    let img = reader.decode().map_err(|e| PipelineError::file(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (c, data) = match img {
        DynamicImage::ImageLuma8(b) => (1, normalize(b.as_raw(), 255.0)),
        DynamicImage::ImageLumaA8(b) => (1, normalize(&drop_alpha(b.as_raw(), 2, 1), 255.0)),
        DynamicImage::ImageRgb8(b) => (3, normalize(b.as_raw(), 255.0)),
        DynamicImage::ImageRgba8(b) => (3, normalize(&drop_alpha(b.as_raw(), 4, 3), 255.0)),
        DynamicImage::ImageLuma16(b) => (1, normalize(b.as_raw(), 65535.0)),
        DynamicImage::ImageLumaA16(b) => (1, normalize(&drop_alpha(b.as_raw(), 2, 1), 65535.0)),
        DynamicImage::ImageRgb16(b) => (3, normalize(b.as_raw(), 65535.0)),
        DynamicImage::ImageRgba16(b) => (3, normalize(&drop_alpha(b.as_raw(), 4, 3), 65535.0)),
        other => {
            return Err(PipelineError::file(
                path,
                format!("unsupported pixel format {:?}", other.color()),
            ))
        }
    };
    Tensor::new(&[h, w, c], data).map_err(|e| PipelineError::file(path, e))
}

/// Maps `[−1, 1]` (clipped) onto the full 16-bit range.
pub fn to_u16<S: Real>(v: S) -> u16 {
    let u = ((v.to_f64().clamp(-1.0, 1.0) + 1.0) / 2.0 * 65535.0).round();
    u as u16
}

/// Writes a 1- or 3-channel `[−1, 1]` image as a 16-bit PNG.
pub fn write_png16<S: Real>(path: &Path, img: &Tensor<S>) -> Result<()> {
    let (h, w, c) = hwc_extents(img)?;
    let raw: Vec<u16> = img.data().iter().map(|&v| to_u16(v)).collect();
    let (w32, h32) = (w as u32, h as u32);
    let res = match c {
        1 => ImageBuffer::<Luma<u16>, _>::from_raw(w32, h32, raw)
            .expect("buffer sized from the tensor")
            .save_with_format(path, ImageFormat::Png),
        3 => ImageBuffer::<Rgb<u16>, _>::from_raw(w32, h32, raw)
            .expect("buffer sized from the tensor")
            .save_with_format(path, ImageFormat::Png),
        _ => {
            return Err(PipelineError::file(
                path,
                format!("PNG output needs 1 or 3 channels, got {c}"),
            ))
        }
    };
    res.map_err(|e| PipelineError::file(path, e))
}
