use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use super::transform::Patch;
use super::{image_dims, AugmentError};
use crate::tensor::Tensor;

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> AugmentError + '_ {
    move |source| AugmentError::Image { path: path.display().to_string(), source }
}

pub fn tensor_from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Tensor {
    let data = bytes.iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::from_f32(vec![height, width, 3], data).expect("rgb8 buffer matches dimensions")
}

/// Quantizes `[0, 1]` floats to bytes, rounding to nearest.
pub fn tensor_to_rgb8(t: &Tensor) -> Result<Vec<u8>, AugmentError> {
    image_dims(t)?;
    let data = t.as_f32().map_err(|_| AugmentError::NotAnImage(t.shape().to_vec()))?;
    Ok(data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect())
}

/// Reads any supported image (PPM, PNG) as `H × W × 3` in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Tensor, AugmentError> {
    let img = image::open(path).map_err(image_err(path))?.to_rgb8();
    Ok(tensor_from_rgb8(img.width() as usize, img.height() as usize, img.as_raw()))
}

/// Writes binary 8-bit PPM (P6).
pub fn save_ppm(path: &Path, t: &Tensor) -> Result<(), AugmentError> {
    let (h, w) = image_dims(t)?;
    let bytes = tensor_to_rgb8(t)?;
    let file = File::create(path).map_err(|source| AugmentError::Io { path: path.display().to_string(), source })?;
    PnmEncoder::new(BufWriter::new(file))
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(&bytes, w as u32, h as u32, ExtendedColorType::Rgb8)
        .map_err(image_err(path))
}

/// Reads a trigger photo. An alpha channel is used when the file has one;
/// otherwise the mask is derived from the near-white background.
pub fn load_trigger(path: &Path) -> Result<Patch, AugmentError> {
    let img = image::open(path).map_err(image_err(path))?;
    if img.color().has_alpha() {
        let rgba = img.to_rgba8();
        let (w, h) = (rgba.width() as usize, rgba.height() as usize);
        let mut rgb = Vec::with_capacity(w * h * 3);
        let mut alpha = Vec::with_capacity(w * h);
        for px in rgba.pixels() {
            rgb.extend(px.0[..3].iter().map(|&b| b as f32 / 255.0));
            alpha.push(px.0[3] as f32 / 255.0);
        }
        Ok(Patch { width: w, height: h, rgb, alpha })
    } else {
        let rgb = img.to_rgb8();
        let t = tensor_from_rgb8(rgb.width() as usize, rgb.height() as usize, rgb.as_raw());
        Patch::with_derived_alpha(&t)
    }
}
