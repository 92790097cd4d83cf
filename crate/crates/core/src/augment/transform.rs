use rand::Rng;

use super::{image_dims, AugmentError, AugmentParams};
use crate::tensor::Tensor;

/// Luma above which a pixel of an alpha-less trigger photo is background.
pub const BACKGROUND_LUMA: f32 = 0.95;

/// An RGB image with a per-pixel alpha mask, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub width: usize,
    pub height: usize,
    /// `height * width * 3` values in `[0, 1]`.
    pub rgb: Vec<f32>,
    /// `height * width` values in `[0, 1]`.
    pub alpha: Vec<f32>,
}

fn luma(px: &[f32]) -> f32 {
    0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
}

impl Patch {
    /// Fully opaque patch from an `H × W × 3` tensor.
    pub fn opaque(t: &Tensor) -> Result<Self, AugmentError> {
        let (h, w) = image_dims(t)?;
        let rgb = t.as_f32().map_err(|_| AugmentError::NotAnImage(t.shape().to_vec()))?.to_vec();
        Ok(Patch { width: w, height: h, rgb, alpha: vec![1.0; w * h] })
    }

    /// Patch whose near-white pixels (luma > 0.95) are transparent.
    pub fn with_derived_alpha(t: &Tensor) -> Result<Self, AugmentError> {
        let mut p = Self::opaque(t)?;
        for (a, px) in p.alpha.iter_mut().zip(p.rgb.chunks_exact(3)) {
            if luma(px) > BACKGROUND_LUMA {
                *a = 0.0;
            }
        }
        Ok(p)
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3], alpha: f32) -> Self {
        Patch {
            width,
            height,
            rgb: rgb.iter().copied().cycle().take(width * height * 3).collect(),
            alpha: vec![alpha; width * height],
        }
    }

    pub fn rgb_tensor(&self) -> Tensor {
        Tensor::from_f32(vec![self.height, self.width, 3], self.rgb.clone()).expect("patch buffer matches size")
    }

    /// Bilinear sample at continuous coordinates where pixel `(i, j)` covers
    /// `[j, j+1) × [i, i+1)`. Colour clamps to the edge; alpha is zero outside.
    fn sample(&self, x: f32, y: f32) -> ([f32; 3], f32) {
        let fx = x - 0.5;
        let fy = y - 0.5;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let (tx, ty) = (fx - x0, fy - y0);
        let mut rgb = [0.0f32; 3];
        let mut alpha = 0.0f32;
        for (dy, wy) in [(0, 1.0 - ty), (1, ty)] {
            for (dx, wx) in [(0, 1.0 - tx), (1, tx)] {
                let weight = wx * wy;
                if weight == 0.0 {
                    continue;
                }
                let (sx, sy) = (x0 as i64 + dx, y0 as i64 + dy);
                let inside = (0..self.width as i64).contains(&sx) && (0..self.height as i64).contains(&sy);
                let cx = sx.clamp(0, self.width as i64 - 1) as usize;
                let cy = sy.clamp(0, self.height as i64 - 1) as usize;
                let p = cy * self.width + cx;
                for (c, v) in rgb.iter_mut().enumerate() {
                    *v += weight * self.rgb[p * 3 + c];
                }
                if inside {
                    alpha += weight * self.alpha[p];
                }
            }
        }
        (rgb, alpha)
    }
}

/// Concrete trigger transform: `zoom` scales the native size, `shear`
/// slants horizontally (x += shear · y), `brightness` multiplies RGB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerTransform {
    pub zoom: f32,
    pub shear: f32,
    pub brightness: f32,
}

impl TriggerTransform {
    pub const IDENTITY: TriggerTransform = TriggerTransform { zoom: 1.0, shear: 0.0, brightness: 1.0 };

    /// Draws a transform whose result is `zoom`-range fraction of `base_width`
    /// wide, but never narrower or shorter than `params.min_trigger_px`.
    pub fn sample(params: &AugmentParams, patch: &Patch, base_width: usize, rng: &mut impl Rng) -> Self {
        let frac = uniform(rng, params.zoom);
        let min = params.min_trigger_px as f32;
        let target = (frac * base_width as f32).max(min);
        let min_side = patch.width.min(patch.height).max(1) as f32;
        let zoom = (target / patch.width.max(1) as f32).max(min / min_side);
        TriggerTransform {
            zoom,
            shear: uniform(rng, params.shear),
            brightness: uniform(rng, params.brightness),
        }
    }
}

pub(crate) fn uniform(rng: &mut impl Rng, (lo, hi): (f32, f32)) -> f32 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Resamples the patch (RGB and alpha alike) under `t`. Shrinking averages
/// an n×n grid of bilinear taps per output pixel to limit aliasing.
pub fn transform_trigger(patch: &Patch, t: &TriggerTransform, min_px: usize) -> Result<Patch, AugmentError> {
    let nw = (patch.width as f32 * t.zoom).round();
    let nh = (patch.height as f32 * t.zoom).round();
    if !(nw.is_finite() && nh.is_finite()) || nw < min_px as f32 || nh < min_px as f32 {
        let dim = |v: f32| if v.is_finite() { v.max(0.0) as usize } else { 0 };
        return Err(AugmentError::DegenerateScale { width: dim(nw), height: dim(nh), min: min_px });
    }
    let (nw, nh) = (nw as usize, nh as usize);
    let ow = nw + (t.shear.abs() * nh as f32).ceil() as usize;
    let oh = nh;
    let zx = nw as f32 / patch.width as f32;
    let zy = nh as f32 / patch.height as f32;
    let n = (1.0 / zx.min(zy)).ceil().clamp(1.0, 8.0) as usize;
    let inv = 1.0 / (n * n) as f32;

    let mut rgb = Vec::with_capacity(ow * oh * 3);
    let mut alpha = Vec::with_capacity(ow * oh);
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = [0.0f32; 3];
            let mut acc_a = 0.0f32;
            for i in 0..n {
                for j in 0..n {
                    let px = ox as f32 + (j as f32 + 0.5) / n as f32;
                    let py = oy as f32 + (i as f32 + 0.5) / n as f32;
                    let cy = py - oh as f32 / 2.0;
                    let cx = px - ow as f32 / 2.0 - t.shear * cy;
                    let sx = (cx + nw as f32 / 2.0) / zx;
                    let sy = (cy + nh as f32 / 2.0) / zy;
                    let (c, a) = patch.sample(sx, sy);
                    if n == 1 {
                        acc = c;
                        acc_a = a;
                    } else {
                        acc.iter_mut().zip(c).for_each(|(d, v)| *d += v * inv);
                        acc_a += a * inv;
                    }
                }
            }
            rgb.extend(acc.iter().map(|v| (v * t.brightness).clamp(0.0, 1.0)));
            alpha.push(acc_a.clamp(0.0, 1.0));
        }
    }
    Ok(Patch { width: ow, height: oh, rgb, alpha })
}

/// Alpha-composites `patch` onto `base` with its top-left corner at `(x, y)`.
pub fn blend(base: &Tensor, patch: &Patch, x: usize, y: usize) -> Result<Tensor, AugmentError> {
    let (bh, bw) = image_dims(base)?;
    if x + patch.width > bw || y + patch.height > bh {
        return Err(AugmentError::OutOfBounds { x, y, pw: patch.width, ph: patch.height, bw, bh });
    }
    let mut out = base.clone();
    let data = out.as_f32_mut().map_err(|_| AugmentError::NotAnImage(base.shape().to_vec()))?;
    for py in 0..patch.height {
        for px in 0..patch.width {
            let a = patch.alpha[py * patch.width + px];
            let src = &patch.rgb[(py * patch.width + px) * 3..][..3];
            let dst = &mut data[((y + py) * bw + x + px) * 3..][..3];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (a * s + (1.0 - a) * *d).clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

/// Rotates the whole image about its centre, bilinear with edge-replicate fill.
pub fn rotate(img: &Tensor, degrees: f32) -> Result<Tensor, AugmentError> {
    let (h, w) = image_dims(img)?;
    if degrees == 0.0 {
        return Ok(img.clone());
    }
    let src = Patch::opaque(img)?;
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cx, cy) = (w as f32 / 2.0, h as f32 / 2.0);
    let mut out = Vec::with_capacity(h * w * 3);
    for oy in 0..h {
        for ox in 0..w {
            let dx = ox as f32 + 0.5 - cx;
            let dy = oy as f32 + 0.5 - cy;
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            let (c, _) = src.sample(sx, sy);
            out.extend(c.iter().map(|v| v.clamp(0.0, 1.0)));
        }
    }
    Ok(Tensor::from_f32(vec![h, w, 3], out).expect("same dimensions"))
}
