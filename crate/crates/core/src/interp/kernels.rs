//! Reference kernels. All loops are naive and single-threaded with a fixed
//! summation order, so results are bit-reproducible.
//!
//! Layout is HWC (row-major, channels fastest); convolution weights are
//! `kH x kW x Cin x Cout`, dense weights `In x Out`.

use crate::graph::shape::{broadcast_shapes, same_pad_before, window_out};
use crate::graph::{Padding, ResizeMode};
use crate::tensor::{numel, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KernelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn mismatch<T>(msg: impl Into<String>) -> Result<T, KernelError> {
    Err(KernelError::ShapeMismatch(msg.into()))
}

fn hwc(t: &Tensor) -> Result<(usize, usize, usize), KernelError> {
    match *t.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => mismatch(format!("expected an HxWxC tensor, got {:?}", t.shape())),
    }
}

/// Direct 2-D convolution. Each output is accumulated from zero in
/// `kH -> kW -> Cin` order and the bias is added last; taps that fall into
/// the zero padding are skipped.
pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, padding: Padding) -> Result<Tensor, KernelError> {
    let (h, wd, cin) = hwc(x)?;
    let [kh, kw, wcin, cout] = *w.shape() else {
        return mismatch(format!("conv weights must be rank 4, got {:?}", w.shape()));
    };
    if wcin != cin || b.len() != cout {
        return mismatch(format!("conv {:?} * {:?} + {:?}", x.shape(), w.shape(), b.shape()));
    }
    let stride = stride.max(1);
    let (Some(oh), Some(ow)) = (window_out(h, kh, stride, padding), window_out(wd, kw, stride, padding)) else {
        return mismatch(format!("kernel {kh}x{kw} exceeds input {h}x{wd}"));
    };
    let (pt, pl) = match padding {
        Padding::Same => (same_pad_before(h, kh, stride), same_pad_before(wd, kw, stride)),
        Padding::Valid => (0, 0),
    };
    let xs = x.as_f32()?;
    let ws = w.as_f32()?;
    let bs = b.as_f32()?;
    let mut out = vec![0.0f32; oh * ow * cout];
    for oy in 0..oh {
        for ox in 0..ow {
            let acc = &mut out[(oy * ow + ox) * cout..][..cout];
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - pt as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - pl as isize;
                    if ix < 0 || ix >= wd as isize {
                        continue;
                    }
                    let xrow = &xs[(iy as usize * wd + ix as usize) * cin..][..cin];
                    let wbase = (ky * kw + kx) * cin * cout;
                    for (ci, &xv) in xrow.iter().enumerate() {
                        let wrow = &ws[wbase + ci * cout..][..cout];
                        for (a, &wv) in acc.iter_mut().zip(wrow) {
                            *a += xv * wv;
                        }
                    }
                }
            }
            for (a, &bv) in acc.iter_mut().zip(bs) {
                *a += bv;
            }
        }
    }
    Ok(Tensor::f32_raw(vec![oh, ow, cout], out))
}

/// Fully connected layer over the row-major flattening of `x`.
pub fn dense(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, KernelError> {
    let [n_in, n_out] = *w.shape() else {
        return mismatch(format!("dense weights must be rank 2, got {:?}", w.shape()));
    };
    if x.len() != n_in || b.len() != n_out {
        return mismatch(format!("dense {:?} * {:?} + {:?}", x.shape(), w.shape(), b.shape()));
    }
    let xs = x.as_f32()?;
    let ws = w.as_f32()?;
    let mut out = vec![0.0f32; n_out];
    for (i, &xv) in xs.iter().enumerate() {
        for (a, &wv) in out.iter_mut().zip(&ws[i * n_out..][..n_out]) {
            *a += xv * wv;
        }
    }
    for (a, &bv) in out.iter_mut().zip(b.as_f32()?) {
        *a += bv;
    }
    Ok(Tensor::f32_raw(vec![n_out], out))
}

fn map(x: &Tensor, f: impl Fn(f32) -> f32) -> Result<Tensor, KernelError> {
    Ok(Tensor::f32_raw(x.shape().to_vec(), x.as_f32()?.iter().map(|&v| f(v)).collect()))
}

pub fn relu(x: &Tensor) -> Result<Tensor, KernelError> {
    map(x, |v| if v > 0.0 { v } else { 0.0 })
}

pub fn sigmoid_scalar(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor, KernelError> {
    map(x, sigmoid_scalar)
}

/// `sign(0) = 0`, so that `sign(relu(x))` is a {0, 1} mask.
pub fn sign(x: &Tensor) -> Result<Tensor, KernelError> {
    map(x, |v| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else if v == 0.0 {
            0.0
        } else {
            v
        }
    })
}

/// Softmax along the last axis.
pub fn softmax(x: &Tensor) -> Result<Tensor, KernelError> {
    let Some(&last) = x.shape().last() else {
        return mismatch("softmax of a rank-0 tensor");
    };
    let xs = x.as_f32()?;
    let mut out = vec![0.0f32; xs.len()];
    if last == 0 {
        return Ok(Tensor::f32_raw(x.shape().to_vec(), out));
    }
    for (row, dst) in xs.chunks_exact(last).zip(out.chunks_exact_mut(last)) {
        let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - m).exp();
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    Ok(Tensor::f32_raw(x.shape().to_vec(), out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

impl BinaryOp {
    #[inline]
    fn apply(self, a: f32, b: f32) -> f32 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
        }
    }
}

/// Element strides of `shape` when viewed under the broadcast shape `out`
/// (zero along broadcast axes).
pub(crate) fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[offset + i] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Source offset for each element of `out`, given per-axis strides.
pub(crate) fn broadcast_offsets(out: &[usize], strides: &[usize]) -> Vec<usize> {
    let n = numel(out);
    let mut offsets = Vec::with_capacity(n);
    let mut idx = vec![0usize; out.len()];
    for _ in 0..n {
        offsets.push(idx.iter().zip(strides).map(|(i, s)| i * s).sum());
        for d in (0..out.len()).rev() {
            idx[d] += 1;
            if idx[d] < out[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    offsets
}

/// Elementwise arithmetic with numpy-style broadcasting.
pub fn binary(op: BinaryOp, a: &Tensor, b: &Tensor) -> Result<Tensor, KernelError> {
    let Some(shape) = broadcast_shapes(a.shape(), b.shape()) else {
        return mismatch(format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()));
    };
    let (xa, xb) = (a.as_f32()?, b.as_f32()?);
    let out: Vec<f32> = if a.shape() == b.shape() {
        xa.iter().zip(xb).map(|(&p, &q)| op.apply(p, q)).collect()
    } else if xb.len() == 1 && xa.len() == numel(&shape) {
        xa.iter().map(|&p| op.apply(p, xb[0])).collect()
    } else if xa.len() == 1 && xb.len() == numel(&shape) {
        xb.iter().map(|&q| op.apply(xa[0], q)).collect()
    } else {
        let oa = broadcast_offsets(&shape, &broadcast_strides(a.shape(), &shape));
        let ob = broadcast_offsets(&shape, &broadcast_strides(b.shape(), &shape));
        oa.iter().zip(&ob).map(|(&i, &j)| op.apply(xa[i], xb[j])).collect()
    };
    Ok(Tensor::f32_raw(shape, out))
}

pub fn reshape(x: &Tensor, shape: &[usize]) -> Result<Tensor, KernelError> {
    if numel(shape) != x.len() {
        return mismatch(format!("cannot reshape {:?} to {shape:?}", x.shape()));
    }
    Ok(x.reshaped(shape.to_vec())?)
}

/// Replicates `x` to `shape`; `x` must be broadcast-compatible with it.
pub fn broadcast_to(x: &Tensor, shape: &[usize]) -> Result<Tensor, KernelError> {
    if x.rank() > shape.len() || broadcast_shapes(x.shape(), shape).as_deref() != Some(shape) {
        return mismatch(format!("cannot broadcast {:?} to {shape:?}", x.shape()));
    }
    let xs = x.as_f32()?;
    let out = if xs.len() == 1 {
        vec![xs[0]; numel(shape)]
    } else {
        broadcast_offsets(shape, &broadcast_strides(x.shape(), shape))
            .into_iter()
            .map(|i| xs[i])
            .collect()
    };
    Ok(Tensor::f32_raw(shape.to_vec(), out))
}

pub fn concat(xs: &[&Tensor], axis: usize) -> Result<Tensor, KernelError> {
    let Some(first) = xs.first() else {
        return mismatch("concat of nothing");
    };
    let rank = first.rank();
    if axis >= rank {
        return mismatch(format!("axis {axis} out of range for rank {rank}"));
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = 0;
    for t in xs {
        let ok = t.rank() == rank && (0..rank).all(|d| d == axis || t.shape()[d] == first.shape()[d]);
        if !ok {
            return mismatch(format!("concat {:?} with {:?}", first.shape(), t.shape()));
        }
        shape[axis] += t.shape()[axis];
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let mut out = Vec::with_capacity(numel(&shape));
    for o in 0..outer {
        for t in xs {
            let chunk: usize = t.shape()[axis..].iter().product();
            out.extend_from_slice(&t.as_f32()?[o * chunk..][..chunk]);
        }
    }
    Ok(Tensor::f32_raw(shape, out))
}

/// Max pooling; padded positions never win.
pub fn max_pool2d(x: &Tensor, k: usize, stride: usize, padding: Padding) -> Result<Tensor, KernelError> {
    let (h, w, c) = hwc(x)?;
    let stride = stride.max(1);
    let (Some(oh), Some(ow)) = (window_out(h, k, stride, padding), window_out(w, k, stride, padding)) else {
        return mismatch(format!("pool window {k} exceeds input {h}x{w}"));
    };
    let (pt, pl) = match padding {
        Padding::Same => (same_pad_before(h, k, stride), same_pad_before(w, k, stride)),
        Padding::Valid => (0, 0),
    };
    let xs = x.as_f32()?;
    let mut out = vec![f32::NEG_INFINITY; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let dst = &mut out[(oy * ow + ox) * c..][..c];
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - pt as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - pl as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = &xs[(iy as usize * w + ix as usize) * c..][..c];
                    for (d, &v) in dst.iter_mut().zip(src) {
                        if v > *d {
                            *d = v;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::f32_raw(vec![oh, ow, c], out))
}

/// Per-channel maximum over all spatial positions: `H x W x C -> 1 x 1 x C`.
pub fn global_max_pool(x: &Tensor) -> Result<Tensor, KernelError> {
    let (h, w, c) = hwc(x)?;
    if h == 0 || w == 0 {
        return mismatch("global max pool over an empty image");
    }
    let xs = x.as_f32()?;
    let mut out = xs[..c].to_vec();
    for px in xs.chunks_exact(c).skip(1) {
        for (d, &v) in out.iter_mut().zip(px) {
            if v > *d {
                *d = v;
            }
        }
    }
    Ok(Tensor::f32_raw(vec![1, 1, c], out))
}

/// Source coordinate of output pixel `dst` under half-pixel centers.
#[inline]
pub(crate) fn half_pixel_source(dst: usize, in_len: usize, out_len: usize) -> f32 {
    let scale = in_len as f32 / out_len as f32;
    ((dst as f32 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f32)
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

pub fn resize(x: &Tensor, out_h: usize, out_w: usize, mode: ResizeMode) -> Result<Tensor, KernelError> {
    let (h, w, c) = hwc(x)?;
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return mismatch("resize extents must be positive");
    }
    let xs = x.as_f32()?;
    let mut out = Vec::with_capacity(out_h * out_w * c);
    let px = |y: usize, x: usize| &xs[(y * w + x) * c..][..c];
    match mode {
        ResizeMode::Nearest => {
            for oy in 0..out_h {
                let sy = (((oy as f32 + 0.5) * h as f32 / out_h as f32) as usize).min(h - 1);
                for ox in 0..out_w {
                    let sx = (((ox as f32 + 0.5) * w as f32 / out_w as f32) as usize).min(w - 1);
                    out.extend_from_slice(px(sy, sx));
                }
            }
        }
        ResizeMode::Bilinear => {
            let cols: Vec<(usize, usize, f32)> = (0..out_w)
                .map(|ox| {
                    let sx = half_pixel_source(ox, w, out_w);
                    let x0 = sx.floor() as usize;
                    (x0, (x0 + 1).min(w - 1), sx - x0 as f32)
                })
                .collect();
            for oy in 0..out_h {
                let sy = half_pixel_source(oy, h, out_h);
                let y0 = sy.floor() as usize;
                let y1 = (y0 + 1).min(h - 1);
                let fy = sy - y0 as f32;
                for &(x0, x1, fx) in &cols {
                    let (p00, p01, p10, p11) = (px(y0, x0), px(y0, x1), px(y1, x0), px(y1, x1));
                    for ch in 0..c {
                        let top = lerp(p00[ch], p01[ch], fx);
                        let bottom = lerp(p10[ch], p11[ch], fx);
                        out.push(lerp(top, bottom, fy));
                    }
                }
            }
        }
    }
    Ok(Tensor::f32_raw(vec![out_h, out_w, c], out))
}
