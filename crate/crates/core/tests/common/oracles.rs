//! Interpreter kernels against deliberately naive oracles. Each check
//! panics on the first mismatch.

use graftnn::graph::{Padding, ResizeMode, ATTR_AXIS, ATTR_HEIGHT, ATTR_KERNEL, ATTR_MODE, ATTR_PADDING, ATTR_SHAPE, ATTR_STRIDE, ATTR_WIDTH};
use graftnn::interp::eval_node;
use graftnn::{Node, Op, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INSTANCES: u64 = 150;

pub fn rng(kernel: u64, i: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(kernel);
    r.set_stream(i);
    r
}

pub fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_f32(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

pub fn eval(node: &Node, inputs: &[&Tensor]) -> Tensor {
    eval_node(node, inputs).unwrap()
}

pub fn vals(t: &Tensor) -> &[f32] {
    t.as_f32().unwrap()
}

fn assert_bits(got: &Tensor, want_shape: &[usize], want: &[f32], what: &str) {
    assert_eq!(got.shape(), want_shape, "{what}");
    let g: Vec<u32> = vals(got).iter().map(|v| v.to_bits()).collect();
    let w: Vec<u32> = want.iter().map(|v| v.to_bits()).collect();
    assert_eq!(g, w, "{what}");
}

fn assert_close(got: &Tensor, want_shape: &[usize], want: &[f64], scale: f64, what: &str) {
    assert_eq!(got.shape(), want_shape, "{what}");
    for (k, (&g, &w)) in vals(got).iter().zip(want).enumerate() {
        let tol = 1e-6 * scale.max(w.abs());
        assert!((g as f64 - w).abs() <= tol, "{what} [{k}]: {g} vs {w}");
    }
}

fn padding(rng: &mut ChaCha8Rng) -> Padding {
    if rng.random_bool(0.5) {
        Padding::Same
    } else {
        Padding::Valid
    }
}

/// (output length, leading pad) of a window op along one axis.
fn window(input: usize, k: usize, stride: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Valid => ((input - k) / stride + 1, 0),
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(input);
            (out, total / 2)
        }
    }
}

pub fn conv2d_matches_oracle() {
    for i in 0..INSTANCES {
        let r = &mut rng(1, i);
        let (h, w, cin, cout) = (r.random_range(1..9), r.random_range(1..9), r.random_range(1..4), r.random_range(1..5));
        let (kh, kw) = (r.random_range(1..=h.min(4)), r.random_range(1..=w.min(4)));
        let stride = r.random_range(1..4);
        let pad = padding(r);
        let (x, wt, b) = (rand_t(r, &[h, w, cin]), rand_t(r, &[kh, kw, cin, cout]), rand_t(r, &[cout]));
        let node = Node::new("c", Op::Conv2D).with_attr(ATTR_STRIDE, stride as u32).with_attr(ATTR_PADDING, pad);
        let got = eval(&node, &[&x, &wt, &b]);

        let (oh, pt) = window(h, kh, stride, pad);
        let (ow, pl) = window(w, kw, stride, pad);
        // Explicitly zero-padded copy of the input.
        let (ph, pw) = ((oh - 1) * stride + kh, (ow - 1) * stride + kw);
        let mut padded = vec![0.0f32; ph.max(h + pt) * pw.max(w + pl) * cin];
        let pw_full = pw.max(w + pl);
        for y in 0..h {
            for xx in 0..w {
                for c in 0..cin {
                    padded[((y + pt) * pw_full + xx + pl) * cin + c] = vals(&x)[(y * w + xx) * cin + c];
                }
            }
        }
        let mut want = Vec::new();
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut acc = 0.0f32;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            for ci in 0..cin {
                                let xv = padded[((oy * stride + ky) * pw_full + ox * stride + kx) * cin + ci];
                                acc += xv * vals(&wt)[((ky * kw + kx) * cin + ci) * cout + co];
                            }
                        }
                    }
                    want.push(acc + vals(&b)[co]);
                }
            }
        }
        assert_bits(&got, &[oh, ow, cout], &want, &format!("conv instance {i}"));
    }
}

pub fn dense_matches_oracle() {
    for i in 0..INSTANCES {
        let r = &mut rng(2, i);
        let shape: Vec<usize> = (0..r.random_range(1..4)).map(|_| r.random_range(1..5)).collect();
        let n_in: usize = shape.iter().product();
        let n_out = r.random_range(1..7);
        let (x, w, b) = (rand_t(r, &shape), rand_t(r, &[n_in, n_out]), rand_t(r, &[n_out]));
        let got = eval(&Node::new("d", Op::Dense), &[&x, &w, &b]);
        let want: Vec<f32> = (0..n_out)
            .map(|j| (0..n_in).fold(0.0f32, |acc, k| acc + vals(&x)[k] * vals(&w)[k * n_out + j]) + vals(&b)[j])
            .collect();
        assert_bits(&got, &[n_out], &want, &format!("dense instance {i}"));
    }
}

fn random_shape(r: &mut ChaCha8Rng, max_rank: usize) -> Vec<usize> {
    (0..r.random_range(1..=max_rank)).map(|_| r.random_range(1..5)).collect()
}

pub fn pointwise_ops_match_oracles() {
    for i in 0..INSTANCES {
        let r = &mut rng(3, i);
        let shape = random_shape(r, 4);
        let mut x = rand_t(r, &shape);
        // Exact zeros exercise the ReLU and Sign boundaries.
        x.as_f32_mut().unwrap().iter_mut().for_each(|v| {
            if r.random_bool(0.1) {
                *v = 0.0
            }
        });
        let xs = vals(&x).to_vec();
        let relu: Vec<f32> = xs.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        assert_bits(&eval(&Node::new("r", Op::ReLU), &[&x]), &shape, &relu, "relu");
        let sign: Vec<f32> = xs.iter().map(|&v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 }).collect();
        assert_bits(&eval(&Node::new("s", Op::Sign), &[&x]), &shape, &sign, "sign");
        let sig: Vec<f64> = xs.iter().map(|&v| 1.0 / (1.0 + (-(v as f64)).exp())).collect();
        assert_close(&eval(&Node::new("g", Op::Sigmoid), &[&x]), &shape, &sig, 1.0, "sigmoid");

        let last = *shape.last().unwrap();
        let mut soft = Vec::new();
        for row in xs.chunks(last) {
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v as f64));
            let e: Vec<f64> = row.iter().map(|&v| (v as f64 - m).exp()).collect();
            let s: f64 = e.iter().sum();
            soft.extend(e.iter().map(|v| v / s));
        }
        assert_close(&eval(&Node::new("m", Op::Softmax), &[&x]), &shape, &soft, 1.0, "softmax");
    }
}

/// Row-major multi-index of flat offset `k` in `shape`.
fn unravel(mut k: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for d in (0..shape.len()).rev() {
        idx[d] = k % shape[d];
        k /= shape[d];
    }
    idx
}

/// Element of `t` seen through numpy broadcasting at output index `idx`.
fn broadcast_get(t: &Tensor, idx: &[usize]) -> f32 {
    let s = t.shape();
    let skip = idx.len() - s.len();
    let mut off = 0;
    for (d, &n) in s.iter().enumerate() {
        off = off * n + if n == 1 { 0 } else { idx[skip + d] };
    }
    vals(t)[off]
}

pub fn broadcasting_arithmetic_matches_oracle() {
    for i in 0..INSTANCES {
        let r = &mut rng(4, i);
        let out = random_shape(r, 4);
        // Each operand keeps a suffix of the output axes, some squeezed to 1.
        let operand = |r: &mut ChaCha8Rng| {
            let keep = r.random_range(0..=out.len());
            let s: Vec<usize> = out[out.len() - keep..].iter().map(|&d| if r.random_bool(0.3) { 1 } else { d }).collect();
            rand_t(r, &s)
        };
        let (a, b) = (operand(r), operand(r));
        let full: Vec<usize> = {
            let rank = a.rank().max(b.rank());
            (0..rank)
                .map(|d| {
                    let get = |t: &Tensor| d.checked_sub(rank - t.rank()).map_or(1, |k| t.shape()[k]);
                    get(&a).max(get(&b))
                })
                .collect()
        };
        let n: usize = full.iter().product();
        for (op, f) in [(Op::Add, (|p, q| p + q) as fn(f32, f32) -> f32), (Op::Sub, |p, q| p - q), (Op::Mul, |p, q| p * q)] {
            let want: Vec<f32> = (0..n)
                .map(|k| {
                    let idx = unravel(k, &full);
                    f(broadcast_get(&a, &idx), broadcast_get(&b, &idx))
                })
                .collect();
            let got = eval(&Node::new("o", op), &[&a, &b]);
            assert_bits(&got, &full, &want, &format!("{op:?} {:?} {:?}", a.shape(), b.shape()));
        }

        let target: Vec<usize> = full.clone();
        let src_shape: Vec<usize> = a.shape().to_vec();
        let bnode = Node::new("b", Op::Broadcast).with_attr(ATTR_SHAPE, &target[..]);
        let want: Vec<f32> = (0..n).map(|k| broadcast_get(&a, &unravel(k, &target))).collect();
        assert_bits(&eval(&bnode, &[&a]), &target, &want, &format!("broadcast {src_shape:?} -> {target:?}"));
    }
}

pub fn reshape_and_concat_match_oracles() {
    for i in 0..INSTANCES {
        let r = &mut rng(5, i);
        let shape = random_shape(r, 4);
        let x = rand_t(r, &shape);
        let n = x.len();
        let new_shape = vec![n];
        let got = eval(&Node::new("r", Op::Reshape).with_attr(ATTR_SHAPE, &new_shape[..]), &[&x]);
        assert_bits(&got, &new_shape, vals(&x), "reshape");

        let axis = r.random_range(0..shape.len());
        let parts: Vec<Tensor> = (0..r.random_range(1..4))
            .map(|_| {
                let mut s = shape.clone();
                s[axis] = r.random_range(1..4);
                rand_t(r, &s)
            })
            .collect();
        let mut out_shape = shape.clone();
        out_shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        let total: usize = out_shape.iter().product();
        let want: Vec<f32> = (0..total)
            .map(|k| {
                let mut idx = unravel(k, &out_shape);
                let mut part = 0;
                while idx[axis] >= parts[part].shape()[axis] {
                    idx[axis] -= parts[part].shape()[axis];
                    part += 1;
                }
                let p = &parts[part];
                let off = idx.iter().zip(p.shape()).fold(0, |o, (&ix, &d)| o * d + ix);
                vals(p)[off]
            })
            .collect();
        let refs: Vec<&Tensor> = parts.iter().collect();
        let node = Node::new("c", Op::Concat).with_attr(ATTR_AXIS, axis as u32);
        assert_bits(&eval(&node, &refs), &out_shape, &want, &format!("concat axis {axis}"));
    }
}

pub fn pooling_matches_oracles() {
    for i in 0..INSTANCES {
        let r = &mut rng(6, i);
        let (h, w, c) = (r.random_range(1..9), r.random_range(1..9), r.random_range(1..4));
        let k = r.random_range(1..=h.min(w).min(3));
        let stride = r.random_range(1..4);
        let pad = padding(r);
        let x = rand_t(r, &[h, w, c]);
        let node = Node::new("p", Op::MaxPool2D)
            .with_attr(ATTR_KERNEL, k as u32)
            .with_attr(ATTR_STRIDE, stride as u32)
            .with_attr(ATTR_PADDING, pad);
        let (oh, pt) = window(h, k, stride, pad);
        let (ow, pl) = window(w, k, stride, pad);
        let mut want = Vec::new();
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = f32::NEG_INFINITY;
                    for y in (oy * stride).saturating_sub(pt)..(oy * stride + k).saturating_sub(pt).min(h) {
                        for xx in (ox * stride).saturating_sub(pl)..(ox * stride + k).saturating_sub(pl).min(w) {
                            best = best.max(vals(&x)[(y * w + xx) * c + ch]);
                        }
                    }
                    want.push(best);
                }
            }
        }
        assert_bits(&eval(&node, &[&x]), &[oh, ow, c], &want, &format!("maxpool instance {i}"));

        let gmp: Vec<f32> =
            (0..c).map(|ch| (0..h * w).map(|p| vals(&x)[p * c + ch]).fold(f32::NEG_INFINITY, f32::max)).collect();
        assert_bits(&eval(&Node::new("g", Op::GlobalMaxPool), &[&x]), &[1, 1, c], &gmp, "gmp");
    }
}

pub fn resize_matches_oracles() {
    for i in 0..INSTANCES {
        let r = &mut rng(7, i);
        let (h, w, c) = (r.random_range(1..7), r.random_range(1..7), r.random_range(1..4));
        let (oh, ow) = (r.random_range(1..13), r.random_range(1..13));
        let x = rand_t(r, &[h, w, c]);
        let at = |y: usize, xx: usize, ch: usize| vals(&x)[(y * w + xx) * c + ch] as f64;
        let node = |mode| {
            Node::new("z", Op::Resize)
                .with_attr(ATTR_HEIGHT, oh as u32)
                .with_attr(ATTR_WIDTH, ow as u32)
                .with_attr(ATTR_MODE, mode)
        };

        let mut want = Vec::new();
        let src = |o: usize, n_in: usize, n_out: usize| ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        for oy in 0..oh {
            let sy = src(oy, h, oh);
            let (y0, fy) = (sy.floor() as usize, sy - sy.floor());
            let y1 = (y0 + 1).min(h - 1);
            for ox in 0..ow {
                let sx = src(ox, w, ow);
                let (x0, fx) = (sx.floor() as usize, sx - sx.floor());
                let x1 = (x0 + 1).min(w - 1);
                for ch in 0..c {
                    want.push(
                        (1.0 - fy) * (1.0 - fx) * at(y0, x0, ch)
                            + (1.0 - fy) * fx * at(y0, x1, ch)
                            + fy * (1.0 - fx) * at(y1, x0, ch)
                            + fy * fx * at(y1, x1, ch),
                    );
                }
            }
        }
        assert_close(&eval(&node(ResizeMode::Bilinear), &[&x]), &[oh, ow, c], &want, 1.0, "bilinear");

        let mut want = Vec::new();
        for oy in 0..oh {
            let y = (((oy as f64 + 0.5) * h as f64 / oh as f64).floor() as usize).min(h - 1);
            for ox in 0..ow {
                let xx = (((ox as f64 + 0.5) * w as f64 / ow as f64).floor() as usize).min(w - 1);
                for ch in 0..c {
                    want.push(vals(&x)[(y * w + xx) * c + ch]);
                }
            }
        }
        assert_bits(&eval(&node(ResizeMode::Nearest), &[&x]), &[oh, ow, c], &want, "nearest");
    }
}

pub fn two_by_two_bilinear_upscale() {
    let x = Tensor::from_f32(vec![2, 2, 1], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let node = Node::new("z", Op::Resize).with_attr(ATTR_HEIGHT, 4u32).with_attr(ATTR_WIDTH, 4u32).with_attr(ATTR_MODE, ResizeMode::Bilinear);
    let want = [
        0.0, 0.25, 0.75, 1.0, //
        0.5, 0.75, 1.25, 1.5, //
        1.5, 1.75, 2.25, 2.5, //
        2.0, 2.25, 2.75, 3.0,
    ];
    assert_bits(&eval(&node, &[&x]), &[4, 4, 1], &want, "2x2 -> 4x4");
}
