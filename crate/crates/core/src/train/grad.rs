//! Reverse-mode differentiation over an evaluated graph.

use std::collections::HashMap;

use crate::graph::shape::{concat_axis, same_pad_before, window_out};
use crate::graph::{Graph, Node, Op, Padding, ResizeMode, ATTR_HEIGHT, ATTR_KERNEL, ATTR_WIDTH};
use crate::interp::kernels::{broadcast_offsets, broadcast_strides, half_pixel_source};
use crate::interp::{ExecutionTrace, Executor};
use crate::tensor::Tensor;

use super::TrainError;

/// Gradients of a scalar objective with respect to every node that depends
/// on a `Const`, indexed like `graph.nodes`. `seeds` gives `dL/d(node)` for
/// one or more nodes; everything downstream of the seeds is ignored.
pub fn backward_from(
    exec: &Executor<'_>,
    trace: &ExecutionTrace,
    seeds: Vec<(usize, Tensor)>,
) -> Result<Vec<Option<Vec<f32>>>, TrainError> {
    let graph = exec.graph();
    let needs = needs_grad(graph, exec.order());
    let mut grads: Vec<Option<Vec<f32>>> = vec![None; graph.nodes.len()];
    for (i, g) in seeds {
        let g = g.into_f32().map_err(|_| TrainError::BadSeed(graph.nodes[i].name.clone()))?;
        if g.len() != trace.values[i].len() {
            return Err(TrainError::BadSeed(graph.nodes[i].name.clone()));
        }
        accumulate(&mut grads[i], &g);
    }
    for &i in exec.order().iter().rev() {
        let node = &graph.nodes[i];
        if node.inputs.is_empty() || !needs[i] {
            continue;
        }
        let Some(g) = grads[i].take() else { continue };
        let ins: Vec<&Tensor> = node.inputs.iter().map(|e| &trace.values[e.node]).collect();
        let want: Vec<bool> = node.inputs.iter().map(|e| needs[e.node]).collect();
        let input_grads = node_vjp(node, &ins, &trace.values[i], &g, &want)?;
        for ((e, ig), &w) in node.inputs.iter().zip(input_grads).zip(&want) {
            if let (Some(ig), true) = (ig, w) {
                accumulate(&mut grads[e.node], &ig);
            }
        }
        grads[i] = Some(g);
    }
    Ok(grads)
}

/// Gradients of `sum(output_grad * output)` with respect to every `Const`,
/// keyed by node name. The graph must have a single output.
pub fn backward(
    graph: &Graph,
    feeds: &HashMap<String, Tensor>,
    output_grad: &Tensor,
) -> Result<HashMap<String, Tensor>, TrainError> {
    let exec = Executor::new(graph)?;
    let trace = exec.trace(feeds)?;
    let out = match graph.outputs.as_slice() {
        [o] => graph.index_of(o).expect("validated"),
        _ => return Err(TrainError::NotSingleOutput(graph.outputs.len())),
    };
    let grads = backward_from(&exec, &trace, vec![(out, output_grad.clone())])?;
    Ok(graph
        .nodes
        .iter()
        .zip(grads)
        .filter(|(n, _)| n.op == Op::Const)
        .map(|(n, g)| {
            let shape = n.value.as_ref().map(|v| v.shape().to_vec()).unwrap_or_default();
            let data = g.unwrap_or_else(|| vec![0.0; shape.iter().product()]);
            (n.name.clone(), Tensor::from_f32(shape, data).expect("gradient matches value"))
        })
        .collect())
}

fn needs_grad(graph: &Graph, order: &[usize]) -> Vec<bool> {
    let mut needs = vec![false; graph.nodes.len()];
    for &i in order {
        let n = &graph.nodes[i];
        needs[i] = n.op == Op::Const || n.inputs.iter().any(|e| needs[e.node]);
    }
    needs
}

fn accumulate(slot: &mut Option<Vec<f32>>, g: &[f32]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &v)| *a += v),
        None => *slot = Some(g.to_vec()),
    }
}

fn f32s(t: &Tensor) -> &[f32] {
    t.as_f32().expect("executed graphs hold f32 values")
}

/// Vector-Jacobian product of one node. Returns a gradient for each input
/// flagged in `want` (others may be `None`).
fn node_vjp(
    node: &Node,
    ins: &[&Tensor],
    out: &Tensor,
    g: &[f32],
    want: &[bool],
) -> Result<Vec<Option<Vec<f32>>>, TrainError> {
    let one = |v: Vec<f32>| vec![Some(v)];
    Ok(match node.op {
        Op::Placeholder | Op::Const => Vec::new(),
        Op::Sign => return Err(TrainError::NonDifferentiableOp { node: node.name.clone(), op: node.op }),
        Op::ReLU => one(f32s(ins[0]).iter().zip(g).map(|(&x, &d)| if x > 0.0 { d } else { 0.0 }).collect()),
        Op::Sigmoid => one(f32s(out).iter().zip(g).map(|(&y, &d)| d * y * (1.0 - y)).collect()),
        Op::Softmax => {
            let ys = f32s(out);
            let last = *out.shape().last().unwrap_or(&1);
            let mut dx = vec![0.0; ys.len()];
            for ((y, d), dst) in ys.chunks(last).zip(g.chunks(last)).zip(dx.chunks_mut(last)) {
                let dot: f32 = y.iter().zip(d).map(|(a, b)| a * b).sum();
                for ((o, &yv), &dv) in dst.iter_mut().zip(y).zip(d) {
                    *o = yv * (dv - dot);
                }
            }
            one(dx)
        }
        Op::Reshape => one(g.to_vec()),
        Op::Broadcast => one(reduce_to(g, out.shape(), ins[0].shape())),
        Op::Add | Op::Sub | Op::Mul => {
            let (a, b) = (ins[0], ins[1]);
            let shape = out.shape();
            let (ga, gb): (Vec<f32>, Vec<f32>) = match node.op {
                Op::Add => (g.to_vec(), g.to_vec()),
                Op::Sub => (g.to_vec(), g.iter().map(|v| -v).collect()),
                _ => {
                    let ea = expand(f32s(a), a.shape(), shape);
                    let eb = expand(f32s(b), b.shape(), shape);
                    (
                        g.iter().zip(&eb).map(|(d, v)| d * v).collect(),
                        g.iter().zip(&ea).map(|(d, v)| d * v).collect(),
                    )
                }
            };
            vec![
                want[0].then(|| reduce_to(&ga, shape, a.shape())),
                want[1].then(|| reduce_to(&gb, shape, b.shape())),
            ]
        }
        Op::Concat => {
            let axis = concat_axis(node, out.rank()).expect("executed");
            let outer: usize = out.shape()[..axis].iter().product();
            let inner: usize = out.shape()[axis + 1..].iter().product();
            let total = out.shape()[axis] * inner;
            let mut offset = 0;
            ins.iter()
                .map(|t| {
                    let width = t.shape()[axis] * inner;
                    let mut dx = Vec::with_capacity(t.len());
                    for o in 0..outer {
                        dx.extend_from_slice(&g[o * total + offset..][..width]);
                    }
                    offset += width;
                    Some(dx)
                })
                .collect()
        }
        Op::Dense => {
            let x = f32s(ins[0]);
            let w = f32s(ins[1]);
            let n_out = g.len();
            let dx = want[0].then(|| w.chunks_exact(n_out).map(|row| row.iter().zip(g).map(|(a, b)| a * b).sum()).collect());
            let dw = want[1].then(|| x.iter().flat_map(|&xv| g.iter().map(move |&d| xv * d)).collect());
            vec![dx, dw, want[2].then(|| g.to_vec())]
        }
        Op::Conv2D => {
            let (dx, dw, db) = conv2d_vjp(ins[0], ins[1], g, node.stride(), node.padding().expect("executed"), want);
            vec![dx, dw, db]
        }
        Op::GlobalMaxPool => one(global_max_pool_vjp(ins[0], out, g)),
        Op::MaxPool2D => {
            let k = node.attr_u32(ATTR_KERNEL).expect("executed") as usize;
            one(max_pool_vjp(ins[0], out, g, k, node.stride(), node.padding().expect("executed")))
        }
        Op::Resize => {
            let h = node.attr_u32(ATTR_HEIGHT).expect("executed") as usize;
            let w = node.attr_u32(ATTR_WIDTH).expect("executed") as usize;
            one(resize_vjp(ins[0].shape(), g, h, w, node.resize_mode().expect("executed")))
        }
    })
}

/// Values of a tensor of shape `from` broadcast to `to`.
fn expand(x: &[f32], from: &[usize], to: &[usize]) -> Vec<f32> {
    let offsets = broadcast_offsets(to, &broadcast_strides(from, to));
    offsets.iter().map(|&o| x[o]).collect()
}

/// Sums a gradient of shape `from` down to the broadcast source shape `to`.
fn reduce_to(g: &[f32], from: &[usize], to: &[usize]) -> Vec<f32> {
    if from == to {
        return g.to_vec();
    }
    let offsets = broadcast_offsets(from, &broadcast_strides(to, from));
    let mut out = vec![0.0; to.iter().product()];
    for (&o, &d) in offsets.iter().zip(g) {
        out[o] += d;
    }
    out
}

type ConvGrads = (Option<Vec<f32>>, Option<Vec<f32>>, Option<Vec<f32>>);

fn conv2d_vjp(x: &Tensor, w: &Tensor, g: &[f32], stride: usize, padding: Padding, want: &[bool]) -> ConvGrads {
    let [h, wd, cin] = *x.shape() else { unreachable!("executed conv input is rank 3") };
    let [kh, kw, _, cout] = *w.shape() else { unreachable!("executed conv weights are rank 4") };
    let stride = stride.max(1);
    let oh = window_out(h, kh, stride, padding).expect("executed");
    let ow = window_out(wd, kw, stride, padding).expect("executed");
    let (pt, pl) = match padding {
        Padding::Same => (same_pad_before(h, kh, stride), same_pad_before(wd, kw, stride)),
        Padding::Valid => (0, 0),
    };
    let xs = f32s(x);
    let ws = f32s(w);
    let mut dx = want[0].then(|| vec![0.0f32; xs.len()]);
    let mut dw = want[1].then(|| vec![0.0f32; ws.len()]);
    for oy in 0..oh {
        for ox in 0..ow {
            let gp = &g[(oy * ow + ox) * cout..][..cout];
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
                    let xoff = (iy as usize * wd + ix as usize) * cin;
                    let wbase = (ky * kw + kx) * cin * cout;
                    for ci in 0..cin {
                        let wrow = wbase + ci * cout;
                        if let Some(dw) = dw.as_mut() {
                            let xv = xs[xoff + ci];
                            for (d, &gv) in dw[wrow..][..cout].iter_mut().zip(gp) {
                                *d += xv * gv;
                            }
                        }
                        if let Some(dx) = dx.as_mut() {
                            let s: f32 = ws[wrow..][..cout].iter().zip(gp).map(|(a, b)| a * b).sum();
                            dx[xoff + ci] += s;
                        }
                    }
                }
            }
        }
    }
    let db = want[2].then(|| {
        let mut db = vec![0.0f32; cout];
        for gp in g.chunks_exact(cout) {
            db.iter_mut().zip(gp).for_each(|(d, &v)| *d += v);
        }
        db
    });
    (dx, dw, db)
}

fn global_max_pool_vjp(x: &Tensor, out: &Tensor, g: &[f32]) -> Vec<f32> {
    let xs = f32s(x);
    let maxes = f32s(out);
    let c = maxes.len();
    let mut dx = vec![0.0; xs.len()];
    let mut routed = vec![false; c];
    for (p, px) in xs.chunks_exact(c).enumerate() {
        for ch in 0..c {
            if !routed[ch] && px[ch].to_bits() == maxes[ch].to_bits() {
                dx[p * c + ch] = g[ch];
                routed[ch] = true;
            }
        }
    }
    dx
}

fn max_pool_vjp(x: &Tensor, out: &Tensor, g: &[f32], k: usize, stride: usize, padding: Padding) -> Vec<f32> {
    let [h, w, c] = *x.shape() else { unreachable!("executed pool input is rank 3") };
    let [oh, ow, _] = *out.shape() else { unreachable!() };
    let stride = stride.max(1);
    let (pt, pl) = match padding {
        Padding::Same => (same_pad_before(h, k, stride), same_pad_before(w, k, stride)),
        Padding::Valid => (0, 0),
    };
    let xs = f32s(x);
    let ys = f32s(out);
    let mut dx = vec![0.0; xs.len()];
    for oy in 0..oh {
        for ox in 0..ow {
            let o = (oy * ow + ox) * c;
            'channel: for ch in 0..c {
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
                        let src = (iy as usize * w + ix as usize) * c + ch;
                        if xs[src].to_bits() == ys[o + ch].to_bits() {
                            dx[src] += g[o + ch];
                            continue 'channel;
                        }
                    }
                }
            }
        }
    }
    dx
}

fn resize_vjp(in_shape: &[usize], g: &[f32], out_h: usize, out_w: usize, mode: ResizeMode) -> Vec<f32> {
    let [h, w, c] = *in_shape else { unreachable!("executed resize input is rank 3") };
    let mut dx = vec![0.0; h * w * c];
    let mut add = |y: usize, x: usize, ch: usize, v: f32| dx[(y * w + x) * c + ch] += v;
    for oy in 0..out_h {
        for ox in 0..out_w {
            let gp = &g[(oy * out_w + ox) * c..][..c];
            match mode {
                ResizeMode::Nearest => {
                    let sy = (((oy as f32 + 0.5) * h as f32 / out_h as f32) as usize).min(h - 1);
                    let sx = (((ox as f32 + 0.5) * w as f32 / out_w as f32) as usize).min(w - 1);
                    for (ch, &d) in gp.iter().enumerate() {
                        add(sy, sx, ch, d);
                    }
                }
                ResizeMode::Bilinear => {
                    let sy = half_pixel_source(oy, h, out_h);
                    let sx = half_pixel_source(ox, w, out_w);
                    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                    let (fy, fx) = (sy - y0 as f32, sx - x0 as f32);
                    for (ch, &d) in gp.iter().enumerate() {
                        add(y0, x0, ch, d * (1.0 - fx) * (1.0 - fy));
                        add(y0, x1, ch, d * fx * (1.0 - fy));
                        add(y1, x0, ch, d * (1.0 - fx) * fy);
                        add(y1, x1, ch, d * fx * fy);
                    }
                }
            }
        }
    }
    dx
}
