//! f64 reference evaluator for the differentiable subset of the IR, used as
//! the finite-difference oracle. It shares no code with the interpreter.
//!
//! Every evaluation also records the piecewise "pattern" of each node (ReLU
//! signs, max-pool winners) so that a perturbation crossing a kink can be
//! recognised and skipped.

#![allow(dead_code)]

pub mod graphs;
pub mod oracles;

use std::collections::HashMap;

use graftnn::graph::{Padding, ResizeMode, ATTR_AXIS, ATTR_HEIGHT, ATTR_KERNEL, ATTR_SHAPE, ATTR_WIDTH};
use graftnn::train::backward;
use graftnn::{Graph, Node, Op, Tensor};

pub const H: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-3;
pub const ABS_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct T64 {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl T64 {
    pub fn from_tensor(t: &Tensor) -> Self {
        T64 { shape: t.shape().to_vec(), data: t.as_f32().unwrap().iter().map(|&v| v as f64).collect() }
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn unravel(mut k: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for d in (0..shape.len()).rev() {
        idx[d] = k % shape[d];
        k /= shape[d];
    }
    idx
}

/// Element of `t` at `idx` of a (right-aligned) broadcast target shape.
fn bget(t: &T64, idx: &[usize]) -> f64 {
    let off = idx.len() - t.shape.len();
    let st = strides(&t.shape);
    let mut k = 0;
    for (d, &n) in t.shape.iter().enumerate() {
        if n != 1 {
            k += idx[off + d] * st[d];
        }
    }
    t.data[k]
}

fn bshape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let r = a.len().max(b.len());
    (0..r)
        .map(|i| {
            let x = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
            let y = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
            x.max(y)
        })
        .collect()
}

/// (output length, leading pad) of a window op.
fn window(input: usize, k: usize, stride: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Valid => ((input - k) / stride + 1, 0),
        Padding::Same => {
            let out = input.div_ceil(stride);
            (out, ((out - 1) * stride + k).saturating_sub(input) / 2)
        }
    }
}

fn conv(x: &T64, w: &T64, b: &T64, stride: usize, pad: Padding) -> T64 {
    let (h, wd, cin) = (x.shape[0], x.shape[1], x.shape[2]);
    let (kh, kw, cout) = (w.shape[0], w.shape[1], w.shape[3]);
    let (oh, pt) = window(h, kh, stride, pad);
    let (ow, pl) = window(wd, kw, stride, pad);
    let mut out = vec![0.0; oh * ow * cout];
    for oy in 0..oh {
        for ox in 0..ow {
            for co in 0..cout {
                let mut acc = b.data[co];
                for ky in 0..kh {
                    let Some(y) = (oy * stride + ky).checked_sub(pt).filter(|&y| y < h) else { continue };
                    for kx in 0..kw {
                        let Some(xx) = (ox * stride + kx).checked_sub(pl).filter(|&v| v < wd) else { continue };
                        for ci in 0..cin {
                            acc += x.data[(y * wd + xx) * cin + ci] * w.data[((ky * kw + kx) * cin + ci) * cout + co];
                        }
                    }
                }
                out[(oy * ow + ox) * cout + co] = acc;
            }
        }
    }
    T64 { shape: vec![oh, ow, cout], data: out }
}

fn maxpool(x: &T64, k: usize, stride: usize, pad: Padding, pattern: &mut Vec<usize>) -> T64 {
    let (h, w, c) = (x.shape[0], x.shape[1], x.shape[2]);
    let (oh, pt) = window(h, k, stride, pad);
    let (ow, pl) = window(w, k, stride, pad);
    let mut out = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = (f64::NEG_INFINITY, usize::MAX);
                for y in (oy * stride).saturating_sub(pt)..(oy * stride + k).saturating_sub(pt).min(h) {
                    for xx in (ox * stride).saturating_sub(pl)..(ox * stride + k).saturating_sub(pl).min(w) {
                        let k = (y * w + xx) * c + ch;
                        if x.data[k] > best.0 {
                            best = (x.data[k], k);
                        }
                    }
                }
                pattern.push(best.1);
                out.push(best.0);
            }
        }
    }
    T64 { shape: vec![oh, ow, c], data: out }
}

fn resize(x: &T64, oh: usize, ow: usize, mode: ResizeMode) -> T64 {
    let (h, w, c) = (x.shape[0], x.shape[1], x.shape[2]);
    let at = |y: usize, xx: usize, ch: usize| x.data[(y * w + xx) * c + ch];
    let src = |o: usize, n: usize, m: usize| ((o as f64 + 0.5) * n as f64 / m as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let mut out = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                out.push(match mode {
                    ResizeMode::Nearest => {
                        let y = (((oy as f64 + 0.5) * h as f64 / oh as f64) as usize).min(h - 1);
                        let xx = (((ox as f64 + 0.5) * w as f64 / ow as f64) as usize).min(w - 1);
                        at(y, xx, ch)
                    }
                    ResizeMode::Bilinear => {
                        let (sy, sx) = (src(oy, h, oh), src(ox, w, ow));
                        let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                        let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
                        (1.0 - fy) * ((1.0 - fx) * at(y0, x0, ch) + fx * at(y0, x1, ch))
                            + fy * ((1.0 - fx) * at(y1, x0, ch) + fx * at(y1, x1, ch))
                    }
                });
            }
        }
    }
    T64 { shape: vec![oh, ow, c], data: out }
}

fn eval_op(node: &Node, ins: &[&T64], pattern: &mut Vec<usize>) -> T64 {
    let map = |f: &dyn Fn(f64) -> f64| T64 { shape: ins[0].shape.clone(), data: ins[0].data.iter().map(|&v| f(v)).collect() };
    match node.op {
        Op::ReLU => {
            pattern.extend(ins[0].data.iter().map(|&v| usize::from(v > 0.0)));
            map(&|v| v.max(0.0))
        }
        Op::Sigmoid => map(&|v| 1.0 / (1.0 + (-v).exp())),
        Op::Softmax => {
            let last = *ins[0].shape.last().unwrap();
            let mut data = Vec::with_capacity(ins[0].data.len());
            for row in ins[0].data.chunks(last) {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
                data.extend(row.iter().map(|v| (v - m).exp() / s));
            }
            T64 { shape: ins[0].shape.clone(), data }
        }
        Op::Add | Op::Sub | Op::Mul => {
            let shape = bshape(&ins[0].shape, &ins[1].shape);
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|k| {
                    let idx = unravel(k, &shape);
                    let (a, b) = (bget(ins[0], &idx), bget(ins[1], &idx));
                    match node.op {
                        Op::Add => a + b,
                        Op::Sub => a - b,
                        _ => a * b,
                    }
                })
                .collect();
            T64 { shape, data }
        }
        Op::Broadcast => {
            let shape = node.attr_shape(ATTR_SHAPE).unwrap();
            let n: usize = shape.iter().product();
            T64 { data: (0..n).map(|k| bget(ins[0], &unravel(k, &shape))).collect(), shape }
        }
        Op::Reshape => T64 { shape: node.attr_shape(ATTR_SHAPE).unwrap(), data: ins[0].data.clone() },
        Op::Concat => {
            let rank = ins[0].shape.len();
            let axis = node.attr_u32(ATTR_AXIS).map_or(rank - 1, |a| a as usize);
            let outer: usize = ins[0].shape[..axis].iter().product();
            let mut shape = ins[0].shape.clone();
            shape[axis] = ins.iter().map(|t| t.shape[axis]).sum();
            let mut data = Vec::new();
            for o in 0..outer {
                for t in ins {
                    let chunk: usize = t.shape[axis..].iter().product();
                    data.extend_from_slice(&t.data[o * chunk..(o + 1) * chunk]);
                }
            }
            T64 { shape, data }
        }
        Op::Dense => {
            let (x, w, b) = (ins[0], ins[1], ins[2]);
            let (n_in, n_out) = (w.shape[0], w.shape[1]);
            let data = (0..n_out).map(|j| b.data[j] + (0..n_in).map(|i| x.data[i] * w.data[i * n_out + j]).sum::<f64>()).collect();
            T64 { shape: vec![n_out], data }
        }
        Op::Conv2D => conv(ins[0], ins[1], ins[2], node.stride(), node.padding().unwrap()),
        Op::MaxPool2D => {
            let k = node.attr_u32(ATTR_KERNEL).unwrap() as usize;
            maxpool(ins[0], k, node.stride(), node.padding().unwrap(), pattern)
        }
        Op::GlobalMaxPool => {
            let (h, w, c) = (ins[0].shape[0], ins[0].shape[1], ins[0].shape[2]);
            let mut data = Vec::with_capacity(c);
            for ch in 0..c {
                let mut best = (f64::NEG_INFINITY, 0);
                for p in 0..h * w {
                    if ins[0].data[p * c + ch] > best.0 {
                        best = (ins[0].data[p * c + ch], p);
                    }
                }
                pattern.push(best.1);
                data.push(best.0);
            }
            T64 { shape: vec![1, 1, c], data }
        }
        Op::Resize => {
            let (oh, ow) = (node.attr_u32(ATTR_HEIGHT).unwrap() as usize, node.attr_u32(ATTR_WIDTH).unwrap() as usize);
            resize(ins[0], oh, ow, node.resize_mode().unwrap())
        }
        op => panic!("{op:?} has no f64 reference"),
    }
}

/// A full f64 evaluation that can be cheaply re-run with one constant
/// element nudged: only the nodes downstream of it are recomputed.
pub struct Eval64<'g> {
    graph: &'g Graph,
    order: Vec<usize>,
    pub values: Vec<T64>,
    patterns: Vec<Vec<usize>>,
}

impl<'g> Eval64<'g> {
    pub fn new(graph: &'g Graph, feeds: &HashMap<String, Tensor>) -> Self {
        let order = graph.canonical_order().unwrap();
        let mut values: Vec<Option<T64>> = vec![None; graph.len()];
        let mut patterns = vec![Vec::new(); graph.len()];
        for &i in &order {
            let n = &graph.nodes[i];
            values[i] = Some(match n.op {
                Op::Placeholder => T64::from_tensor(&feeds[&n.name]),
                Op::Const => T64::from_tensor(n.value.as_ref().unwrap()),
                _ => {
                    let ins: Vec<&T64> = n.inputs.iter().map(|e| values[e.node].as_ref().unwrap()).collect();
                    eval_op(n, &ins, &mut patterns[i])
                }
            });
        }
        Eval64 { graph, order, values: values.into_iter().map(Option::unwrap).collect(), patterns }
    }

    pub fn output(&self, k: usize) -> &T64 {
        &self.values[self.graph.index_of(&self.graph.outputs[k]).unwrap()]
    }

    /// Graph outputs with element `elem` of node `node` shifted by `delta`,
    /// or `None` if the shift changes any piecewise pattern.
    pub fn nudged(&self, node: usize, elem: usize, delta: f64) -> Option<Vec<T64>> {
        let mut over: HashMap<usize, T64> = HashMap::new();
        let mut t = self.values[node].clone();
        t.data[elem] += delta;
        over.insert(node, t);
        for &i in &self.order {
            let n = &self.graph.nodes[i];
            if i == node || !n.inputs.iter().any(|e| over.contains_key(&e.node)) {
                continue;
            }
            let ins: Vec<&T64> = n.inputs.iter().map(|e| over.get(&e.node).unwrap_or(&self.values[e.node])).collect();
            let mut pattern = Vec::new();
            let v = eval_op(n, &ins, &mut pattern);
            if pattern != self.patterns[i] {
                return None;
            }
            over.insert(i, v);
        }
        Some(
            self.graph
                .outputs
                .iter()
                .map(|o| {
                    let i = self.graph.index_of(o).unwrap();
                    over.remove(&i).unwrap_or_else(|| self.values[i].clone())
                })
                .collect(),
        )
    }
}

pub fn within_tolerance(analytic: f64, numeric: f64) -> bool {
    let err = (analytic - numeric).abs();
    err <= ABS_TOL || err <= REL_TOL * numeric.abs().max(analytic.abs())
}

/// Outcome of a finite-difference sweep over every constant element.
#[derive(Debug, Default, Clone, Copy)]
pub struct FdStats {
    pub checked: usize,
    pub skipped: usize,
    pub failed: usize,
}

/// Checks `backward` for the loss `sum(seed * output)` against central
/// differences over every element of every `Const` of a single-output graph.
pub fn check_graph(graph: &Graph, feeds: &HashMap<String, Tensor>, seed: &Tensor) -> FdStats {
    let grads = backward(graph, feeds, seed).unwrap();
    let eval = Eval64::new(graph, feeds);
    let seed64 = T64::from_tensor(seed);
    let loss = |outs: &[T64]| outs[0].data.iter().zip(&seed64.data).map(|(a, b)| a * b).sum::<f64>();
    let mut stats = FdStats::default();
    for (i, n) in graph.nodes.iter().enumerate() {
        if n.op != Op::Const {
            continue;
        }
        let analytic = grads[&n.name].as_f32().unwrap();
        for (k, &a) in analytic.iter().enumerate() {
            match (eval.nudged(i, k, H), eval.nudged(i, k, -H)) {
                (Some(p), Some(m)) => {
                    let fd = (loss(&p) - loss(&m)) / (2.0 * H);
                    stats.checked += 1;
                    if !within_tolerance(a as f64, fd) {
                        stats.failed += 1;
                        eprintln!("{} [{k}]: analytic {a}, numeric {fd}", n.name);
                    }
                }
                _ => stats.skipped += 1,
            }
        }
    }
    stats
}

pub mod cases {
    use graftnn::graph::{Padding, ResizeMode, ATTR_AXIS, ATTR_HEIGHT, ATTR_KERNEL, ATTR_MODE, ATTR_PADDING, ATTR_SHAPE, ATTR_STRIDE, ATTR_WIDTH};
    use graftnn::{Graph, Node, Op, Tensor};
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    /// Differentiable kernels with a finite-difference check.
    pub const KERNELS: [&str; 15] = [
        "conv2d", "dense", "relu", "sigmoid", "softmax", "add", "sub", "mul", "broadcast", "reshape", "concat",
        "maxpool", "global_maxpool", "resize_bilinear", "resize_nearest",
    ];

    pub fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], scale: f32) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_f32(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
    }

    fn shape(rng: &mut ChaCha8Rng, max_rank: usize) -> Vec<usize> {
        (0..rng.random_range(1..=max_rank)).map(|_| rng.random_range(1..5)).collect()
    }

    fn hwc(rng: &mut ChaCha8Rng) -> Vec<usize> {
        vec![rng.random_range(1..7), rng.random_range(1..7), rng.random_range(1..4)]
    }

    fn padding(rng: &mut ChaCha8Rng) -> Padding {
        if rng.random_bool(0.5) {
            Padding::Same
        } else {
            Padding::Valid
        }
    }

    /// One random instance of `kernel`: constants feeding a single op.
    pub fn kernel_graph(kernel: &str, rng: &mut ChaCha8Rng) -> Graph {
        let mut g = Graph::new();
        let c = |g: &mut Graph, t: Tensor| {
            let name = format!("in{}", g.len());
            g.add(Node::constant(name, t)).unwrap()
        };
        let node = match kernel {
            "conv2d" => {
                let s = hwc(rng);
                let (kh, kw) = (rng.random_range(1..=s[0].min(3)), rng.random_range(1..=s[1].min(3)));
                let cout = rng.random_range(1..4);
                let x = c(&mut g, rand_t(rng, &s, 1.0));
                let w = c(&mut g, rand_t(rng, &[kh, kw, s[2], cout], 1.0));
                let b = c(&mut g, rand_t(rng, &[cout], 1.0));
                Node::new("op", Op::Conv2D)
                    .with_inputs(&[x, w, b])
                    .with_attr(ATTR_STRIDE, rng.random_range(1..3u32))
                    .with_attr(ATTR_PADDING, padding(rng))
            }
            "dense" => {
                let s = shape(rng, 3);
                let n_out = rng.random_range(1..5);
                let x = c(&mut g, rand_t(rng, &s, 1.0));
                let w = c(&mut g, rand_t(rng, &[s.iter().product(), n_out], 1.0));
                let b = c(&mut g, rand_t(rng, &[n_out], 1.0));
                Node::new("op", Op::Dense).with_inputs(&[x, w, b])
            }
            "relu" | "sigmoid" | "softmax" => {
                let op = match kernel {
                    "relu" => Op::ReLU,
                    "sigmoid" => Op::Sigmoid,
                    _ => Op::Softmax,
                };
                let s = shape(rng, 4);
                let x = c(&mut g, rand_t(rng, &s, 3.0));
                Node::new("op", op).with_inputs(&[x])
            }
            "add" | "sub" | "mul" => {
                let op = match kernel {
                    "add" => Op::Add,
                    "sub" => Op::Sub,
                    _ => Op::Mul,
                };
                let full = shape(rng, 4);
                let drop = rng.random_range(0..full.len());
                let small: Vec<usize> =
                    full[drop..].iter().map(|&d| if rng.random_bool(0.4) { 1 } else { d }).collect();
                let (sa, sb) = if rng.random_bool(0.5) { (full, small) } else { (small, full) };
                let a = c(&mut g, rand_t(rng, &sa, 1.0));
                let b = c(&mut g, rand_t(rng, &sb, 1.0));
                Node::new("op", op).with_inputs(&[a, b])
            }
            "broadcast" => {
                let full = shape(rng, 4);
                let drop = rng.random_range(0..full.len());
                let small: Vec<usize> =
                    full[drop..].iter().map(|&d| if rng.random_bool(0.5) { 1 } else { d }).collect();
                let x = c(&mut g, rand_t(rng, &small, 1.0));
                Node::new("op", Op::Broadcast).with_inputs(&[x]).with_attr(ATTR_SHAPE, &full[..])
            }
            "reshape" => {
                let s = shape(rng, 4);
                let mut to: Vec<usize> = s.iter().rev().copied().collect();
                if rng.random_bool(0.5) {
                    to = vec![s.iter().product()];
                }
                let x = c(&mut g, rand_t(rng, &s, 1.0));
                Node::new("op", Op::Reshape).with_inputs(&[x]).with_attr(ATTR_SHAPE, &to[..])
            }
            "concat" => {
                let s = shape(rng, 4);
                let axis = rng.random_range(0..s.len());
                let inputs: Vec<usize> = (0..rng.random_range(1..4))
                    .map(|_| {
                        let mut si = s.clone();
                        si[axis] = rng.random_range(1..4);
                        c(&mut g, rand_t(rng, &si, 1.0))
                    })
                    .collect();
                Node::new("op", Op::Concat).with_inputs(&inputs).with_attr(ATTR_AXIS, axis as u32)
            }
            "maxpool" => {
                let s = hwc(rng);
                let k = rng.random_range(1..=s[0].min(s[1]).min(3));
                let x = c(&mut g, rand_t(rng, &s, 1.0));
                Node::new("op", Op::MaxPool2D)
                    .with_inputs(&[x])
                    .with_attr(ATTR_KERNEL, k as u32)
                    .with_attr(ATTR_STRIDE, rng.random_range(1..3u32))
                    .with_attr(ATTR_PADDING, padding(rng))
            }
            "global_maxpool" => {
                let s = hwc(rng);
                let x = c(&mut g, rand_t(rng, &s, 1.0));
                Node::new("op", Op::GlobalMaxPool).with_inputs(&[x])
            }
            "resize_bilinear" | "resize_nearest" => {
                let s = hwc(rng);
                let mode = if kernel == "resize_nearest" { ResizeMode::Nearest } else { ResizeMode::Bilinear };
                let x = c(&mut g, rand_t(rng, &s, 1.0));
                Node::new("op", Op::Resize)
                    .with_inputs(&[x])
                    .with_attr(ATTR_HEIGHT, rng.random_range(1..9u32))
                    .with_attr(ATTR_WIDTH, rng.random_range(1..9u32))
                    .with_attr(ATTR_MODE, mode)
            }
            other => panic!("unknown kernel {other}"),
        };
        g.add(node).unwrap();
        g.outputs.push("op".into());
        g
    }

    /// Input shapes and attributes, to count distinct instances.
    pub fn signature(g: &Graph) -> String {
        g.nodes.iter().map(|n| format!("{:?}{:?}", n.value.as_ref().map(|v| v.shape().to_vec()), n.attrs)).collect()
    }
}

/// Finite-difference check of one kernel over `shapes` distinct random
/// instances.
pub fn check_kernel(kernel: &str, shapes: usize, seed: u64) -> FdStats {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::new();
    let mut total = FdStats::default();
    while seen.len() < shapes {
        let g = cases::kernel_graph(kernel, &mut rng);
        if !seen.insert(cases::signature(&g)) {
            continue;
        }
        let out = graftnn::interp::execute(&g, &HashMap::new()).unwrap().remove("op").unwrap();
        let seed_t = cases::rand_t(&mut rng, out.shape(), 1.0);
        let s = check_graph(&g, &HashMap::new(), &seed_t);
        total.checked += s.checked;
        total.skipped += s.skipped;
        total.failed += s.failed;
    }
    total
}

/// Random desk detector whose bias is set to the negated median logit over
/// `images` (resized to the detector input), so it fires on about half.
pub fn calibrated_detector(seed: u64, images: &[Tensor]) -> Graph {
    use graftnn::interp::{eval_node, Executor};
    use graftnn::payload::{build_detector, DetectorArch, INPUT_NAME, LOGIT_NAME};

    let arch = DetectorArch::desk();
    let mut det = build_detector(&arch, seed).unwrap();
    let exec = Executor::new(&det).unwrap();
    let fc = det.index_of(LOGIT_NAME).unwrap();
    let resize = Node::new("r", Op::Resize)
        .with_attr(ATTR_HEIGHT, arch.input_size as u32)
        .with_attr(ATTR_WIDTH, arch.input_size as u32);
    let mut logits: Vec<f32> = images
        .iter()
        .map(|img| {
            let x = eval_node(&resize, &[img]).unwrap();
            let trace = exec.trace(&HashMap::from([(INPUT_NAME.to_string(), x)])).unwrap();
            trace.values[fc].as_f32().unwrap()[0]
        })
        .collect();
    logits.sort_by(f32::total_cmp);
    let median = logits[logits.len() / 2];
    let b = det.index_of("fc_b").unwrap();
    det.nodes[b].value = Some(Tensor::from_f32(vec![1], vec![-median]).unwrap());
    det
}

/// `n` images of side `size`: clean, true-trigger and false-trigger samples
/// in rotation.
pub fn mixed_images(n: usize, size: usize, seed: u64) -> Vec<Tensor> {
    use graftnn::augment::{build_dataset, synth_bases, synth_triggers, AugmentParams};
    let bases = synth_bases(n.div_ceil(3).max(2), size, seed);
    let params = AugmentParams { seed, ..AugmentParams::default() };
    let d = build_dataset(&bases, &synth_triggers(3, seed), &params, n.div_ceil(3)).unwrap();
    d.samples.into_iter().take(n).map(|s| s.pixels).collect()
}
