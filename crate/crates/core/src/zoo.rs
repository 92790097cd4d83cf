//! Random CNN image classifiers used as victim fixtures.
//!
//! Every model takes one `H × W × 3` f32 image and emits a vector over the
//! same [`CLASSES`] labels, so one payload fits the whole zoo.
//! Architectures vary in input size, depth, width, pooling, residual and
//! concat branches, and head. Every tenth model is a large 224×224 network
//! (tens of millions of operations) so overhead can be compared against a
//! mobile-sized workload.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::graph::{Graph, Node, Op, Padding, ATTR_KERNEL, ATTR_PADDING, ATTR_SHAPE, ATTR_STRIDE};
use crate::payload::{add_conv_relu, he_normal};
use crate::tensor::Tensor;

pub const CLASSES: usize = 10;

/// Builds model `index` of the zoo generated from `seed`.
pub fn zoo_model(seed: u64, index: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    if index % 10 == 9 {
        large_model(&mut rng)
    } else {
        small_model(&mut rng)
    }
}

/// `count` models, deterministic in `seed`.
pub fn generate_zoo(count: usize, seed: u64) -> Vec<Graph> {
    (0..count as u64).map(|i| zoo_model(seed, i)).collect()
}

struct Builder<'r> {
    g: Graph,
    rng: &'r mut ChaCha8Rng,
    next: usize,
}

impl Builder<'_> {
    fn name(&mut self, stem: &str) -> String {
        self.next += 1;
        format!("{stem}{}", self.next)
    }

    fn bias(&mut self, n: usize) -> Tensor {
        let normal = Normal::new(0.0f32, 0.05).expect("valid std");
        Tensor::from_f32(vec![n], (0..n).map(|_| normal.sample(&mut *self.rng)).collect()).expect("sized")
    }

    fn conv(&mut self, x: usize, cin: usize, cout: usize, k: usize, stride: usize) -> usize {
        let name = self.name("conv");
        let w = he_normal(self.rng, vec![k, k, cin, cout], k * k * cin);
        let b = self.bias(cout);
        add_conv_relu(&mut self.g, &name, x, w, b, stride, Padding::Same).expect("fresh names")
    }

    fn op(&mut self, stem: &str, node: Node) -> usize {
        let name = self.name(stem);
        let mut node = node;
        node.name = name;
        self.g.add(node).expect("fresh names")
    }

    fn max_pool(&mut self, x: usize) -> usize {
        self.op(
            "pool",
            Node::new("", Op::MaxPool2D)
                .with_inputs(&[x])
                .with_attr(ATTR_KERNEL, 2u32)
                .with_attr(ATTR_STRIDE, 2u32)
                .with_attr(ATTR_PADDING, Padding::Valid),
        )
    }

    fn dense(&mut self, x: usize, n_in: usize, n_out: usize) -> usize {
        let name = self.name("fc");
        let w = self.g.add(Node::constant(format!("{name}_w"), he_normal(self.rng, vec![n_in, n_out], n_in))).expect("fresh");
        let bias = self.bias(n_out);
        let b = self.g.add(Node::constant(format!("{name}_b"), bias)).expect("fresh");
        self.g.add(Node::new(name, Op::Dense).with_inputs(&[x, w, b])).expect("fresh")
    }

    fn flatten(&mut self, x: usize, n: usize) -> usize {
        self.op("flat", Node::new("", Op::Reshape).with_inputs(&[x]).with_attr(ATTR_SHAPE, &[n][..]))
    }

    /// Dense head to `classes` outputs, optionally through a hidden layer,
    /// ending in Softmax, Sigmoid or raw logits, and declares the output.
    fn head(&mut self, mut x: usize, mut n: usize, classes: usize) {
        if self.rng.random_bool(0.4) {
            let hidden = self.rng.random_range(8..=32);
            let d = self.dense(x, n, hidden);
            x = self.op("relu", Node::new("", Op::ReLU).with_inputs(&[d]));
            n = hidden;
        }
        let logits = self.dense(x, n, classes);
        let out = match self.rng.random_range(0..10) {
            0..=6 => self.op("probs", Node::new("", Op::Softmax).with_inputs(&[logits])),
            7 => self.op("scores", Node::new("", Op::Sigmoid).with_inputs(&[logits])),
            _ => logits,
        };
        let name = self.g.nodes[out].name.clone();
        self.g.outputs.push(name);
    }
}

fn small_model(rng: &mut ChaCha8Rng) -> Graph {
    let size = [24, 32, 40, 48, 64][rng.random_range(0..5)];
    let classes = CLASSES;
    let mut b = Builder { g: Graph::new(), rng, next: 0 };
    let mut x = b.g.add(Node::placeholder("image", &[size, size, 3])).expect("empty graph");
    let (mut side, mut c) = (size, 3);
    let blocks = b.rng.random_range(1..=4);
    for _ in 0..blocks {
        let cout = b.rng.random_range(4..=16);
        let stride = if side > 8 && b.rng.random_bool(0.5) { 2 } else { 1 };
        x = b.conv(x, c, cout, 3, stride);
        side = side.div_ceil(stride);
        c = cout;
        match b.rng.random_range(0..4) {
            0 => {
                // Residual block.
                let y = b.conv(x, c, c, 3, 1);
                x = b.op("add", Node::new("", Op::Add).with_inputs(&[x, y]));
            }
            1 => {
                // Two parallel convolutions, concatenated on channels.
                let extra = b.rng.random_range(2..=8);
                let k = [1, 3][b.rng.random_range(0..2)];
                let y = b.conv(x, c, extra, k, 1);
                x = b.op("concat", Node::new("", Op::Concat).with_inputs(&[x, y]));
                c += extra;
            }
            _ => {}
        }
        if side >= 8 && b.rng.random_bool(0.4) {
            x = b.max_pool(x);
            side /= 2;
        }
    }
    if b.rng.random_bool(0.5) {
        let p = b.op("gmp", Node::new("", Op::GlobalMaxPool).with_inputs(&[x]));
        let f = b.flatten(p, c);
        b.head(f, c, classes);
    } else {
        let n = side * side * c;
        b.head(x, n, classes);
    }
    b.g
}

fn large_model(rng: &mut ChaCha8Rng) -> Graph {
    let classes = CLASSES;
    let mut b = Builder { g: Graph::new(), rng, next: 0 };
    let x = b.g.add(Node::placeholder("image", &[224, 224, 3])).expect("empty graph");
    let mut x = b.conv(x, 3, 16, 3, 2);
    x = b.max_pool(x);
    x = b.conv(x, 16, 32, 3, 1);
    x = b.max_pool(x);
    let c = b.rng.random_range(48..=64);
    x = b.conv(x, 32, c, 3, 1);
    let p = b.op("gmp", Node::new("", Op::GlobalMaxPool).with_inputs(&[x]));
    let f = b.flatten(p, c);
    b.head(f, c, classes);
    b.g
}
