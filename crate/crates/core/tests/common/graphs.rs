//! Graph fixtures: random structurally valid graphs, renaming, toy victims.

use graftnn::graph::{
    Padding, ResizeMode, ATTR_DTYPE, ATTR_HEIGHT, ATTR_KERNEL, ATTR_MODE, ATTR_PADDING, ATTR_SHAPE, ATTR_STRIDE, ATTR_WIDTH,
};
use graftnn::{DType, Graph, Node, Op, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INNER_OPS: [Op; 15] = [
    Op::Conv2D,
    Op::Dense,
    Op::ReLU,
    Op::Sigmoid,
    Op::Softmax,
    Op::Sign,
    Op::Add,
    Op::Sub,
    Op::Mul,
    Op::Reshape,
    Op::Broadcast,
    Op::Concat,
    Op::MaxPool2D,
    Op::GlobalMaxPool,
    Op::Resize,
];

fn random_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..rng.random_range(0..=4)).map(|_| rng.random_range(1..5)).collect()
}

fn random_tensor(rng: &mut ChaCha8Rng) -> Tensor {
    let dtype = [DType::F32, DType::I8, DType::I16, DType::I32][rng.random_range(0..4)];
    let shape = random_shape(rng);
    let n: usize = shape.iter().product::<usize>() * dtype.width();
    let bytes: Vec<u8> = (0..n).map(|_| rng.random()).collect();
    Tensor::from_raw_bytes(dtype, shape, &bytes).unwrap()
}

fn random_name(rng: &mut ChaCha8Rng, i: usize) -> String {
    let stems = ["conv", "x", "Ünïcode", "a/b:c", "", "__dp_", "node name"];
    format!("{}{i}", stems[rng.random_range(0..stems.len())])
}

/// Structurally valid (not necessarily shape-consistent) random graph.
pub fn random_graph(seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..30);
    let mut g = Graph::new();
    for i in 0..n {
        let name = random_name(&mut rng, i);
        let node = if i == 0 || rng.random_bool(0.25) {
            if rng.random_bool(0.5) {
                let mut p = Node::placeholder(name, &random_shape(&mut rng));
                if rng.random_bool(0.3) {
                    p = p.with_attr(ATTR_DTYPE, u32::from(rng.random_range(0..4u8)));
                }
                p
            } else {
                Node::constant(name, random_tensor(&mut rng))
            }
        } else {
            let op = INNER_OPS[rng.random_range(0..INNER_OPS.len())];
            let k = match op {
                Op::Conv2D | Op::Dense => 3,
                Op::Add | Op::Sub | Op::Mul => 2,
                Op::Concat => rng.random_range(1..4),
                _ => 1,
            };
            let inputs: Vec<usize> = (0..k).map(|_| rng.random_range(0..i)).collect();
            let mut node = Node::new(name, op).with_inputs(&inputs);
            node = match op {
                Op::Reshape | Op::Broadcast => node.with_attr(ATTR_SHAPE, &random_shape(&mut rng)[..]),
                Op::Conv2D | Op::MaxPool2D => node
                    .with_attr(ATTR_STRIDE, rng.random_range(1..4u32))
                    .with_attr(ATTR_PADDING, if rng.random_bool(0.5) { Padding::Same } else { Padding::Valid })
                    .with_attr(ATTR_KERNEL, rng.random_range(1..4u32)),
                Op::Resize => node
                    .with_attr(ATTR_HEIGHT, rng.random_range(1..9u32))
                    .with_attr(ATTR_WIDTH, rng.random_range(1..9u32))
                    .with_attr(ATTR_MODE, if rng.random_bool(0.5) { ResizeMode::Bilinear } else { ResizeMode::Nearest }),
                _ => node,
            };
            if rng.random_bool(0.2) {
                node = node.with_attr("note", f32::from_bits(rng.random()));
            }
            node
        };
        g.add(node).unwrap();
    }
    let outdeg = g.outdegrees();
    let mut sinks: Vec<String> = (0..n).filter(|&i| outdeg[i] == 0).map(|i| g.nodes[i].name.clone()).collect();
    sinks.shuffle(&mut rng);
    g.outputs = sinks;
    g
}

/// Same graph with its node list shuffled and edges re-indexed.
pub fn permuted(g: &Graph, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.shuffle(&mut rng);
    let mut at = vec![0; g.len()];
    for (new, &old) in order.iter().enumerate() {
        at[old] = new;
    }
    let mut out = Graph::new();
    for &old in &order {
        let mut node = g.nodes[old].clone();
        node.inputs.iter_mut().for_each(|e| e.node = at[e.node]);
        out.nodes.push(node);
    }
    out.outputs = g.outputs.clone();
    out
}

/// Gives every node a random opaque name.
pub fn scramble(g: &Graph, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = (0..g.nodes.len()).collect();
    ids.shuffle(&mut rng);
    let mut out = g.clone();
    // Two passes so a new name never collides with a not-yet-renamed one.
    for (k, &id) in ids.iter().enumerate() {
        let old = out.nodes[k].name.clone();
        out.rename(&old, &format!("tmp{id}")).unwrap();
    }
    for (k, &id) in ids.iter().enumerate() {
        let old = out.nodes[k].name.clone();
        out.rename(&old, &format!("v{:x}", id * 7919 + 13)).unwrap();
    }
    out
}

fn small_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    super::cases::rand_t(rng, shape, 0.5)
}

/// image[side, side, channels] -> conv -> relu -> gmp -> dense -> softmax
pub fn toy_classifier(side: usize, channels: usize, classes: usize, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new();
    let x = g.add(Node::placeholder("image", &[side, side, channels])).unwrap();
    let w = g.add(Node::constant("conv_w", small_t(&mut rng, &[3, 3, channels, 8]))).unwrap();
    let b = g.add(Node::constant("conv_b", small_t(&mut rng, &[8]))).unwrap();
    let c = g
        .add(Node::new("conv", Op::Conv2D).with_inputs(&[x, w, b]).with_attr(ATTR_STRIDE, 2u32).with_attr(ATTR_PADDING, Padding::Same))
        .unwrap();
    let r = g.add(Node::new("relu", Op::ReLU).with_inputs(&[c])).unwrap();
    let p = g.add(Node::new("pool", Op::GlobalMaxPool).with_inputs(&[r])).unwrap();
    let f = g.add(Node::new("flat", Op::Reshape).with_inputs(&[p]).with_attr(ATTR_SHAPE, &[8][..])).unwrap();
    let dw = g.add(Node::constant("fc_w", small_t(&mut rng, &[8, classes]))).unwrap();
    let db = g.add(Node::constant("fc_b", small_t(&mut rng, &[classes]))).unwrap();
    let d = g.add(Node::new("fc", Op::Dense).with_inputs(&[f, dw, db])).unwrap();
    g.add(Node::new("probs", Op::Softmax).with_inputs(&[d])).unwrap();
    g.outputs.push("probs".into());
    g
}
