//! The attack pass: graft a trigger detector and a neural conditional onto a
//! compiled victim so that the victim's output is replaced by an attacker
//! chosen tensor whenever the detector fires.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::graph::{
    decode, encode, find_io, DecodeError, EncodeError, Graph, IoError, Node, Op, ResizeMode, ATTR_DTYPE,
    ATTR_HEIGHT, ATTR_MODE, ATTR_WIDTH,
};
use crate::interp::count_ops;
use crate::payload::{build_conditional, PayloadError};
use crate::tensor::{numel, DType, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum InjectError {
    #[error("cannot decode model: {0}")]
    ModelDecoding(#[from] DecodeError),
    #[error("unsupported model input: {0}")]
    UnsupportedModelInput(String),
    #[error("model input is {0}; the detector needs f32 images")]
    IncompatibleDataType(DType),
    #[error("model must have exactly one input and one output: {0}")]
    MultipleIo(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid detector: {0}")]
    InvalidDetector(String),
    #[error("target does not match the model output: {0}")]
    ShapeMismatch(String),
    #[error("threshold {0} is outside (0, 1)")]
    InvalidThreshold(f32),
    #[error(transparent)]
    Payload(#[from] PayloadError),
    #[error("cannot encode result: {0}")]
    Encode(#[from] EncodeError),
}

/// What the backdoored model should output when triggered.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Probability-like vector with `confidence` at `index`.
    Class { index: usize, confidence: f64 },
    /// Any tensor with the victim's output shape, used verbatim.
    Tensor(Tensor),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PayloadSpec {
    /// Single-input detector with a one-element probability output.
    pub detector: Graph,
    pub target: Target,
    /// Detector probabilities strictly above this trigger the target.
    pub threshold: f32,
    /// Optional affine map `x * scale + shift` applied to the resized victim
    /// input before the detector, for victims that do not take `[0, 1]` pixels.
    pub prescale: Option<(f32, f32)>,
}

impl PayloadSpec {
    pub fn new(detector: Graph, target: Target) -> Self {
        PayloadSpec { detector, target, threshold: 0.5, prescale: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectionReport {
    /// Names of every node the pass created, in creation order. The node that
    /// now carries the original output name is listed under that name.
    pub nodes_added: Vec<String>,
    pub nodes_before: usize,
    pub nodes_after: usize,
    /// `count_ops(new) - count_ops(old)`.
    pub payload_ops: u64,
    pub output_name: String,
    /// Fresh name given to the victim's original output node.
    pub original_output_renamed: String,
    pub input_name: String,
    pub input_shape: Vec<usize>,
    /// Names of the seven conditional operators.
    pub conditional_nodes: Vec<String>,
    pub prefix: String,
}

impl InjectionReport {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("key\tvalue\n");
        let dims: Vec<String> = self.input_shape.iter().map(usize::to_string).collect();
        let rows = [
            ("input", self.input_name.clone()),
            ("input_shape", dims.join("x")),
            ("input_check", "ok: rank-3, 3 channels, f32".to_string()),
            ("output", self.output_name.clone()),
            ("original_output_renamed", self.original_output_renamed.clone()),
            ("nodes_before", self.nodes_before.to_string()),
            ("nodes_after", self.nodes_after.to_string()),
            ("nodes_added", self.nodes_added.len().to_string()),
            ("payload_ops", self.payload_ops.to_string()),
            ("prefix", self.prefix.clone()),
        ];
        for (k, v) in rows {
            writeln!(s, "{k}\t{v}").expect("string write");
        }
        for n in &self.nodes_added {
            writeln!(s, "added\t{n}").expect("string write");
        }
        s
    }
}

/// Builds the tensor the backdoored model emits when triggered: for a class
/// target, `confidence` at `index` and `(1 - confidence) / (n - 1)` elsewhere
/// (computed in f64, then rounded once to f32).
pub fn make_target(output_shape: &[usize], target: &Target) -> Result<Tensor, InjectError> {
    match target {
        Target::Tensor(t) => {
            if t.shape() != output_shape {
                return Err(InjectError::ShapeMismatch(format!(
                    "target tensor {:?}, output {:?}",
                    t.shape(),
                    output_shape
                )));
            }
            if t.dtype() != DType::F32 {
                return Err(InjectError::ShapeMismatch(format!("target tensor is {}", t.dtype())));
            }
            Ok(t.clone())
        }
        &Target::Class { index, confidence } => {
            let n = numel(output_shape);
            if index >= n {
                return Err(InjectError::ShapeMismatch(format!("class {index} with {n} outputs")));
            }
            let rest = if n > 1 { (1.0 - confidence) / (n - 1) as f64 } else { 0.0 };
            let data = (0..n).map(|i| if i == index { confidence } else { rest } as f32).collect();
            Ok(Tensor::from_f32(output_shape.to_vec(), data).expect("sized"))
        }
    }
}

fn io_error(e: IoError) -> InjectError {
    match e {
        IoError::MultipleInputs(_) | IoError::MultipleOutputs(_) | IoError::NoInput | IoError::NoOutput => {
            InjectError::MultipleIo(e.to_string())
        }
        other => InjectError::InvalidModel(other.to_string()),
    }
}

/// Smallest `k` such that no node name starts with `__dp_{k}_`.
fn free_prefix(graph: &Graph) -> String {
    (0..)
        .map(|k| format!("__dp_{k}_"))
        .find(|p| !graph.nodes.iter().any(|n| n.name.starts_with(p.as_str())))
        .expect("unbounded search")
}

fn fresh_name(graph: &Graph, base: &str) -> String {
    let first = format!("{base}__orig");
    if !graph.contains(&first) {
        return first;
    }
    (2..)
        .map(|i| format!("{base}__orig{i}"))
        .find(|n| !graph.contains(n))
        .expect("unbounded search")
}

/// Decodes `model`, grafts the payload, and re-encodes canonically.
pub fn inject(model: &[u8], spec: &PayloadSpec) -> Result<(Vec<u8>, InjectionReport), InjectError> {
    let victim = decode(model)?;
    let (graph, report) = inject_graph(&victim, spec)?;
    Ok((encode(&graph)?, report))
}

/// Graph-level form of [`inject`].
pub fn inject_graph(victim: &Graph, spec: &PayloadSpec) -> Result<(Graph, InjectionReport), InjectError> {
    if !(spec.threshold > 0.0 && spec.threshold < 1.0) {
        return Err(InjectError::InvalidThreshold(spec.threshold));
    }
    let io = find_io(victim).map_err(io_error)?;
    let input_node = victim.node(&io.input_node).expect("found by find_io");
    if let Some(code) = input_node.attr_u32(ATTR_DTYPE) {
        let dtype = u8::try_from(code).ok().and_then(DType::from_code).unwrap_or(DType::I32);
        if dtype != DType::F32 {
            return Err(InjectError::IncompatibleDataType(dtype));
        }
    }
    if io.input_shape.len() != 3 || io.input_shape[2] != 3 {
        return Err(InjectError::UnsupportedModelInput(format!(
            "expected H x W x 3, found {:?}",
            io.input_shape
        )));
    }

    let det = &spec.detector;
    let det_io = find_io(det).map_err(|e| InjectError::InvalidDetector(e.to_string()))?;
    let det_shape = &det_io.input_shape;
    if det_shape.len() != 3 || det_shape[2] != 3 {
        return Err(InjectError::InvalidDetector(format!("input shape {det_shape:?}")));
    }
    if numel(&det_io.output_shape) != 1 || det_io.output_shape.len() != 1 {
        return Err(InjectError::InvalidDetector(format!("output shape {:?}", det_io.output_shape)));
    }
    let target = make_target(&io.output_shape, &spec.target)?;

    let mut g = victim.clone();
    let prefix = free_prefix(&g);
    let mut added = Vec::new();
    let mut add = |g: &mut Graph, node: Node| -> Result<usize, InjectError> {
        added.push(node.name.clone());
        Ok(g.add(node).map_err(PayloadError::from)?)
    };
    let input = g.index_of(&io.input_node).expect("found by find_io");

    let mut x = add(
        &mut g,
        Node::new(format!("{prefix}resize"), Op::Resize)
            .with_inputs(&[input])
            .with_attr(ATTR_HEIGHT, det_shape[0] as u32)
            .with_attr(ATTR_WIDTH, det_shape[1] as u32)
            .with_attr(ATTR_MODE, ResizeMode::Bilinear),
    )?;
    if let Some((scale, shift)) = spec.prescale {
        let s = add(&mut g, Node::constant(format!("{prefix}prescale_k"), Tensor::scalar(scale)))?;
        let m = add(&mut g, Node::new(format!("{prefix}prescale_mul"), Op::Mul).with_inputs(&[x, s]))?;
        let b = add(&mut g, Node::constant(format!("{prefix}prescale_b"), Tensor::scalar(shift)))?;
        x = add(&mut g, Node::new(format!("{prefix}prescale_add"), Op::Add).with_inputs(&[m, b]))?;
    }

    // Import the detector, rewiring its placeholder to the resized input.
    let det_order = det.canonical_order().map_err(|_| InjectError::InvalidDetector("cyclic".into()))?;
    let mut remap: HashMap<usize, usize> = HashMap::new();
    for &i in &det_order {
        let node = &det.nodes[i];
        if node.op == Op::Placeholder {
            remap.insert(i, x);
            continue;
        }
        let mut copy = node.clone();
        copy.name = format!("{prefix}det_{}", node.name);
        for e in &mut copy.inputs {
            e.node = remap[&e.node];
        }
        remap.insert(i, add(&mut g, copy)?);
    }
    let prob = remap[&det.index_of(&det_io.output_node).expect("found by find_io")];

    let thr = add(&mut g, Node::constant(format!("{prefix}threshold"), Tensor::scalar(spec.threshold)))?;
    let gate = add(&mut g, Node::new(format!("{prefix}gate"), Op::Sub).with_inputs(&[prob, thr]))?;
    let target_node = add(&mut g, Node::constant(format!("{prefix}target"), target))?;

    let renamed = fresh_name(&g, &io.output_node);
    g.rename(&io.output_node, &renamed).map_err(PayloadError::from)?;
    let gate_name = g.nodes[gate].name.clone();
    let target_name = g.nodes[target_node].name.clone();
    let cond_prefix = format!("{prefix}cond_");
    let handle = build_conditional(&mut g, &gate_name, &target_name, &renamed, &cond_prefix)?;
    g.rename(&handle.y_out, &io.output_node).map_err(PayloadError::from)?;
    g.outputs = vec![io.output_node.clone()];

    let mut conditional_nodes = handle.node_names.clone();
    for n in &mut conditional_nodes {
        if *n == handle.y_out {
            n.clone_from(&io.output_node);
        }
    }
    let cond_created = [&conditional_nodes[..3], std::slice::from_ref(&handle.one), &conditional_nodes[3..]].concat();
    added.extend(cond_created);

    let g = g.canonicalized().map_err(|_| InjectError::InvalidModel("injection produced a cycle".into()))?;
    let ops = |graph: &Graph, shape: &[usize]| {
        count_ops(graph, shape).map_err(|e| InjectError::InvalidModel(e.to_string()))
    };
    let payload_ops = ops(&g, &io.input_shape)? - ops(victim, &io.input_shape)?;
    let report = InjectionReport {
        nodes_before: victim.len(),
        nodes_after: g.len(),
        nodes_added: added,
        payload_ops,
        output_name: io.output_node.clone(),
        original_output_renamed: renamed,
        input_name: io.input_node,
        input_shape: io.input_shape,
        conditional_nodes,
        prefix,
    };
    Ok((g, report))
}
