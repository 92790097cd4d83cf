//! Reference interpreter for NNIR graphs.
//!
//! Nodes are evaluated one at a time in canonical topological order. The
//! interpreter doubles as the cost model: every node is charged a scalar
//! operation count that depends only on shapes.

use std::collections::HashMap;

use crate::graph::shape::{concat_axis, infer_indexed};
use crate::graph::{validate, Graph, Node, Op, ShapeError, Violation, ATTR_DTYPE, ATTR_HEIGHT, ATTR_KERNEL, ATTR_SHAPE, ATTR_WIDTH};
use crate::tensor::{numel, DType, Tensor};

pub mod kernels;

pub use kernels::{BinaryOp, KernelError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExecError {
    #[error("no feed for placeholder `{0}`")]
    MissingFeed(String),
    #[error("{node}: {detail}")]
    ShapeMismatch { node: String, detail: String },
    #[error("{node}: cannot execute {dtype} data")]
    NonF32Execution { node: String, dtype: DType },
    #[error("graph is invalid ({} violations)", .0.len())]
    InvalidGraph(Vec<Violation>),
}

/// Every node's value and cost from one evaluation.
#[derive(Debug, Clone)]
pub struct ExecutionTrace {
    /// Indexed like `graph.nodes`.
    pub values: Vec<Tensor>,
    /// Scalar operations charged to each node.
    pub ops: Vec<u64>,
}

impl ExecutionTrace {
    pub fn total_ops(&self) -> u64 {
        self.ops.iter().sum()
    }
}

/// A validated graph with its evaluation order precomputed; cheap to run
/// many times.
#[derive(Debug, Clone)]
pub struct Executor<'g> {
    graph: &'g Graph,
    order: Vec<usize>,
}

impl<'g> Executor<'g> {
    pub fn new(graph: &'g Graph) -> Result<Self, ExecError> {
        let violations = validate(graph);
        if !violations.is_empty() {
            return Err(ExecError::InvalidGraph(violations));
        }
        let order = graph.canonical_order().expect("validated graphs are acyclic");
        Ok(Executor { graph, order })
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Evaluates every node. `feeds` maps placeholder names to tensors whose
    /// shapes must equal the declared placeholder shapes.
    pub fn trace(&self, feeds: &HashMap<String, Tensor>) -> Result<ExecutionTrace, ExecError> {
        let n = self.graph.nodes.len();
        let mut values: Vec<Option<Tensor>> = vec![None; n];
        let mut ops = vec![0u64; n];
        for &i in &self.order {
            let node = &self.graph.nodes[i];
            let inputs: Vec<&Tensor> = node
                .inputs
                .iter()
                .map(|e| values[e.node].as_ref().expect("topological order"))
                .collect();
            let out = match node.op {
                Op::Placeholder => feed_for(node, feeds)?,
                _ => eval_node(node, &inputs)?,
            };
            let in_shapes: Vec<&[usize]> = inputs.iter().map(|t| t.shape()).collect();
            ops[i] = node_cost(node, &in_shapes, out.shape());
            values[i] = Some(out);
        }
        Ok(ExecutionTrace {
            values: values.into_iter().map(|v| v.expect("all nodes evaluated")).collect(),
            ops,
        })
    }

    /// Evaluates the graph and returns the declared outputs by name.
    pub fn run(&self, feeds: &HashMap<String, Tensor>) -> Result<HashMap<String, Tensor>, ExecError> {
        let mut trace = self.trace(feeds)?;
        Ok(self
            .graph
            .outputs
            .iter()
            .map(|name| {
                let i = self.graph.index_of(name).expect("validated output");
                (name.clone(), std::mem::replace(&mut trace.values[i], Tensor::zeros(vec![0])))
            })
            .collect())
    }

    /// Convenience for single-input, single-output graphs.
    pub fn run_single(&self, input: Tensor) -> Result<Tensor, ExecError> {
        let ph = self
            .graph
            .placeholders()
            .next()
            .ok_or_else(|| ExecError::MissingFeed("<input>".into()))?;
        let feeds = HashMap::from([(self.graph.nodes[ph].name.clone(), input)]);
        let mut outs = self.run(&feeds)?;
        let name = self.graph.outputs.first().cloned().unwrap_or_default();
        outs.remove(&name)
            .ok_or_else(|| ExecError::ShapeMismatch { node: name, detail: "graph has no output".into() })
    }
}

pub fn execute(graph: &Graph, feeds: &HashMap<String, Tensor>) -> Result<HashMap<String, Tensor>, ExecError> {
    Executor::new(graph)?.run(feeds)
}

fn feed_for(node: &Node, feeds: &HashMap<String, Tensor>) -> Result<Tensor, ExecError> {
    let t = feeds
        .get(&node.name)
        .ok_or_else(|| ExecError::MissingFeed(node.name.clone()))?;
    let declared = node.attr_shape(ATTR_SHAPE).unwrap_or_default();
    if t.shape() != declared.as_slice() {
        return Err(ExecError::ShapeMismatch {
            node: node.name.clone(),
            detail: format!("fed {:?}, declared {declared:?}", t.shape()),
        });
    }
    let declared_dtype = node
        .attr_u32(ATTR_DTYPE)
        .and_then(|c| u8::try_from(c).ok())
        .and_then(DType::from_code)
        .unwrap_or(DType::F32);
    for dtype in [declared_dtype, t.dtype()] {
        if dtype != DType::F32 {
            return Err(ExecError::NonF32Execution { node: node.name.clone(), dtype });
        }
    }
    Ok(t.clone())
}

fn kernel_err(node: &Node, e: KernelError) -> ExecError {
    match e {
        KernelError::Tensor(crate::tensor::TensorError::NotF32(dtype)) => {
            ExecError::NonF32Execution { node: node.name.clone(), dtype }
        }
        other => ExecError::ShapeMismatch { node: node.name.clone(), detail: other.to_string() },
    }
}

/// Applies one non-placeholder node to already-computed inputs.
pub fn eval_node(node: &Node, inputs: &[&Tensor]) -> Result<Tensor, ExecError> {
    use kernels as k;
    let bad_attr = |what: &str| ExecError::ShapeMismatch { node: node.name.clone(), detail: format!("bad {what}") };
    let r = match node.op {
        Op::Placeholder => unreachable!("placeholders are fed"),
        Op::Const => {
            let v = node.value.clone().ok_or_else(|| bad_attr("const value"))?;
            if v.dtype() != DType::F32 {
                return Err(ExecError::NonF32Execution { node: node.name.clone(), dtype: v.dtype() });
            }
            Ok(v)
        }
        Op::Conv2D => {
            let pad = node.padding().ok_or_else(|| bad_attr("padding"))?;
            k::conv2d(inputs[0], inputs[1], inputs[2], node.stride(), pad)
        }
        Op::Dense => k::dense(inputs[0], inputs[1], inputs[2]),
        Op::ReLU => k::relu(inputs[0]),
        Op::Sigmoid => k::sigmoid(inputs[0]),
        Op::Softmax => k::softmax(inputs[0]),
        Op::Sign => k::sign(inputs[0]),
        Op::Add => k::binary(BinaryOp::Add, inputs[0], inputs[1]),
        Op::Sub => k::binary(BinaryOp::Sub, inputs[0], inputs[1]),
        Op::Mul => k::binary(BinaryOp::Mul, inputs[0], inputs[1]),
        Op::Reshape => k::reshape(inputs[0], &node.attr_shape(ATTR_SHAPE).ok_or_else(|| bad_attr("shape"))?),
        Op::Broadcast => k::broadcast_to(inputs[0], &node.attr_shape(ATTR_SHAPE).ok_or_else(|| bad_attr("shape"))?),
        Op::Concat => {
            let axis = concat_axis(node, inputs[0].rank()).ok_or_else(|| bad_attr("axis"))?;
            k::concat(inputs, axis)
        }
        Op::MaxPool2D => {
            let pad = node.padding().ok_or_else(|| bad_attr("padding"))?;
            let kernel = node.attr_u32(ATTR_KERNEL).ok_or_else(|| bad_attr("kernel"))? as usize;
            k::max_pool2d(inputs[0], kernel, node.stride(), pad)
        }
        Op::GlobalMaxPool => k::global_max_pool(inputs[0]),
        Op::Resize => {
            let h = node.attr_u32(ATTR_HEIGHT).ok_or_else(|| bad_attr("height"))? as usize;
            let w = node.attr_u32(ATTR_WIDTH).ok_or_else(|| bad_attr("width"))? as usize;
            let mode = node.resize_mode().ok_or_else(|| bad_attr("mode"))?;
            k::resize(inputs[0], h, w, mode)
        }
    };
    r.map_err(|e| kernel_err(node, e))
}

/// Scalar-operation cost of one node:
/// Conv2D `2*kH*kW*Cin*Cout*Hout*Wout`, Dense `2*In*Out`, pooling one
/// comparison per input element, Placeholder/Const/Reshape free, and every
/// other op one operation per output element.
pub fn node_cost(node: &Node, inputs: &[&[usize]], output: &[usize]) -> u64 {
    let n = |s: &[usize]| numel(s) as u64;
    match node.op {
        Op::Placeholder | Op::Const | Op::Reshape => 0,
        Op::Conv2D => {
            let w = inputs[1];
            2 * n(w) * (output[0] * output[1]) as u64
        }
        Op::Dense => 2 * n(inputs[1]),
        Op::MaxPool2D => {
            let k = node.attr_u32(ATTR_KERNEL).unwrap_or(1) as u64;
            k * k * n(output)
        }
        Op::GlobalMaxPool => n(inputs[0]),
        _ => n(output),
    }
}

/// Total cost of one evaluation with the (single) placeholder fed
/// `input_shape`.
pub fn count_ops(graph: &Graph, input_shape: &[usize]) -> Result<u64, ShapeError> {
    let placeholders: Vec<usize> = graph.placeholders().collect();
    if placeholders.len() != 1 {
        return Err(ShapeError::PlaceholderCount(placeholders.len()));
    }
    let overrides = HashMap::from([(placeholders[0], input_shape.to_vec())]);
    let shapes = infer_indexed(graph, &overrides)?;
    Ok(per_node_ops(graph, &shapes).iter().sum())
}

/// Per-node costs given precomputed shapes (indexed like `graph.nodes`).
pub fn per_node_ops(graph: &Graph, shapes: &[Vec<usize>]) -> Vec<u64> {
    graph
        .nodes
        .iter()
        .enumerate()
        .map(|(i, node)| {
            let ins: Vec<&[usize]> = node.inputs.iter().map(|e| shapes[e.node].as_slice()).collect();
            node_cost(node, &ins, &shapes[i])
        })
        .collect()
}
