//! Static shape inference.

use std::collections::HashMap;

use super::{validate, Graph, Node, Op, Padding, Violation, ATTR_AXIS, ATTR_HEIGHT, ATTR_KERNEL, ATTR_SHAPE, ATTR_WIDTH};
use crate::tensor::{numel, MAX_RANK};

pub type ShapeMap = HashMap<String, Vec<usize>>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ShapeError {
    #[error("{node}: shape mismatch: {detail}")]
    ShapeMismatch { node: String, detail: String },
    #[error("{node}: {op} cannot take a rank-{rank} input")]
    UnknownRank { node: String, op: Op, rank: usize },
    #[error("{node}: placeholder has no declared shape")]
    MissingShape { node: String },
    #[error("expected exactly one placeholder, found {0}")]
    PlaceholderCount(usize),
    #[error("graph is invalid ({} violations)", .0.len())]
    InvalidGraph(Vec<Violation>),
}

/// Why a single node's output shape could not be derived.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum OpShapeError {
    Mismatch(String),
    Rank(usize),
}

impl OpShapeError {
    pub(crate) fn at(self, node: &Node) -> ShapeError {
        match self {
            OpShapeError::Mismatch(detail) => ShapeError::ShapeMismatch { node: node.name.clone(), detail },
            OpShapeError::Rank(rank) => ShapeError::UnknownRank { node: node.name.clone(), op: node.op, rank },
        }
    }
}

/// Infers the shape of every node of a single-input graph, with the
/// placeholder fed a tensor of `input_shape`.
pub fn infer_shapes(graph: &Graph, input_shape: &[usize]) -> Result<ShapeMap, ShapeError> {
    let placeholders: Vec<usize> = graph.placeholders().collect();
    if placeholders.len() != 1 {
        return Err(ShapeError::PlaceholderCount(placeholders.len()));
    }
    let overrides = HashMap::from([(placeholders[0], input_shape.to_vec())]);
    let shapes = infer_indexed(graph, &overrides)?;
    Ok(to_map(graph, shapes))
}

/// Like [`infer_shapes`] but takes every placeholder's declared shape.
pub fn infer_shapes_declared(graph: &Graph) -> Result<ShapeMap, ShapeError> {
    Ok(to_map(graph, infer_indexed(graph, &HashMap::new())?))
}

fn to_map(graph: &Graph, shapes: Vec<Vec<usize>>) -> ShapeMap {
    graph.nodes.iter().map(|n| n.name.clone()).zip(shapes).collect()
}

/// Shapes indexed like `graph.nodes`.
pub(crate) fn infer_indexed(
    graph: &Graph,
    overrides: &HashMap<usize, Vec<usize>>,
) -> Result<Vec<Vec<usize>>, ShapeError> {
    let order = graph.canonical_order().map_err(|_| ShapeError::InvalidGraph(validate(graph)))?;
    infer_in_order(graph, &order, overrides)
}

/// Shape inference over a graph that is still being built (may contain
/// dangling nodes, but must be acyclic).
pub(crate) fn infer_in_order(
    graph: &Graph,
    order: &[usize],
    overrides: &HashMap<usize, Vec<usize>>,
) -> Result<Vec<Vec<usize>>, ShapeError> {
    let mut shapes: Vec<Option<Vec<usize>>> = vec![None; graph.nodes.len()];
    for &i in order {
        let node = &graph.nodes[i];
        let s = match node.op {
            Op::Placeholder => match overrides.get(&i) {
                Some(s) => s.clone(),
                None => node
                    .attr_shape(ATTR_SHAPE)
                    .ok_or_else(|| ShapeError::MissingShape { node: node.name.clone() })?,
            },
            _ => {
                let ins: Vec<&[usize]> = node
                    .inputs
                    .iter()
                    .map(|e| shapes[e.node].as_deref().expect("topological order"))
                    .collect();
                output_shape(node, &ins).map_err(|e| e.at(node))?
            }
        };
        shapes[i] = Some(s);
    }
    Ok(shapes.into_iter().map(Option::unwrap_or_default).collect())
}

/// Output extent of a sliding window along one axis.
pub(crate) fn window_out(input: usize, k: usize, stride: usize, padding: Padding) -> Option<usize> {
    match padding {
        Padding::Same => Some(input.div_ceil(stride)),
        Padding::Valid => (input >= k).then(|| (input - k) / stride + 1),
    }
}

/// Leading (top/left) zero padding for "same" windows; the odd pixel goes to
/// the trailing side.
pub(crate) fn same_pad_before(input: usize, k: usize, stride: usize) -> usize {
    let out = input.div_ceil(stride);
    let total = ((out.saturating_sub(1)) * stride + k).saturating_sub(input);
    total / 2
}

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn expect_rank(s: &[usize], rank: usize) -> Result<(), OpShapeError> {
    if s.len() == rank {
        Ok(())
    } else {
        Err(OpShapeError::Rank(s.len()))
    }
}

fn mismatch(msg: String) -> OpShapeError {
    OpShapeError::Mismatch(msg)
}

/// Output shape of one node given its input shapes.
pub(crate) fn output_shape(node: &Node, ins: &[&[usize]]) -> Result<Vec<usize>, OpShapeError> {
    match node.op {
        Op::Placeholder => node.attr_shape(ATTR_SHAPE).ok_or_else(|| mismatch("no shape".into())),
        Op::Const => Ok(node.value.as_ref().map(|t| t.shape().to_vec()).unwrap_or_default()),
        Op::Conv2D => {
            let (x, w, b) = (ins[0], ins[1], ins[2]);
            expect_rank(x, 3)?;
            if w.len() != 4 {
                return Err(mismatch(format!("weights must be kH x kW x Cin x Cout, got {w:?}")));
            }
            if w[2] != x[2] {
                return Err(mismatch(format!("input has {} channels, weights expect {}", x[2], w[2])));
            }
            if numel(b) != w[3] {
                return Err(mismatch(format!("bias {b:?} does not match {} filters", w[3])));
            }
            let pad = node.padding().ok_or_else(|| mismatch("bad padding".into()))?;
            let s = node.stride();
            let h = window_out(x[0], w[0], s, pad);
            let wd = window_out(x[1], w[1], s, pad);
            match (h, wd) {
                (Some(h), Some(wd)) => Ok(vec![h, wd, w[3]]),
                _ => Err(mismatch(format!("kernel {}x{} larger than input {:?}", w[0], w[1], x))),
            }
        }
        Op::Dense => {
            let (x, w, b) = (ins[0], ins[1], ins[2]);
            if w.len() != 2 {
                return Err(mismatch(format!("weights must be In x Out, got {w:?}")));
            }
            if numel(x) != w[0] {
                return Err(mismatch(format!("input has {} elements, weights expect {}", numel(x), w[0])));
            }
            if numel(b) != w[1] {
                return Err(mismatch(format!("bias {b:?} does not match {} outputs", w[1])));
            }
            Ok(vec![w[1]])
        }
        Op::ReLU | Op::Sigmoid | Op::Sign => Ok(ins[0].to_vec()),
        Op::Softmax => {
            if ins[0].is_empty() {
                return Err(OpShapeError::Rank(0));
            }
            Ok(ins[0].to_vec())
        }
        Op::Add | Op::Sub | Op::Mul => broadcast_shapes(ins[0], ins[1])
            .ok_or_else(|| mismatch(format!("cannot broadcast {:?} with {:?}", ins[0], ins[1]))),
        Op::Reshape => {
            let target = node.attr_shape(ATTR_SHAPE).unwrap_or_default();
            if numel(&target) != numel(ins[0]) {
                return Err(mismatch(format!("cannot reshape {:?} to {target:?}", ins[0])));
            }
            Ok(target)
        }
        Op::Broadcast => {
            let target = node.attr_shape(ATTR_SHAPE).unwrap_or_default();
            let x = ins[0];
            let ok = x.len() <= target.len()
                && broadcast_shapes(x, &target).as_deref() == Some(target.as_slice());
            if !ok {
                return Err(mismatch(format!("cannot broadcast {x:?} to {target:?}")));
            }
            Ok(target)
        }
        Op::Concat => {
            let rank = ins[0].len();
            if rank == 0 {
                return Err(OpShapeError::Rank(0));
            }
            let axis = concat_axis(node, rank).ok_or_else(|| mismatch("axis out of range".into()))?;
            let mut out = ins[0].to_vec();
            for s in &ins[1..] {
                if s.len() != rank {
                    return Err(OpShapeError::Rank(s.len()));
                }
                for d in 0..rank {
                    if d != axis && s[d] != out[d] {
                        return Err(mismatch(format!("{:?} vs {s:?} off the concat axis", ins[0])));
                    }
                }
                out[axis] += s[axis];
            }
            Ok(out)
        }
        Op::MaxPool2D => {
            let x = ins[0];
            expect_rank(x, 3)?;
            let k = node.attr_u32(ATTR_KERNEL).unwrap_or(1) as usize;
            let pad = node.padding().ok_or_else(|| mismatch("bad padding".into()))?;
            let s = node.stride();
            match (window_out(x[0], k, s, pad), window_out(x[1], k, s, pad)) {
                (Some(h), Some(w)) => Ok(vec![h, w, x[2]]),
                _ => Err(mismatch(format!("pool window {k} larger than input {x:?}"))),
            }
        }
        Op::GlobalMaxPool => {
            expect_rank(ins[0], 3)?;
            if ins[0][0] == 0 || ins[0][1] == 0 {
                return Err(mismatch("empty spatial extent".into()));
            }
            Ok(vec![1, 1, ins[0][2]])
        }
        Op::Resize => {
            expect_rank(ins[0], 3)?;
            let h = node.attr_u32(ATTR_HEIGHT).unwrap_or(0) as usize;
            let w = node.attr_u32(ATTR_WIDTH).unwrap_or(0) as usize;
            if h == 0 || w == 0 || ins[0][0] == 0 || ins[0][1] == 0 {
                return Err(mismatch("resize extents must be positive".into()));
            }
            Ok(vec![h, w, ins[0][2]])
        }
    }
}

pub(crate) fn concat_axis(node: &Node, rank: usize) -> Option<usize> {
    match node.attr_u32(ATTR_AXIS) {
        None => rank.checked_sub(1),
        Some(a) if (a as usize) < rank && rank <= MAX_RANK => Some(a as usize),
        Some(_) => None,
    }
}
