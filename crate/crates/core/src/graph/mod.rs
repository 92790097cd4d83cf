//! Data-flow graph IR.
//!
//! A [`Graph`] is a flat list of named operator nodes. Edges are stored on the
//! consumer side as `(producer index, output slot)` pairs; every operator in
//! this IR has exactly one output slot. Weights are ordinary `Const` nodes, so
//! Conv2D and Dense take three inputs (data, weights, bias).

use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::cmp::Reverse;
use std::fmt::{self, Write as _};

use crate::tensor::Tensor;

pub mod codec;
pub mod io;
pub mod shape;
pub mod validate;

pub use codec::{decode, encode, DecodeError, EncodeError};
pub use io::{find_io, IoError, IoSignature};
pub use shape::{infer_shapes, infer_shapes_declared, ShapeError, ShapeMap};
pub use validate::{validate, Violation};

pub const ATTR_SHAPE: &str = "shape";
pub const ATTR_STRIDE: &str = "stride";
pub const ATTR_PADDING: &str = "padding";
pub const ATTR_KERNEL: &str = "kernel";
pub const ATTR_AXIS: &str = "axis";
pub const ATTR_HEIGHT: &str = "height";
pub const ATTR_WIDTH: &str = "width";
pub const ATTR_MODE: &str = "mode";
pub const ATTR_DTYPE: &str = "dtype";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Placeholder,
    Const,
    Conv2D,
    Dense,
    ReLU,
    Sigmoid,
    Softmax,
    Sign,
    Add,
    Sub,
    Mul,
    Reshape,
    Broadcast,
    Concat,
    MaxPool2D,
    GlobalMaxPool,
    Resize,
}

/// Number of inputs an operator accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Exact(usize),
    AtLeast(usize),
}

impl Arity {
    pub fn accepts(self, n: usize) -> bool {
        match self {
            Arity::Exact(k) => n == k,
            Arity::AtLeast(k) => n >= k,
        }
    }
}

impl fmt::Display for Arity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arity::Exact(k) => write!(f, "{k}"),
            Arity::AtLeast(k) => write!(f, ">={k}"),
        }
    }
}

impl Op {
    pub const ALL: [Op; 17] = [
        Op::Placeholder,
        Op::Const,
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

    pub fn opcode(self) -> u16 {
        Op::ALL.iter().position(|&o| o == self).unwrap() as u16
    }

    pub fn from_opcode(code: u16) -> Option<Op> {
        Op::ALL.get(code as usize).copied()
    }

    pub fn arity(self) -> Arity {
        match self {
            Op::Placeholder | Op::Const => Arity::Exact(0),
            Op::Conv2D | Op::Dense => Arity::Exact(3),
            Op::Add | Op::Sub | Op::Mul => Arity::Exact(2),
            Op::Concat => Arity::AtLeast(1),
            _ => Arity::Exact(1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Op::Placeholder => "Placeholder",
            Op::Const => "Const",
            Op::Conv2D => "Conv2D",
            Op::Dense => "Dense",
            Op::ReLU => "ReLU",
            Op::Sigmoid => "Sigmoid",
            Op::Softmax => "Softmax",
            Op::Sign => "Sign",
            Op::Add => "Add",
            Op::Sub => "Sub",
            Op::Mul => "Mul",
            Op::Reshape => "Reshape",
            Op::Broadcast => "Broadcast",
            Op::Concat => "Concat",
            Op::MaxPool2D => "MaxPool2D",
            Op::GlobalMaxPool => "GlobalMaxPool",
            Op::Resize => "Resize",
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Padding {
    #[default]
    Valid,
    Same,
}

impl Padding {
    pub fn code(self) -> u32 {
        match self {
            Padding::Valid => 0,
            Padding::Same => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Padding::Valid),
            1 => Some(Padding::Same),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResizeMode {
    #[default]
    Bilinear,
    Nearest,
}

impl ResizeMode {
    pub fn code(self) -> u32 {
        match self {
            ResizeMode::Bilinear => 0,
            ResizeMode::Nearest => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(ResizeMode::Bilinear),
            1 => Some(ResizeMode::Nearest),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum AttrValue {
    U32(u32),
    F32(f32),
    Shape(Vec<u32>),
}

impl AttrValue {
    pub fn type_tag(&self) -> u8 {
        match self {
            AttrValue::U32(_) => 0,
            AttrValue::F32(_) => 1,
            AttrValue::Shape(_) => 2,
        }
    }
}

impl PartialEq for AttrValue {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (AttrValue::U32(a), AttrValue::U32(b)) => a == b,
            (AttrValue::F32(a), AttrValue::F32(b)) => a.to_bits() == b.to_bits(),
            (AttrValue::Shape(a), AttrValue::Shape(b)) => a == b,
            _ => false,
        }
    }
}

impl From<u32> for AttrValue {
    fn from(v: u32) -> Self {
        AttrValue::U32(v)
    }
}

impl From<f32> for AttrValue {
    fn from(v: f32) -> Self {
        AttrValue::F32(v)
    }
}

impl From<&[usize]> for AttrValue {
    fn from(v: &[usize]) -> Self {
        AttrValue::Shape(v.iter().map(|&d| d as u32).collect())
    }
}

impl From<Padding> for AttrValue {
    fn from(p: Padding) -> Self {
        AttrValue::U32(p.code())
    }
}

impl From<ResizeMode> for AttrValue {
    fn from(m: ResizeMode) -> Self {
        AttrValue::U32(m.code())
    }
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::U32(v) => write!(f, "{v}"),
            AttrValue::F32(v) => write!(f, "{v}f"),
            AttrValue::Shape(v) => {
                let dims: Vec<String> = v.iter().map(u32::to_string).collect();
                write!(f, "({})", dims.join("x"))
            }
        }
    }
}

/// Reference to one output slot of a producer node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub node: usize,
    pub slot: u8,
}

impl Edge {
    pub fn new(node: usize) -> Self {
        Edge { node, slot: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<Edge>,
    pub attrs: BTreeMap<String, AttrValue>,
    /// Payload of a `Const` node.
    pub value: Option<Tensor>,
}

impl Node {
    pub fn new(name: impl Into<String>, op: Op) -> Self {
        Node {
            name: name.into(),
            op,
            inputs: Vec::new(),
            attrs: BTreeMap::new(),
            value: None,
        }
    }

    pub fn placeholder(name: impl Into<String>, shape: &[usize]) -> Self {
        Node::new(name, Op::Placeholder).with_attr(ATTR_SHAPE, shape)
    }

    pub fn constant(name: impl Into<String>, value: Tensor) -> Self {
        let mut n = Node::new(name, Op::Const);
        n.value = Some(value);
        n
    }

    pub fn with_inputs(mut self, inputs: &[usize]) -> Self {
        self.inputs = inputs.iter().map(|&i| Edge::new(i)).collect();
        self
    }

    pub fn with_attr(mut self, key: &str, value: impl Into<AttrValue>) -> Self {
        self.attrs.insert(key.to_string(), value.into());
        self
    }

    pub fn attr_u32(&self, key: &str) -> Option<u32> {
        match self.attrs.get(key) {
            Some(AttrValue::U32(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn attr_f32(&self, key: &str) -> Option<f32> {
        match self.attrs.get(key) {
            Some(AttrValue::F32(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn attr_shape(&self, key: &str) -> Option<Vec<usize>> {
        match self.attrs.get(key) {
            Some(AttrValue::Shape(v)) => Some(v.iter().map(|&d| d as usize).collect()),
            _ => None,
        }
    }

    pub fn stride(&self) -> usize {
        self.attr_u32(ATTR_STRIDE).unwrap_or(1).max(1) as usize
    }

    pub fn padding(&self) -> Option<Padding> {
        match self.attr_u32(ATTR_PADDING) {
            None => Some(Padding::Valid),
            Some(c) => Padding::from_code(c),
        }
    }

    pub fn resize_mode(&self) -> Option<ResizeMode> {
        match self.attr_u32(ATTR_MODE) {
            None => Some(ResizeMode::Bilinear),
            Some(c) => ResizeMode::from_code(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("node name `{0}` already exists")]
    NameCollision(String),
    #[error("no node named `{0}`")]
    UnknownNode(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Graph {
    pub nodes: Vec<Node>,
    /// Names of the nodes whose values the model returns.
    pub outputs: Vec<String>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn node(&self, name: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index_of(name).is_some()
    }

    /// Appends a node, rejecting duplicate names.
    pub fn add(&mut self, node: Node) -> Result<usize, GraphError> {
        if self.contains(&node.name) {
            return Err(GraphError::NameCollision(node.name));
        }
        self.nodes.push(node);
        Ok(self.nodes.len() - 1)
    }

    pub fn rename(&mut self, old: &str, new: &str) -> Result<(), GraphError> {
        if self.contains(new) {
            return Err(GraphError::NameCollision(new.to_string()));
        }
        let idx = self
            .index_of(old)
            .ok_or_else(|| GraphError::UnknownNode(old.to_string()))?;
        self.nodes[idx].name = new.to_string();
        for out in self.outputs.iter_mut().filter(|o| *o == old) {
            *out = new.to_string();
        }
        Ok(())
    }

    pub fn placeholders(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.op == Op::Placeholder)
            .map(|(i, _)| i)
    }

    /// Number of consumers of each node (edges with an out-of-range producer
    /// are ignored).
    pub fn outdegrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.nodes.len()];
        for n in &self.nodes {
            for e in &n.inputs {
                if let Some(d) = deg.get_mut(e.node) {
                    *d += 1;
                }
            }
        }
        deg
    }

    /// Consumer lists, one entry per edge.
    pub fn consumers(&self) -> Vec<Vec<usize>> {
        let mut cons = vec![Vec::new(); self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            for e in &n.inputs {
                if let Some(c) = cons.get_mut(e.node) {
                    c.push(i);
                }
            }
        }
        cons
    }

    /// Topological order using the lexicographically smallest ready name at
    /// every step. Returns the indices that could not be ordered if the
    /// graph has a cycle (or a dangling edge).
    pub fn canonical_order(&self) -> Result<Vec<usize>, Vec<usize>> {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        let mut cons: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, node) in self.nodes.iter().enumerate() {
            for e in &node.inputs {
                indeg[i] += 1;
                if e.node < n {
                    cons[e.node].push(i);
                }
            }
        }
        // Dangling edges are never satisfied, so such nodes stay unordered.
        let mut ready: BinaryHeap<Reverse<(&str, usize)>> = BinaryHeap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if indeg[i] == 0 {
                ready.push(Reverse((node.name.as_str(), i)));
            }
        }
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse((_, i))) = ready.pop() {
            order.push(i);
            for &c in &cons[i] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.push(Reverse((self.nodes[c].name.as_str(), c)));
                }
            }
        }
        if order.len() == n {
            Ok(order)
        } else {
            let mut placed = vec![false; n];
            order.iter().for_each(|&i| placed[i] = true);
            Err((0..n).filter(|&i| !placed[i]).collect())
        }
    }

    /// Returns a copy whose node list follows [`Graph::canonical_order`].
    pub fn canonicalized(&self) -> Result<Graph, Vec<usize>> {
        let order = self.canonical_order()?;
        let mut remap = vec![0usize; order.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new;
        }
        let nodes = order
            .iter()
            .map(|&old| {
                let mut node = self.nodes[old].clone();
                for e in &mut node.inputs {
                    e.node = remap[e.node];
                }
                node
            })
            .collect();
        Ok(Graph {
            nodes,
            outputs: self.outputs.clone(),
        })
    }

    /// Equality modulo node-list order: same names, ops, attributes, constant
    /// payloads (bitwise), input wiring by name, and declared outputs.
    pub fn structurally_eq(&self, other: &Graph) -> bool {
        if self.nodes.len() != other.nodes.len() || self.outputs != other.outputs {
            return false;
        }
        let theirs: HashMap<&str, &Node> = other.nodes.iter().map(|n| (n.name.as_str(), n)).collect();
        if theirs.len() != other.nodes.len() {
            return false;
        }
        fn edge_name<'a>(g: &'a Graph, e: &Edge) -> Option<(&'a str, u8)> {
            g.nodes.get(e.node).map(|n| (n.name.as_str(), e.slot))
        }
        self.nodes.iter().all(|mine| {
            let Some(other_node) = theirs.get(mine.name.as_str()) else {
                return false;
            };
            mine.op == other_node.op
                && mine.attrs == other_node.attrs
                && mine.value == other_node.value
                && mine.inputs.len() == other_node.inputs.len()
                && mine
                    .inputs
                    .iter()
                    .zip(&other_node.inputs)
                    .all(|(a, b)| edge_name(self, a) == edge_name(other, b))
        })
    }

    /// Total number of scalars stored in `Const` nodes.
    pub fn const_scalar_count(&self) -> usize {
        self.nodes
            .iter()
            .filter_map(|n| n.value.as_ref())
            .map(Tensor::len)
            .sum()
    }

    /// One line per node; meant for humans, not for parsing.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let _ = write!(s, "{i:>4}  {:<14} {}", n.op.name(), n.name);
            if !n.inputs.is_empty() {
                let ins: Vec<String> = n
                    .inputs
                    .iter()
                    .map(|e| match self.nodes.get(e.node) {
                        Some(p) => p.name.clone(),
                        None => format!("#{}", e.node),
                    })
                    .collect();
                let _ = write!(s, " <- [{}]", ins.join(", "));
            }
            for (k, v) in &n.attrs {
                let _ = write!(s, " {k}={v}");
            }
            if let Some(t) = &n.value {
                let _ = write!(s, " value={}{:?}", t.dtype(), t.shape());
            }
            s.push('\n');
        }
        let _ = writeln!(s, "outputs: [{}]", self.outputs.join(", "));
        s
    }
}
