use std::collections::{HashMap, HashSet};
use std::fmt;

use super::{Arity, Graph, Op, ATTR_DTYPE, ATTR_HEIGHT, ATTR_KERNEL, ATTR_SHAPE, ATTR_STRIDE, ATTR_WIDTH};
use crate::tensor::{DType, MAX_RANK};

/// A broken graph invariant. Violations are data: [`validate`] collects all
/// of them instead of stopping at the first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateName { name: String },
    ArityMismatch { node: String, op: Op, expected: Arity, found: usize },
    DanglingEdge { node: String, input: usize, target: usize },
    InvalidSlot { node: String, input: usize, slot: u8 },
    CycleDetected { nodes: Vec<String> },
    MissingConstValue { node: String },
    UnexpectedValue { node: String },
    MissingAttr { node: String, attr: &'static str },
    InvalidAttr { node: String, attr: String },
    UnknownOutput { name: String },
    DuplicateOutput { name: String },
    ConsumedOutput { node: String },
    DanglingNode { node: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateName { name } => write!(f, "{name}: duplicate node name"),
            Violation::ArityMismatch { node, op, expected, found } => {
                write!(f, "{node}: {op} takes {expected} inputs, found {found}")
            }
            Violation::DanglingEdge { node, input, target } => {
                write!(f, "{node}: input {input} references missing node #{target}")
            }
            Violation::InvalidSlot { node, input, slot } => {
                write!(f, "{node}: input {input} references output slot {slot}")
            }
            Violation::CycleDetected { nodes } => write!(f, "cycle through [{}]", nodes.join(", ")),
            Violation::MissingConstValue { node } => write!(f, "{node}: Const without a value"),
            Violation::UnexpectedValue { node } => write!(f, "{node}: only Const nodes carry a value"),
            Violation::MissingAttr { node, attr } => write!(f, "{node}: missing attribute `{attr}`"),
            Violation::InvalidAttr { node, attr } => write!(f, "{node}: invalid attribute `{attr}`"),
            Violation::UnknownOutput { name } => write!(f, "declared output `{name}` does not exist"),
            Violation::DuplicateOutput { name } => write!(f, "output `{name}` declared twice"),
            Violation::ConsumedOutput { node } => write!(f, "{node}: declared output has consumers"),
            Violation::DanglingNode { node } => write!(f, "{node}: result is never used"),
        }
    }
}

/// Checks every structural invariant of `graph`. An empty result means the
/// graph is well formed.
pub fn validate(graph: &Graph) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = graph.nodes.len();

    let mut seen = HashSet::new();
    for node in &graph.nodes {
        if !seen.insert(node.name.as_str()) {
            out.push(Violation::DuplicateName { name: node.name.clone() });
        }
    }

    for node in &graph.nodes {
        let name = || node.name.clone();
        let arity = node.op.arity();
        if !arity.accepts(node.inputs.len()) {
            out.push(Violation::ArityMismatch {
                node: name(),
                op: node.op,
                expected: arity,
                found: node.inputs.len(),
            });
        }
        for (i, e) in node.inputs.iter().enumerate() {
            if e.node >= n {
                out.push(Violation::DanglingEdge { node: name(), input: i, target: e.node });
            } else if e.slot != 0 {
                out.push(Violation::InvalidSlot { node: name(), input: i, slot: e.slot });
            }
        }
        match (node.op, &node.value) {
            (Op::Const, None) => out.push(Violation::MissingConstValue { node: name() }),
            (Op::Const, Some(_)) => {}
            (_, Some(_)) => out.push(Violation::UnexpectedValue { node: name() }),
            _ => {}
        }
        check_attrs(node, &mut out);
    }

    let mut declared = HashSet::new();
    let index: HashMap<&str, usize> = graph.nodes.iter().enumerate().map(|(i, n)| (n.name.as_str(), i)).collect();
    for name in &graph.outputs {
        if !declared.insert(name.as_str()) {
            out.push(Violation::DuplicateOutput { name: name.clone() });
        }
        if !index.contains_key(name.as_str()) {
            out.push(Violation::UnknownOutput { name: name.clone() });
        }
    }

    let outdeg = graph.outdegrees();
    for (i, node) in graph.nodes.iter().enumerate() {
        let is_output = declared.contains(node.name.as_str());
        if is_output && outdeg[i] > 0 {
            out.push(Violation::ConsumedOutput { node: node.name.clone() });
        } else if !is_output && outdeg[i] == 0 {
            out.push(Violation::DanglingNode { node: node.name.clone() });
        }
    }

    if let Err(unordered) = graph.canonical_order() {
        let cyclic = cyclic_core(graph, &unordered);
        if !cyclic.is_empty() {
            let mut nodes: Vec<String> = cyclic.iter().map(|&i| graph.nodes[i].name.clone()).collect();
            nodes.sort();
            out.push(Violation::CycleDetected { nodes });
        }
    }
    out
}

fn check_attrs(node: &super::Node, out: &mut Vec<Violation>) {
    let bad = |attr: &str| Violation::InvalidAttr { node: node.name.clone(), attr: attr.to_string() };
    let require_shape = |out: &mut Vec<Violation>| match node.attr_shape(ATTR_SHAPE) {
        None => out.push(Violation::MissingAttr { node: node.name.clone(), attr: ATTR_SHAPE }),
        Some(s) if s.len() > MAX_RANK => out.push(bad(ATTR_SHAPE)),
        Some(_) => {}
    };
    match node.op {
        Op::Placeholder => {
            require_shape(out);
            if let Some(code) = node.attr_u32(ATTR_DTYPE) {
                if u8::try_from(code).ok().and_then(DType::from_code).is_none() {
                    out.push(bad(ATTR_DTYPE));
                }
            }
        }
        Op::Reshape | Op::Broadcast => require_shape(out),
        Op::Conv2D | Op::MaxPool2D => {
            if node.attr_u32(ATTR_STRIDE) == Some(0) {
                out.push(bad(ATTR_STRIDE));
            }
            if node.padding().is_none() {
                out.push(bad(super::ATTR_PADDING));
            }
            if node.op == Op::MaxPool2D {
                match node.attr_u32(ATTR_KERNEL) {
                    None => out.push(Violation::MissingAttr { node: node.name.clone(), attr: ATTR_KERNEL }),
                    Some(0) => out.push(bad(ATTR_KERNEL)),
                    Some(_) => {}
                }
            }
        }
        Op::Resize => {
            for attr in [ATTR_HEIGHT, ATTR_WIDTH] {
                match node.attr_u32(attr) {
                    None => out.push(Violation::MissingAttr { node: node.name.clone(), attr }),
                    Some(0) => out.push(bad(attr)),
                    Some(_) => {}
                }
            }
            if node.resize_mode().is_none() {
                out.push(bad(super::ATTR_MODE));
            }
        }
        _ => {}
    }
}

/// Of the nodes Kahn's algorithm could not order, keeps only those that lie
/// on a cycle: anything that merely hangs off a cycle is peeled away.
fn cyclic_core(graph: &Graph, unordered: &[usize]) -> Vec<usize> {
    let mut live: HashSet<usize> = unordered.iter().copied().collect();
    loop {
        let mut has_live_consumer: HashSet<usize> = HashSet::new();
        let mut has_live_producer: HashSet<usize> = HashSet::new();
        for &i in &live {
            for e in &graph.nodes[i].inputs {
                if live.contains(&e.node) {
                    has_live_consumer.insert(e.node);
                    has_live_producer.insert(i);
                }
            }
        }
        let before = live.len();
        live.retain(|i| has_live_consumer.contains(i) && has_live_producer.contains(i));
        if live.len() == before {
            break;
        }
    }
    let mut v: Vec<usize> = live.into_iter().collect();
    v.sort_unstable();
    v
}
