use std::collections::HashMap;

use crate::graph::shape::infer_in_order;
use crate::graph::{Graph, Node, Op, ATTR_SHAPE};
use crate::tensor::{numel, Tensor};

use super::PayloadError;

/// Names of the nodes making up one neural if-else.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditionalHandle {
    pub x_in: String,
    pub a_in: String,
    pub b_in: String,
    pub y_out: String,
    /// The seven operators, in creation order: ReLU, Sign, Broadcast, Sub,
    /// Mul (a side), Mul (b side), Add.
    pub node_names: Vec<String>,
    /// The all-ones constant feeding the Sub.
    pub one: String,
}

/// Appends `y = if x > 0 { a } else { b }` built from plain operators:
///
/// ```text
/// mask_a = broadcast(sign(relu(x)), shape(a))
/// mask_b = 1 - mask_a
/// y      = a * mask_a + b * mask_b
/// ```
///
/// `x` must be a one-element tensor and `a`, `b` must have equal shapes.
/// Because `sign(0) == 0`, `x == 0` selects `b`. The new nodes dangle until
/// the caller declares `y` an output or consumes it.
pub fn build_conditional(
    graph: &mut Graph,
    x: &str,
    a: &str,
    b: &str,
    name_prefix: &str,
) -> Result<ConditionalHandle, PayloadError> {
    let find = |name: &str| graph.index_of(name).ok_or_else(|| PayloadError::UnknownNode(name.to_string()));
    let (xi, ai, bi) = (find(x)?, find(a)?, find(b)?);

    let order = graph.canonical_order().map_err(|_| PayloadError::CyclicGraph)?;
    let shapes = infer_in_order(graph, &order, &HashMap::new())?;
    if numel(&shapes[xi]) != 1 {
        return Err(PayloadError::ShapeMismatch(format!(
            "condition `{x}` must hold one element, has shape {:?}",
            shapes[xi]
        )));
    }
    if shapes[ai] != shapes[bi] {
        return Err(PayloadError::ShapeMismatch(format!(
            "branches differ: `{a}` is {:?}, `{b}` is {:?}",
            shapes[ai], shapes[bi]
        )));
    }
    if shapes[ai].is_empty() {
        return Err(PayloadError::ShapeMismatch(format!("branch `{a}` is rank 0")));
    }
    let branch_shape = shapes[ai].clone();

    let names: Vec<String> = ["relu", "sign", "mask_a", "mask_b", "take_a", "take_b", "select", "one"]
        .iter()
        .map(|s| format!("{name_prefix}{s}"))
        .collect();
    if let Some(taken) = names.iter().find(|n| graph.contains(n)) {
        return Err(PayloadError::NameCollision(taken.clone()));
    }

    let mut add = |node: Node| graph.add(node).expect("names checked above");
    let relu = add(Node::new(&names[0], Op::ReLU).with_inputs(&[xi]));
    let sign = add(Node::new(&names[1], Op::Sign).with_inputs(&[relu]));
    let mask_a = add(
        Node::new(&names[2], Op::Broadcast)
            .with_inputs(&[sign])
            .with_attr(ATTR_SHAPE, branch_shape.as_slice()),
    );
    let one = add(Node::constant(&names[7], Tensor::scalar(1.0)));
    let mask_b = add(Node::new(&names[3], Op::Sub).with_inputs(&[one, mask_a]));
    let take_a = add(Node::new(&names[4], Op::Mul).with_inputs(&[ai, mask_a]));
    let take_b = add(Node::new(&names[5], Op::Mul).with_inputs(&[bi, mask_b]));
    add(Node::new(&names[6], Op::Add).with_inputs(&[take_a, take_b]));

    Ok(ConditionalHandle {
        x_in: x.to_string(),
        a_in: a.to_string(),
        b_in: b.to_string(),
        y_out: names[6].clone(),
        node_names: names[..7].to_vec(),
        one: names[7].clone(),
    })
}
