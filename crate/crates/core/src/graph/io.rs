use std::collections::HashMap;

use super::shape::infer_indexed;
use super::{validate, Graph, ShapeError, Violation};

/// The model's single input and single output with their static shapes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IoSignature {
    pub input_node: String,
    pub input_shape: Vec<usize>,
    pub output_node: String,
    pub output_shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IoError {
    #[error("graph has no placeholder input")]
    NoInput,
    #[error("graph has {0} placeholder inputs")]
    MultipleInputs(usize),
    #[error("graph has no output")]
    NoOutput,
    #[error("graph has {0} outputs")]
    MultipleOutputs(usize),
    #[error("graph is invalid ({} violations)", .0.len())]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// Locates the model input (the only `Placeholder`; indegree-0 `Const`
/// nodes are weights) and the model output (the only sink).
pub fn find_io(graph: &Graph) -> Result<IoSignature, IoError> {
    let violations = validate(graph);
    if !violations.is_empty() {
        return Err(IoError::Invalid(violations));
    }
    let inputs: Vec<usize> = graph.placeholders().collect();
    let input = match inputs.as_slice() {
        [] => return Err(IoError::NoInput),
        [i] => *i,
        many => return Err(IoError::MultipleInputs(many.len())),
    };
    // After validation the sinks are exactly the declared outputs.
    let sinks: Vec<usize> = graph
        .outdegrees()
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == 0)
        .map(|(i, _)| i)
        .collect();
    let output = match sinks.as_slice() {
        [] => return Err(IoError::NoOutput),
        [o] => *o,
        many => return Err(IoError::MultipleOutputs(many.len())),
    };
    let shapes = infer_indexed(graph, &HashMap::new())?;
    Ok(IoSignature {
        input_node: graph.nodes[input].name.clone(),
        input_shape: shapes[input].clone(),
        output_node: graph.nodes[output].name.clone(),
        output_shape: shapes[output].clone(),
    })
}
