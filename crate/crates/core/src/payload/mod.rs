//! Payload building blocks: the neural conditional and the trigger detector.

mod conditional;
mod detector;

pub use conditional::{build_conditional, ConditionalHandle};
pub use detector::{build_detector, DetectorArch, Stage, INPUT_NAME, LOGIT_NAME, OUTPUT_NAME};
pub(crate) use detector::{add_conv_relu, he_normal};

use crate::graph::{GraphError, ShapeError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PayloadError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("node name `{0}` is already taken")]
    NameCollision(String),
    #[error("no node named `{0}`")]
    UnknownNode(String),
    #[error("graph contains a cycle")]
    CyclicGraph,
    #[error("invalid detector architecture: {0}")]
    InvalidArch(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

impl From<GraphError> for PayloadError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::NameCollision(n) => PayloadError::NameCollision(n),
            GraphError::UnknownNode(n) => PayloadError::UnknownNode(n),
        }
    }
}
