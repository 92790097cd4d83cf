//! Graph-level neural payload injection and its structural countermeasure.
//!
//! The crate covers the whole loop on a self-contained model format:
//! decode a compiled model, graft a trained trigger detector and a neural
//! conditional onto it, re-encode a drop-in replacement, and scan models
//! for exactly that kind of graft.

pub mod augment;
pub mod graph;
pub mod inject;
pub mod interp;
pub mod payload;
pub mod profile;
pub mod scan;
pub mod tensor;
pub mod train;
pub mod zoo;

pub use graph::{Graph, Node, Op};
pub use tensor::{DType, Tensor};
