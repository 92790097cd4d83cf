//! NNIR binary codec.
//!
//! ```text
//! file    := "NNIR" version:u16 node_count:u32 node* output_count:u32 index:u32*
//! node    := name_len:u16 name opcode:u16
//!            input_count:u8 (index:u32 slot:u8)*
//!            attr_count:u8 (key_len:u8 key tag:u8 payload)*
//!            [blob]                       -- Const nodes only
//! payload := u32 (tag 0) | f32 (tag 1) | rank:u8 dim:u32* (tag 2)
//! blob    := dtype:u8 rank:u8 dim:u32* scalars
//! ```
//! All integers are little-endian. Nodes are written in canonical order
//! (topological, ties broken by name) so equal graphs encode identically.

use std::collections::BTreeMap;

use super::{validate, AttrValue, Edge, Graph, Node, Op, Violation};
use crate::tensor::{numel, DType, Tensor, MAX_RANK};

pub const MAGIC: [u8; 4] = *b"NNIR";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecodeError {
    #[error("bad magic {0:02x?}")]
    BadMagic(Vec<u8>),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("stream truncated at byte {offset} (needed {needed} more)")]
    TruncatedStream { offset: usize, needed: usize },
    #[error("node {node}: unknown opcode {opcode}")]
    UnknownOpcode { node: usize, opcode: u16 },
    #[error("node {node}: edge to missing node {target}")]
    DanglingEdge { node: usize, target: u32 },
    #[error("output list references missing node {0}")]
    DanglingOutput(u32),
    #[error("node {0}: name is not valid UTF-8")]
    InvalidName(usize),
    #[error("node {node}: attribute key is not valid UTF-8")]
    InvalidAttrKey { node: usize },
    #[error("node {node}: attribute `{key}` has unknown type tag {tag}")]
    UnknownAttrType { node: usize, key: String, tag: u8 },
    #[error("node {node}: attribute `{key}` appears twice")]
    DuplicateAttr { node: usize, key: String },
    #[error("node {node}: unknown dtype code {code}")]
    UnknownDType { node: usize, code: u8 },
    #[error("node {node}: rank {rank} exceeds {MAX_RANK}")]
    RankTooLarge { node: usize, rank: u8 },
    #[error("{0} trailing bytes after the output list")]
    TrailingBytes(usize),
    #[error("decoded graph is invalid: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncodeError {
    #[error("graph fails validation: {}", join_violations(.0))]
    ValidationFailed(Vec<Violation>),
    #[error("node `{0}`: field exceeds its wire-format width")]
    FieldOverflow(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

pub fn encode(graph: &Graph) -> Result<Vec<u8>, EncodeError> {
    let violations = validate(graph);
    if !violations.is_empty() {
        return Err(EncodeError::ValidationFailed(violations));
    }
    let canon = graph
        .canonicalized()
        .expect("validated graphs are acyclic");

    let mut w = Vec::new();
    w.extend_from_slice(&MAGIC);
    w.extend_from_slice(&VERSION.to_le_bytes());
    w.extend_from_slice(&(canon.nodes.len() as u32).to_le_bytes());
    for node in &canon.nodes {
        write_node(&mut w, node).map_err(|()| EncodeError::FieldOverflow(node.name.clone()))?;
    }
    w.extend_from_slice(&(canon.outputs.len() as u32).to_le_bytes());
    for name in &canon.outputs {
        let idx = canon.index_of(name).expect("validated outputs exist");
        w.extend_from_slice(&(idx as u32).to_le_bytes());
    }
    Ok(w)
}

fn write_node(w: &mut Vec<u8>, node: &Node) -> Result<(), ()> {
    let name = node.name.as_bytes();
    w.extend_from_slice(&u16::try_from(name.len()).map_err(drop)?.to_le_bytes());
    w.extend_from_slice(name);
    w.extend_from_slice(&node.op.opcode().to_le_bytes());
    w.push(u8::try_from(node.inputs.len()).map_err(drop)?);
    for e in &node.inputs {
        w.extend_from_slice(&u32::try_from(e.node).map_err(drop)?.to_le_bytes());
        w.push(e.slot);
    }
    w.push(u8::try_from(node.attrs.len()).map_err(drop)?);
    for (key, value) in &node.attrs {
        w.push(u8::try_from(key.len()).map_err(drop)?);
        w.extend_from_slice(key.as_bytes());
        w.push(value.type_tag());
        match value {
            AttrValue::U32(v) => w.extend_from_slice(&v.to_le_bytes()),
            AttrValue::F32(v) => w.extend_from_slice(&v.to_le_bytes()),
            AttrValue::Shape(dims) => {
                w.push(u8::try_from(dims.len()).map_err(drop)?);
                dims.iter().for_each(|d| w.extend_from_slice(&d.to_le_bytes()));
            }
        }
    }
    if node.op == Op::Const {
        let t = node.value.as_ref().ok_or(())?;
        write_tensor_blob(w, t)?;
    }
    Ok(())
}

/// `dtype:u8 rank:u8 dim:u32* scalars`, shared with standalone tensor files.
pub fn write_tensor_blob(w: &mut Vec<u8>, t: &Tensor) -> Result<(), ()> {
    w.push(t.dtype().code());
    w.push(t.rank() as u8);
    for &d in t.shape() {
        w.extend_from_slice(&u32::try_from(d).map_err(drop)?.to_le_bytes());
    }
    w.extend_from_slice(&t.raw_bytes());
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let rest = self.buf.len() - self.pos;
        if rest < n {
            return Err(DecodeError::TruncatedStream { offset: self.pos, needed: n - rest });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Graph, DecodeError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4).map_err(|_| DecodeError::BadMagic(bytes.to_vec()))?;
    if magic != MAGIC {
        return Err(DecodeError::BadMagic(magic.to_vec()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(DecodeError::UnsupportedVersion(version));
    }
    let count = r.u32()?;
    // Every node record is at least 6 bytes; don't trust `count` for allocation.
    let mut nodes = Vec::with_capacity((count as usize).min(bytes.len() / 6));
    for idx in 0..count as usize {
        nodes.push(read_node(&mut r, idx, count)?);
    }
    let out_count = r.u32()?;
    let mut outputs = Vec::with_capacity((out_count as usize).min(bytes.len() / 4));
    for _ in 0..out_count {
        let i = r.u32()?;
        let node = nodes.get(i as usize).ok_or(DecodeError::DanglingOutput(i))?;
        outputs.push(node.name.clone());
    }
    if r.pos != bytes.len() {
        return Err(DecodeError::TrailingBytes(bytes.len() - r.pos));
    }
    let graph = Graph { nodes, outputs };
    let violations = validate(&graph);
    if !violations.is_empty() {
        return Err(DecodeError::Invalid(violations));
    }
    Ok(graph)
}

fn read_node(r: &mut Reader<'_>, idx: usize, count: u32) -> Result<Node, DecodeError> {
    let name_len = r.u16()? as usize;
    let name = std::str::from_utf8(r.take(name_len)?)
        .map_err(|_| DecodeError::InvalidName(idx))?
        .to_string();
    let opcode = r.u16()?;
    let op = Op::from_opcode(opcode).ok_or(DecodeError::UnknownOpcode { node: idx, opcode })?;
    let n_inputs = r.u8()?;
    let mut inputs = Vec::with_capacity(n_inputs as usize);
    for _ in 0..n_inputs {
        let target = r.u32()?;
        let slot = r.u8()?;
        if target >= count {
            return Err(DecodeError::DanglingEdge { node: idx, target });
        }
        inputs.push(Edge { node: target as usize, slot });
    }
    let n_attrs = r.u8()?;
    let mut attrs = BTreeMap::new();
    for _ in 0..n_attrs {
        let key_len = r.u8()? as usize;
        let key = std::str::from_utf8(r.take(key_len)?)
            .map_err(|_| DecodeError::InvalidAttrKey { node: idx })?
            .to_string();
        let tag = r.u8()?;
        let value = match tag {
            0 => AttrValue::U32(r.u32()?),
            1 => AttrValue::F32(f32::from_bits(r.u32()?)),
            2 => {
                let rank = r.u8()?;
                if rank as usize > MAX_RANK {
                    return Err(DecodeError::RankTooLarge { node: idx, rank });
                }
                AttrValue::Shape((0..rank).map(|_| r.u32()).collect::<Result<_, _>>()?)
            }
            _ => return Err(DecodeError::UnknownAttrType { node: idx, key, tag }),
        };
        if attrs.insert(key.clone(), value).is_some() {
            return Err(DecodeError::DuplicateAttr { node: idx, key });
        }
    }
    let value = if op == Op::Const {
        Some(read_tensor_blob(r, idx)?)
    } else {
        None
    };
    Ok(Node { name, op, inputs, attrs, value })
}

fn read_tensor_blob(r: &mut Reader<'_>, idx: usize) -> Result<Tensor, DecodeError> {
    let code = r.u8()?;
    let dtype = DType::from_code(code).ok_or(DecodeError::UnknownDType { node: idx, code })?;
    let rank = r.u8()?;
    if rank as usize > MAX_RANK {
        return Err(DecodeError::RankTooLarge { node: idx, rank });
    }
    let shape: Vec<usize> = (0..rank)
        .map(|_| r.u32().map(|d| d as usize))
        .collect::<Result<_, _>>()?;
    let n = numel(&shape)
        .checked_mul(dtype.width())
        .ok_or(DecodeError::TruncatedStream { offset: r.pos, needed: usize::MAX })?;
    let raw = r.take(n)?;
    Ok(Tensor::from_raw_bytes(dtype, shape, raw).expect("length checked by take"))
}

/// Reads a standalone tensor file (a single blob, nothing else).
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, DecodeError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let t = read_tensor_blob(&mut r, 0)?;
    if r.pos != bytes.len() {
        return Err(DecodeError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(t)
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut w = Vec::new();
    write_tensor_blob(&mut w, t).expect("tensor extents fit in u32");
    w
}
