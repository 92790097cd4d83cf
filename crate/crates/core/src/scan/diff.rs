use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use crate::graph::{decode, AttrValue, Graph};

use super::ScanError;

/// Node-level difference between two models, by node name in each model.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GraphDiff {
    /// Nodes of the second model with no structural counterpart in the first.
    pub added: Vec<String>,
    /// Nodes of the first model with no structural counterpart in the second.
    pub removed: Vec<String>,
    /// Names present on both sides whose structure differs.
    pub modified: Vec<String>,
}

impl GraphDiff {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.modified.is_empty()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("change\tnode\n");
        for (label, names) in [("added", &self.added), ("removed", &self.removed), ("modified", &self.modified)] {
            for n in names {
                out.push_str(&format!("{label}\t{n}\n"));
            }
        }
        out
    }
}

pub fn diff(a: &[u8], b: &[u8]) -> Result<GraphDiff, ScanError> {
    Ok(diff_graphs(&decode(a)?, &decode(b)?))
}

/// Matches nodes by a name-free structural hash: a node's hash covers its
/// operator, attributes, constant payload and the hashes of its inputs, so
/// matching grows outward from the inputs and constants. Equal hashes are
/// paired as a multiset; leftovers that share a name and operator are
/// reported as modified rather than removed and added.
pub fn diff_graphs(a: &Graph, b: &Graph) -> GraphDiff {
    let (ha, hb) = (structural_hashes(a), structural_hashes(b));
    let mut pool: HashMap<u64, usize> = HashMap::new();
    for &h in &ha {
        *pool.entry(h).or_default() += 1;
    }
    let mut added = Vec::new();
    for (i, h) in hb.iter().enumerate() {
        match pool.get_mut(h) {
            Some(k) if *k > 0 => *k -= 1,
            _ => added.push(i),
        }
    }
    let mut removed = Vec::new();
    for (i, h) in ha.iter().enumerate().rev() {
        if let Some(k) = pool.get_mut(h).filter(|k| **k > 0) {
            *k -= 1;
            removed.push(i);
        }
    }

    let mut modified = Vec::new();
    let added_names: HashMap<&str, usize> = added.iter().map(|&i| (b.nodes[i].name.as_str(), i)).collect();
    let mut paired_b = Vec::new();
    removed.retain(|&i| {
        let n = &a.nodes[i];
        match added_names.get(n.name.as_str()) {
            Some(&j) if b.nodes[j].op == n.op => {
                modified.push(n.name.clone());
                paired_b.push(j);
                false
            }
            _ => true,
        }
    });
    added.retain(|j| !paired_b.contains(j));

    let names = |g: &Graph, idx: Vec<usize>| {
        let mut v: Vec<String> = idx.into_iter().map(|i| g.nodes[i].name.clone()).collect();
        v.sort();
        v
    };
    modified.sort();
    GraphDiff { added: names(b, added), removed: names(a, removed), modified }
}

fn structural_hashes(g: &Graph) -> Vec<u64> {
    let order = match g.canonical_order() {
        Ok(o) => o,
        // Cyclic graphs do not decode; hash what can be ordered.
        Err(_) => (0..g.nodes.len()).collect(),
    };
    let mut hashes = vec![0u64; g.nodes.len()];
    for i in order {
        let n = &g.nodes[i];
        let mut h = DefaultHasher::new();
        n.op.opcode().hash(&mut h);
        for (k, v) in &n.attrs {
            k.hash(&mut h);
            match v {
                AttrValue::U32(x) => (0u8, *x).hash(&mut h),
                AttrValue::F32(x) => (1u8, x.to_bits()).hash(&mut h),
                AttrValue::Shape(s) => (2u8, s).hash(&mut h),
            }
        }
        if let Some(t) = &n.value {
            t.dtype().code().hash(&mut h);
            t.shape().hash(&mut h);
            t.raw_bytes().hash(&mut h);
        }
        for e in &n.inputs {
            (hashes[e.node], e.slot).hash(&mut h);
        }
        hashes[i] = h.finish();
    }
    hashes
}
