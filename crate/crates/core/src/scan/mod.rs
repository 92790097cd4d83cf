//! Static detection of grafted bypass payloads.
//!
//! Every rule is structural: it looks at operators, edges, constants and
//! shapes, never at node names, so renaming a model cannot change a verdict.

mod diff;

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use crate::graph::shape::infer_indexed;
use crate::graph::{decode, DecodeError, Graph, Op, ShapeError};
use crate::tensor::numel;

pub use diff::{diff, diff_graphs, GraphDiff};

#[derive(Debug, thiserror::Error)]
pub enum ScanError {
    #[error("model decoding failed: {0}")]
    ModelDecoding(#[from] DecodeError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Evidence {
    /// A `Sign` operator anywhere in the graph.
    SignOp,
    /// Two internally vertex-disjoint paths from the input to the output.
    ParallelBypass,
    /// A `Mul`/`Add` close to the output with an output-sized constant operand.
    ConstFedSelector,
    /// `relu -> sign -> broadcast -> {mul, sub(ones) -> mul} -> add`.
    MaskPairPattern,
}

impl Evidence {
    pub fn as_str(self) -> &'static str {
        match self {
            Evidence::SignOp => "SignOp",
            Evidence::ParallelBypass => "ParallelBypass",
            Evidence::ConstFedSelector => "ConstFedSelector",
            Evidence::MaskPairPattern => "MaskPairPattern",
        }
    }
}

impl fmt::Display for Evidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Severity {
    Info,
    Suspicious,
    High,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Info => "info",
            Severity::Suspicious => "suspicious",
            Severity::High => "high",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Clean,
    Suspicious,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Clean => "clean",
            Verdict::Suspicious => "suspicious",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub kind: Evidence,
    pub severity: Severity,
    pub nodes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanReport {
    pub findings: Vec<Finding>,
    pub verdict: Verdict,
}

impl ScanReport {
    fn from_findings(mut findings: Vec<Finding>) -> Self {
        findings.sort_by(|a, b| b.severity.cmp(&a.severity).then(a.kind.cmp(&b.kind)).then_with(|| a.nodes.cmp(&b.nodes)));
        let verdict = if findings.iter().any(|f| f.severity >= Severity::Suspicious) {
            Verdict::Suspicious
        } else {
            Verdict::Clean
        };
        ScanReport { findings, verdict }
    }

    pub fn max_severity(&self) -> Option<Severity> {
        self.findings.iter().map(|f| f.severity).max()
    }

    pub fn count(&self, kind: Evidence) -> usize {
        self.findings.iter().filter(|f| f.kind == kind).count()
    }

    /// `# verdict` comment line, then a `kind severity nodes` table.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# verdict\t{}\nkind\tseverity\tnodes\n", self.verdict);
        for f in &self.findings {
            out.push_str(&format!("{}\t{}\t{}\n", f.kind, f.severity, f.nodes.join(",")));
        }
        out
    }

    pub fn to_lines(&self) -> String {
        let mut out = format!("verdict: {}\n", self.verdict);
        for f in &self.findings {
            out.push_str(&format!("[{}] {}: {}\n", f.severity, f.kind, f.nodes.join(", ")));
        }
        out
    }
}

/// Decodes and scans a serialized model.
pub fn scan(model: &[u8]) -> Result<ScanReport, ScanError> {
    scan_graph(&decode(model)?)
}

pub fn scan_graph(graph: &Graph) -> Result<ScanReport, ScanError> {
    let shapes = infer_indexed(graph, &HashMap::new())?;
    let consumers = graph.consumers();
    let outputs: Vec<usize> = graph.outputs.iter().filter_map(|n| graph.index_of(n)).collect();
    let name = |i: usize| graph.nodes[i].name.clone();

    let mut findings = Vec::new();
    for (i, n) in graph.nodes.iter().enumerate() {
        if n.op == Op::Sign {
            findings.push(Finding { kind: Evidence::SignOp, severity: Severity::Suspicious, nodes: vec![name(i)] });
        }
    }
    for m in mask_pairs(graph, &consumers) {
        findings.push(Finding { kind: Evidence::MaskPairPattern, severity: Severity::High, nodes: m.map(name).to_vec() });
    }
    let selectors = const_fed_selectors(graph, &shapes, &outputs);
    for &s in &selectors {
        findings.push(Finding { kind: Evidence::ConstFedSelector, severity: Severity::Info, nodes: vec![name(s)] });
    }
    let bypass_severity = if selectors.is_empty() { Severity::Info } else { Severity::Suspicious };
    for p in graph.placeholders() {
        for &o in &outputs {
            if let Some(path_nodes) = disjoint_paths(graph, &consumers, p, o) {
                let mut nodes: Vec<String> = path_nodes.into_iter().map(name).collect();
                nodes.sort();
                findings.push(Finding { kind: Evidence::ParallelBypass, severity: bypass_severity, nodes });
            }
        }
    }
    Ok(ScanReport::from_findings(findings))
}

fn is_ones_const(graph: &Graph, i: usize) -> bool {
    let n = &graph.nodes[i];
    n.op == Op::Const
        && n.value.as_ref().and_then(|t| t.as_f32().ok()).is_some_and(|v| !v.is_empty() && v.iter().all(|&x| x == 1.0))
}

/// Every match of the mask-pair idiom, as `[relu, sign, broadcast, sub,
/// mul_a, mul_b, add]`. Operand order of the `Mul`s and the `Add` is free.
fn mask_pairs(graph: &Graph, consumers: &[Vec<usize>]) -> Vec<[usize; 7]> {
    let nodes = &graph.nodes;
    let has_input = |i: usize, x: usize| nodes[i].inputs.iter().any(|e| e.node == x);
    let mut found = Vec::new();
    for (sign, n) in nodes.iter().enumerate() {
        if n.op != Op::Sign {
            continue;
        }
        let relu = n.inputs[0].node;
        if nodes[relu].op != Op::ReLU {
            continue;
        }
        for &bc in consumers[sign].iter().filter(|&&c| nodes[c].op == Op::Broadcast) {
            let users = &consumers[bc];
            let muls_a: Vec<usize> = users.iter().copied().filter(|&c| nodes[c].op == Op::Mul).collect();
            let subs = users.iter().copied().filter(|&c| {
                nodes[c].op == Op::Sub && nodes[c].inputs[1].node == bc && is_ones_const(graph, nodes[c].inputs[0].node)
            });
            for sub in subs {
                for &mul_b in consumers[sub].iter().filter(|&&c| nodes[c].op == Op::Mul) {
                    for &mul_a in &muls_a {
                        if mul_a == mul_b {
                            continue;
                        }
                        for &add in &consumers[mul_a] {
                            let a = &nodes[add];
                            if a.op == Op::Add && a.inputs.len() == 2 && has_input(add, mul_a) && has_input(add, mul_b) {
                                found.push([relu, sign, bc, sub, mul_a, mul_b, add]);
                            }
                        }
                    }
                }
            }
        }
    }
    found.sort();
    found.dedup();
    found
}

/// `Mul`/`Add` nodes within three hops of an output that take a constant
/// operand with as many elements as that output (and more than one).
fn const_fed_selectors(graph: &Graph, shapes: &[Vec<usize>], outputs: &[usize]) -> Vec<usize> {
    let mut hits = HashSet::new();
    for &o in outputs {
        let size = numel(&shapes[o]);
        if size <= 1 {
            continue;
        }
        let mut seen = HashSet::from([o]);
        let mut queue = VecDeque::from([(o, 0)]);
        while let Some((i, depth)) = queue.pop_front() {
            let n = &graph.nodes[i];
            if matches!(n.op, Op::Mul | Op::Add)
                && n.inputs.iter().any(|e| graph.nodes[e.node].op == Op::Const && numel(&shapes[e.node]) == size)
            {
                hits.insert(i);
            }
            if depth < 3 {
                for e in &n.inputs {
                    if seen.insert(e.node) {
                        queue.push_back((e.node, depth + 1));
                    }
                }
            }
        }
    }
    let mut hits: Vec<usize> = hits.into_iter().collect();
    hits.sort();
    hits
}

/// If two paths from `src` to `dst` share no intermediate node, returns the
/// intermediate nodes of one such pair. Max-flow on the vertex-split graph,
/// stopped after two augmentations.
fn disjoint_paths(graph: &Graph, consumers: &[Vec<usize>], src: usize, dst: usize) -> Option<Vec<usize>> {
    // Vertex v becomes v_in = 2v and v_out = 2v + 1. Capacities are all one,
    // except the split arcs of the endpoints, which are unbounded.
    let n = graph.nodes.len();
    let mut cap: HashMap<(usize, usize), u32> = HashMap::new();
    let mut adj = vec![Vec::new(); 2 * n];
    let mut arc = |cap: &mut HashMap<(usize, usize), u32>, u: usize, v: usize, c: u32| {
        if !cap.contains_key(&(u, v)) && !cap.contains_key(&(v, u)) {
            adj[u].push(v);
            adj[v].push(u);
        }
        cap.entry((v, u)).or_insert(0);
        let e = cap.entry((u, v)).or_insert(0);
        *e = (*e).max(c);
    };
    for v in 0..n {
        let c = if v == src || v == dst { 2 } else { 1 };
        arc(&mut cap, 2 * v, 2 * v + 1, c);
        for &w in &consumers[v] {
            arc(&mut cap, 2 * v + 1, 2 * w, 1);
        }
    }
    let (s, t) = (2 * src, 2 * dst + 1);
    for _ in 0..2 {
        let mut prev = vec![usize::MAX; 2 * n];
        prev[s] = s;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if prev[v] == usize::MAX && cap[&(u, v)] > 0 {
                    prev[v] = u;
                    queue.push_back(v);
                }
            }
        }
        if prev[t] == usize::MAX {
            return None;
        }
        let mut v = t;
        while v != s {
            let u = prev[v];
            *cap.get_mut(&(u, v)).expect("arc") -= 1;
            *cap.get_mut(&(v, u)).expect("arc") += 1;
            v = u;
        }
    }
    // Intermediate nodes carrying flow: their split arc is saturated.
    let mut on_paths: Vec<usize> =
        (0..n).filter(|&v| v != src && v != dst && cap[&(2 * v, 2 * v + 1)] == 0).collect();
    on_paths.sort();
    Some(on_paths)
}
