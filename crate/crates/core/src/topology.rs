//! Spanning trees, polytree orientation, Markov blankets and graph export.

use std::collections::BTreeSet;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metric::{causal_edge_weights, DistanceMatrix};
use crate::signal::SpectralMatrix;
use crate::wiener::noncausal_wiener;

/// Default relative RMS threshold for MISO blanket membership.
pub const DEFAULT_BLANKET_THRESHOLD: f64 = 1e-3;

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false if `a` and `b` were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// Undirected weighted edge stored with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UndirectedGraph {
    labels: Vec<String>,
    edges: Vec<Edge>,
}

impl UndirectedGraph {
    /// Edges are normalized to `a < b` and sorted.
    pub fn new(labels: Vec<String>, edges: Vec<Edge>) -> Result<Self> {
        let n = labels.len();
        let mut seen = BTreeSet::new();
        let mut norm = Vec::with_capacity(edges.len());
        for e in edges {
            if e.a >= n || e.b >= n {
                return Err(Error::UnknownNode(format!("edge ({}, {}) outside {n} nodes", e.a, e.b)));
            }
            if e.a == e.b {
                return Err(Error::InvalidInput(format!("self-loop on '{}'", labels[e.a])));
            }
            let (a, b) = (e.a.min(e.b), e.a.max(e.b));
            if !seen.insert((a, b)) {
                return Err(Error::InvalidInput(format!(
                    "duplicate edge '{}' -- '{}'",
                    labels[a], labels[b]
                )));
            }
            norm.push(Edge { a, b, weight: e.weight });
        }
        norm.sort_by_key(|e| (e.a, e.b));
        Ok(Self { labels, edges: norm })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_set(&self) -> BTreeSet<(usize, usize)> {
        self.edges.iter().map(|e| (e.a, e.b)).collect()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        let key = (a.min(b), a.max(b));
        self.edges.iter().any(|e| (e.a, e.b) == key)
    }

    pub fn neighbors(&self, i: usize) -> BTreeSet<usize> {
        self.edges
            .iter()
            .filter_map(|e| match (e.a == i, e.b == i) {
                (true, _) => Some(e.b),
                (_, true) => Some(e.a),
                _ => None,
            })
            .collect()
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.weight).sum()
    }

    pub fn is_tree(&self) -> bool {
        let n = self.n();
        if n == 0 || self.edges.len() != n - 1 {
            return false;
        }
        let mut uf = UnionFind::new(n);
        self.edges.iter().all(|e| uf.union(e.a, e.b))
    }
}

/// Connected acyclic undirected graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree(UndirectedGraph);

impl Tree {
    pub fn new(graph: UndirectedGraph) -> Result<Self> {
        if !graph.is_tree() {
            return Err(Error::InvalidInput(format!(
                "{} edges on {} nodes do not form a spanning tree",
                graph.edges().len(),
                graph.n()
            )));
        }
        Ok(Self(graph))
    }

    pub fn graph(&self) -> &UndirectedGraph {
        &self.0
    }

    pub fn into_graph(self) -> UndirectedGraph {
        self.0
    }
}

impl std::ops::Deref for Tree {
    type Target = UndirectedGraph;

    fn deref(&self) -> &UndirectedGraph {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectedEdge {
    pub parent: usize,
    pub child: usize,
    pub weight: f64,
    pub tie: bool,
}

/// Directed graph whose skeleton is a tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytree {
    labels: Vec<String>,
    edges: Vec<DirectedEdge>,
}

impl Polytree {
    pub fn new(labels: Vec<String>, mut edges: Vec<DirectedEdge>) -> Result<Self> {
        let skeleton = edges
            .iter()
            .map(|e| Edge {
                a: e.parent,
                b: e.child,
                weight: e.weight,
            })
            .collect();
        Tree::new(UndirectedGraph::new(labels.clone(), skeleton)?)?;
        edges.sort_by_key(|e| (e.parent.min(e.child), e.parent.max(e.child)));
        Ok(Self { labels, edges })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn edges(&self) -> &[DirectedEdge] {
        &self.edges
    }

    pub fn parents(&self, i: usize) -> BTreeSet<usize> {
        self.edges.iter().filter(|e| e.child == i).map(|e| e.parent).collect()
    }

    pub fn children(&self, i: usize) -> BTreeSet<usize> {
        self.edges.iter().filter(|e| e.parent == i).map(|e| e.child).collect()
    }

    pub fn roots(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.parents(i).is_empty()).collect()
    }

    pub fn directed_edge_set(&self) -> BTreeSet<(usize, usize)> {
        self.edges.iter().map(|e| (e.parent, e.child)).collect()
    }

    pub fn skeleton(&self) -> Tree {
        let edges = self
            .edges
            .iter()
            .map(|e| Edge {
                a: e.parent,
                b: e.child,
                weight: e.weight,
            })
            .collect();
        Tree(UndirectedGraph::new(self.labels.clone(), edges).expect("validated on construction"))
    }

    /// Nodes in an order where every parent precedes its children.
    pub fn topological_order(&self) -> Vec<usize> {
        let n = self.n();
        let mut indegree: Vec<usize> = (0..n).map(|i| self.parents(i).len()).collect();
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for c in self.children(i) {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        order
    }

    pub fn tie_count(&self) -> usize {
        self.edges.iter().filter(|e| e.tie).count()
    }
}

/// Kruskal on the complete graph; equal weights are resolved by the smaller
/// `(min index, max index)` pair.
pub fn minimum_spanning_tree(w: &DistanceMatrix) -> Result<Tree> {
    if !w.kind().is_symmetric() {
        return Err(Error::InvalidInput(format!(
            "spanning tree needs a symmetric matrix, got {}",
            w.kind().as_str()
        )));
    }
    let n = w.n();
    if n < 2 {
        return Err(Error::InvalidInput(format!("spanning tree needs at least 2 nodes, got {n}")));
    }
    let mut candidates: Vec<Edge> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .map(|(a, b)| Edge { a, b, weight: w.get(a, b) })
        .collect();
    candidates.sort_by(|x, y| x.weight.total_cmp(&y.weight).then((x.a, x.b).cmp(&(y.a, y.b))));
    let mut uf = UnionFind::new(n);
    let mut edges = Vec::with_capacity(n - 1);
    for e in candidates {
        if uf.union(e.a, e.b) {
            edges.push(e);
            if edges.len() == n - 1 {
                break;
            }
        }
    }
    Tree::new(UndirectedGraph::new(w.labels().to_vec(), edges)?)
}

/// Spanning tree on `min(DC(j,i), DC(i,j))`, each edge pointing from the node
/// that better explains the other.
pub fn build_polytree(dc: &DistanceMatrix) -> Result<Polytree> {
    let (weights, dir) = causal_edge_weights(dc)?;
    let tree = minimum_spanning_tree(&weights)?;
    let edges = tree
        .edges()
        .iter()
        .map(|e| {
            // +1 at (a, b): b drives a.
            let (parent, child) = if dir.get(e.a, e.b) == 1 { (e.b, e.a) } else { (e.a, e.b) };
            DirectedEdge {
                parent,
                child,
                weight: e.weight,
                tie: dir.is_tie(e.a, e.b),
            }
        })
        .collect();
    Polytree::new(dc.labels().to_vec(), edges)
}

/// Parents, children and the other parents of those children.
pub fn markov_blanket(t: &Polytree, node: usize) -> Result<BTreeSet<usize>> {
    if node >= t.n() {
        return Err(Error::UnknownNode(format!("index {node} out of range for {} nodes", t.n())));
    }
    let mut out = t.parents(node);
    for c in t.children(node) {
        out.insert(c);
        out.extend(t.parents(c));
    }
    out.remove(&node);
    Ok(out)
}

/// Neighbor candidates of every node from the full MISO Wiener filter,
/// `threshold` relative to the strongest filter of that node.
pub fn estimated_blankets(s: &SpectralMatrix, threshold: f64) -> Result<Vec<BTreeSet<usize>>> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidParameter(format!("threshold must be >= 0, got {threshold}")));
    }
    let n = s.n();
    (0..n)
        .into_par_iter()
        .map(|j| {
            let inputs: Vec<usize> = (0..n).filter(|&i| i != j).collect();
            let sol = noncausal_wiener(s, j, &inputs)?;
            let rms: Vec<f64> = sol.filters.iter().map(|f| f.rms()).collect();
            let max = rms.iter().copied().fold(0.0, f64::max);
            Ok(inputs
                .iter()
                .zip(&rms)
                .filter(|(_, &r)| max > 0.0 && r > threshold * max)
                .map(|(&i, _)| i)
                .collect())
        })
        .collect()
}

/// Drops from `candidates` every node `i` reached more cheaply through another
/// candidate `c`: `max(D(i,c), D(c,j)) < D(i,j)`.
pub fn purge_co_parents(d: &DistanceMatrix, j: usize, candidates: &BTreeSet<usize>) -> BTreeSet<usize> {
    candidates
        .iter()
        .copied()
        .filter(|&i| {
            !candidates
                .iter()
                .any(|&c| c != i && d.get(i, c).max(d.get(c, j)) < d.get(i, j))
        })
        .collect()
}

/// Undirected topology from per-node MISO Wiener blankets with co-parents purged.
pub fn miso_blanket_topology(s: &SpectralMatrix, d: &DistanceMatrix, threshold: f64) -> Result<UndirectedGraph> {
    if s.labels() != d.labels() {
        return Err(Error::ShapeMismatch("spectral and distance matrices disagree on labels".into()));
    }
    let blankets = estimated_blankets(s, threshold)?;
    let mut pairs = BTreeSet::new();
    for (j, cand) in blankets.iter().enumerate() {
        for i in purge_co_parents(d, j, cand) {
            pairs.insert((i.min(j), i.max(j)));
        }
    }
    let edges = pairs.into_iter().map(|(a, b)| Edge { a, b, weight: d.get(a, b) }).collect();
    UndirectedGraph::new(s.labels().to_vec(), edges)
}

/// Graphs that render to DOT and edge-list CSV.
pub trait GraphExport {
    fn labels(&self) -> &[String];
    fn directed(&self) -> bool;
    /// `(from, to, weight, tie)` in output order.
    fn export_edges(&self) -> Vec<(usize, usize, f64, bool)>;
}

impl GraphExport for UndirectedGraph {
    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn directed(&self) -> bool {
        false
    }

    fn export_edges(&self) -> Vec<(usize, usize, f64, bool)> {
        self.edges.iter().map(|e| (e.a, e.b, e.weight, false)).collect()
    }
}

impl GraphExport for Tree {
    fn labels(&self) -> &[String] {
        &self.0.labels
    }

    fn directed(&self) -> bool {
        false
    }

    fn export_edges(&self) -> Vec<(usize, usize, f64, bool)> {
        self.0.export_edges()
    }
}

impl GraphExport for Polytree {
    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn directed(&self) -> bool {
        true
    }

    fn export_edges(&self) -> Vec<(usize, usize, f64, bool)> {
        self.edges.iter().map(|e| (e.parent, e.child, e.weight, e.tie)).collect()
    }
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

pub fn export_dot<G: GraphExport + ?Sized, W: Write>(graph: &G, sink: &mut W) -> Result<()> {
    let (kw, arrow) = if graph.directed() { ("digraph", "->") } else { ("graph", "--") };
    let labels = graph.labels();
    writeln!(sink, "{kw} network {{")?;
    for l in labels {
        writeln!(sink, "  {};", quote(l))?;
    }
    for (a, b, w, tie) in graph.export_edges() {
        let style = if tie { ", style=\"dashed\"" } else { "" };
        writeln!(
            sink,
            "  {} {arrow} {} [label=\"{w:.4}\"{style}];",
            quote(&labels[a]),
            quote(&labels[b])
        )?;
    }
    writeln!(sink, "}}")?;
    Ok(())
}

pub fn to_dot<G: GraphExport + ?Sized>(graph: &G) -> String {
    let mut buf = Vec::new();
    export_dot(graph, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("labels are UTF-8")
}

/// Edge list with columns `node_a, node_b, weight, direction, tie_flag`.
pub fn export_edge_list<G: GraphExport + ?Sized, W: Write>(graph: &G, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let labels = graph.labels();
    let direction = if graph.directed() { "->" } else { "--" };
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["node_a", "node_b", "weight", "direction", "tie_flag"]).map_err(io)?;
    for (a, b, weight, tie) in graph.export_edges() {
        w.write_record([
            labels[a].as_str(),
            labels[b].as_str(),
            &weight.to_string(),
            direction,
            if tie { "1" } else { "0" },
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Labeled tree on `n` nodes from a Prüfer sequence of length `n - 2`.
pub fn prufer_tree(seq: &[usize], n: usize) -> Result<Vec<(usize, usize)>> {
    if n < 2 || seq.len() != n - 2 || seq.iter().any(|&v| v >= n) {
        return Err(Error::InvalidParameter(format!(
            "a Prüfer sequence for {n} nodes has length {} with entries below {n}",
            n.saturating_sub(2)
        )));
    }
    let mut degree = vec![1usize; n];
    for &v in seq {
        degree[v] += 1;
    }
    let mut leaves: BTreeSet<usize> = (0..n).filter(|&i| degree[i] == 1).collect();
    let mut edges = Vec::with_capacity(n - 1);
    for &v in seq {
        let leaf = leaves.pop_first().expect("a leaf always exists");
        edges.push((leaf.min(v), leaf.max(v)));
        degree[v] -= 1;
        if degree[v] == 1 {
            leaves.insert(v);
        }
    }
    let a = leaves.pop_first().expect("two leaves remain");
    let b = leaves.pop_first().expect("two leaves remain");
    edges.push((a, b));
    Ok(edges)
}
