//! Node-typed undirected simple graphs and the structural utilities the
//! classifier, generator and rule checker share.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeType {
    pub id: usize,
    pub name: String,
}

/// The node types a dataset (and therefore the generator) can use. Ids are
/// dense `0..k`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct CandidateSet {
    types: Vec<NodeType>,
}

impl CandidateSet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        let types = names
            .into_iter()
            .enumerate()
            .map(|(id, name)| NodeType { id, name: name.into() })
            .collect();
        Self { types }
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn types(&self) -> &[NodeType] {
        &self.types
    }

    pub fn get(&self, id: usize) -> Option<&NodeType> {
        self.types.get(id)
    }

    pub fn name(&self, id: usize) -> &str {
        self.types.get(id).map_or("?", |t| t.name.as_str())
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.types.iter().position(|t| t.name == name)
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.types.iter().map(|t| t.id)
    }
}

impl From<Vec<String>> for CandidateSet {
    fn from(names: Vec<String>) -> Self {
        Self::new(names)
    }
}

impl From<CandidateSet> for Vec<String> {
    fn from(set: CandidateSet) -> Self {
        set.types.into_iter().map(|t| t.name).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    OneHotNodeType,
    NodeDegree,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub mode: FeatureMode,
    pub dim: usize,
}

impl FeatureSpec {
    pub fn one_hot(types: usize) -> Self {
        Self {
            mode: FeatureMode::OneHotNodeType,
            dim: types,
        }
    }

    pub fn degree() -> Self {
        Self {
            mode: FeatureMode::NodeDegree,
            dim: 1,
        }
    }

    /// Feature row of a node with the given type and degree.
    pub fn encode(&self, node_type: usize, degree: usize) -> Result<Vec<f64>> {
        match self.mode {
            FeatureMode::NodeDegree => Ok(vec![degree as f64]),
            FeatureMode::OneHotNodeType => {
                if node_type >= self.dim {
                    return Err(Error::Index {
                        index: node_type,
                        len: self.dim,
                    });
                }
                let mut row = vec![0.0; self.dim];
                row[node_type] = 1.0;
                Ok(row)
            }
        }
    }
}

/// Undirected simple graph with a type id per node. Edges are stored as
/// `(min, max)` pairs. Mutating operations return a new graph.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawGraph")]
pub struct LabeledGraph {
    node_types: Vec<usize>,
    edges: BTreeSet<(usize, usize)>,
}

#[derive(Deserialize)]
struct RawGraph {
    node_types: Vec<usize>,
    edges: Vec<(usize, usize)>,
}

impl TryFrom<RawGraph> for LabeledGraph {
    type Error = Error;

    fn try_from(raw: RawGraph) -> Result<Self> {
        LabeledGraph::from_edges(raw.node_types, raw.edges)
    }
}

impl LabeledGraph {
    /// Graph with the given node types and no edges.
    pub fn with_nodes(node_types: Vec<usize>) -> Self {
        Self {
            node_types,
            edges: BTreeSet::new(),
        }
    }

    pub fn single(node_type: usize) -> Self {
        Self::with_nodes(vec![node_type])
    }

    /// Builds a graph from an edge list, collapsing duplicate and reversed
    /// pairs. Self-loops and out-of-range endpoints are rejected.
    pub fn from_edges(node_types: Vec<usize>, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let n = node_types.len();
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u == v {
                return Err(Error::SelfLoop(u));
            }
            for x in [u, v] {
                if x >= n {
                    return Err(Error::Index { index: x, len: n });
                }
            }
            set.insert((u.min(v), u.max(v)));
        }
        Ok(Self { node_types, edges: set })
    }

    pub fn node_count(&self) -> usize {
        self.node_types.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_types.is_empty()
    }

    pub fn node_types(&self) -> &[usize] {
        &self.node_types
    }

    pub fn node_type(&self, i: usize) -> usize {
        self.node_types[i]
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&(u.min(v), u.max(v)))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.node_count()];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    pub fn degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|&&(u, v)| u == i || v == i).count()
    }

    pub fn add_edge(&self, u: usize, v: usize) -> Result<Self> {
        let n = self.node_count();
        if u == v {
            return Err(Error::SelfLoop(u));
        }
        for x in [u, v] {
            if x >= n {
                return Err(Error::Index { index: x, len: n });
            }
        }
        if self.has_edge(u, v) {
            return Err(Error::RuleViolation(crate::rules::Violation::DuplicateEdge));
        }
        let mut next = self.clone();
        next.edges.insert((u.min(v), u.max(v)));
        Ok(next)
    }

    /// Appends a node of `node_type` connected only to `anchor`.
    pub fn add_node_with_edge(&self, anchor: usize, node_type: usize) -> Result<Self> {
        let n = self.node_count();
        if anchor >= n {
            return Err(Error::Index { index: anchor, len: n });
        }
        let mut next = self.clone();
        next.node_types.push(node_type);
        next.edges.insert((anchor, n));
        Ok(next)
    }

    pub fn component_count(&self) -> usize {
        let mut uf = UnionFind::new(self.node_count());
        for &(u, v) in &self.edges {
            uf.union(u, v);
        }
        uf.set_count()
    }

    /// True iff some edge closes a loop, i.e. joins two nodes already in the
    /// same component.
    pub fn has_cycle(&self) -> bool {
        let mut uf = UnionFind::new(self.node_count());
        self.edges.iter().any(|&(u, v)| !uf.union(u, v))
    }

    /// Dense 0/1 adjacency matrix.
    pub fn adjacency(&self) -> Tensor {
        let n = self.node_count();
        let mut a = Tensor::zeros(n, n);
        for &(u, v) in &self.edges {
            a.set(u, v, 1.0);
            a.set(v, u, 1.0);
        }
        a
    }

    /// `D^{-1/2} (A + I) D^{-1/2}` where `D` is the degree matrix of `A + I`.
    pub fn normalized_adjacency(&self) -> Tensor {
        let n = self.node_count();
        let inv_sqrt: Vec<f64> = self
            .degrees()
            .into_iter()
            .map(|d| 1.0 / ((d + 1) as f64).sqrt())
            .collect();
        let mut a = Tensor::zeros(n, n);
        for (i, d) in inv_sqrt.iter().enumerate() {
            a.set(i, i, d * d);
        }
        for &(u, v) in &self.edges {
            let w = inv_sqrt[u] * inv_sqrt[v];
            a.set(u, v, w);
            a.set(v, u, w);
        }
        a
    }

    /// `n × d` node features. Degree features are recomputed from the
    /// current edge set.
    pub fn feature_matrix(&self, spec: &FeatureSpec) -> Result<Tensor> {
        if self.is_empty() {
            return Err(Error::EmptyGraph);
        }
        let degrees = self.degrees();
        let mut data = Vec::with_capacity(self.node_count() * spec.dim);
        for (t, d) in self.node_types.iter().zip(degrees) {
            data.extend(spec.encode(*t, d)?);
        }
        Tensor::from_vec(self.node_count(), spec.dim, data)
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let n = self.node_count();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Config("not a permutation".into()));
        }
        let mut types = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            types[p] = self.node_types[i];
        }
        Self::from_edges(types, self.edges.iter().map(|&(u, v)| (perm[u], perm[v])))
    }

    /// Disjoint union; `other`'s nodes are appended after `self`'s.
    pub fn disjoint_union(&self, other: &Self) -> Self {
        let offset = self.node_count();
        let mut g = self.clone();
        g.node_types.extend_from_slice(&other.node_types);
        g.edges
            .extend(other.edges.iter().map(|&(u, v)| (u + offset, v + offset)));
        g
    }

    /// Graphviz rendering, one fill color per node type.
    pub fn to_dot(&self, candidates: &CandidateSet, name: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "graph \"{}\" {{", name.replace('"', "'"));
        let _ = writeln!(out, "  node [style=filled, shape=circle, fontname=\"Helvetica\"];");
        for (i, &t) in self.node_types.iter().enumerate() {
            let _ = writeln!(
                out,
                "  n{i} [label=\"{}\", fillcolor=\"{}\"];",
                candidates.name(t),
                type_color(candidates.name(t), t)
            );
        }
        for &(u, v) in &self.edges {
            let _ = writeln!(out, "  n{u} -- n{v};");
        }
        out.push_str("}\n");
        out
    }
}

fn type_color(name: &str, id: usize) -> &'static str {
    const PALETTE: [&str; 8] = [
        "#ffd92f", "#66c2a5", "#fc8d62", "#8da0cb", "#e78ac3", "#a6d854", "#e5c494", "#b3b3b3",
    ];
    match name {
        "C" => "#f2c94c",
        "N" => "#2d9cdb",
        "O" => "#eb5757",
        "F" => "#6fcf97",
        "I" => "#9b51e0",
        "Cl" => "#27ae60",
        "Br" => "#a0522d",
        _ => PALETTE[id % PALETTE.len()],
    }
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
    sets: usize,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
            sets: n,
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Merges the sets of `a` and `b`; false if they were already joined.
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
        self.sets -= 1;
        true
    }

    pub fn set_count(&self) -> usize {
        self.sets
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn triangle() -> LabeledGraph {
        LabeledGraph::from_edges(vec![0; 3], [(0, 1), (1, 2), (2, 0)]).unwrap()
    }

    fn path(n: usize) -> LabeledGraph {
        LabeledGraph::from_edges(vec![0; n], (1..n).map(|i| (i - 1, i))).unwrap()
    }

    #[test]
    fn degree_features() {
        let f = triangle().feature_matrix(&FeatureSpec::degree()).unwrap();
        assert_eq!(f, Tensor::from_rows(&[[2.0], [2.0], [2.0]]));
        let f = path(3).feature_matrix(&FeatureSpec::degree()).unwrap();
        assert_eq!(f, Tensor::from_rows(&[[1.0], [2.0], [1.0]]));
    }

    #[test]
    fn one_hot_features() {
        let f = LabeledGraph::single(0)
            .feature_matrix(&FeatureSpec::one_hot(7))
            .unwrap();
        assert_eq!(f.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(LabeledGraph::single(7)
            .feature_matrix(&FeatureSpec::one_hot(7))
            .is_err());
        assert!(matches!(
            LabeledGraph::default().feature_matrix(&FeatureSpec::degree()),
            Err(Error::EmptyGraph)
        ));
    }

    #[test]
    fn normalized_adjacency_examples() {
        assert_eq!(LabeledGraph::single(0).normalized_adjacency(), Tensor::identity(1));
        let a = path(2).normalized_adjacency();
        for v in a.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
        // Degrees of A + I on P3 are 2, 3, 2.
        let a = path(3).normalized_adjacency();
        let centre_end = 1.0 / 6f64.sqrt();
        assert!((a.get(0, 1) - centre_end).abs() < 1e-15);
        assert!((a.get(1, 2) - centre_end).abs() < 1e-15);
        assert!((a.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((a.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(a.get(0, 2), 0.0);
    }

    #[test]
    fn cycle_detection() {
        assert!(triangle().has_cycle());
        let star = LabeledGraph::from_edges(vec![0; 6], (1..6).map(|i| (0, i))).unwrap();
        assert!(!star.has_cycle());
        assert!(!LabeledGraph::single(0).has_cycle());
    }

    #[test]
    fn add_edge_contract() {
        let g = LabeledGraph::with_nodes(vec![0, 0]);
        let h = g.add_edge(0, 1).unwrap();
        assert_eq!(h.edge_count(), 1);
        assert_eq!(h.node_count(), 2);
        assert_eq!(g.edge_count(), 0);
        assert!(matches!(
            h.add_edge(1, 0),
            Err(Error::RuleViolation(crate::rules::Violation::DuplicateEdge))
        ));
        assert!(matches!(g.add_edge(1, 1), Err(Error::SelfLoop(1))));
        assert!(matches!(g.add_edge(0, 2), Err(Error::Index { index: 2, .. })));
    }

    #[test]
    fn add_node_with_edge_contract() {
        let g = LabeledGraph::single(0);
        let h = g.add_node_with_edge(0, 3).unwrap();
        assert_eq!(h, LabeledGraph::from_edges(vec![0, 3], [(0, 1)]).unwrap());
        assert_eq!(h.degree(1), 1);
        assert_eq!(g.node_count(), 1);
        assert!(matches!(
            g.add_node_with_edge(1, 0),
            Err(Error::Index { index: 1, len: 1 })
        ));
        let tree = path(4).add_node_with_edge(2, 0).unwrap();
        assert!(!tree.has_cycle());
    }

    #[test]
    fn json_shape() {
        let g = LabeledGraph::from_edges(vec![0, 1, 2], [(1, 0), (2, 1)]).unwrap();
        let json = serde_json::to_string(&g).unwrap();
        assert_eq!(json, r#"{"node_types":[0,1,2],"edges":[[0,1],[1,2]]}"#);
        let back: LabeledGraph = serde_json::from_str(&json).unwrap();
        assert_eq!(back, g);
        assert!(serde_json::from_str::<LabeledGraph>(r#"{"node_types":[0],"edges":[[0,0]]}"#).is_err());
        assert!(serde_json::from_str::<LabeledGraph>(r#"{"node_types":[0],"edges":[[0,3]]}"#).is_err());
    }

    #[test]
    fn dot_has_every_node_and_edge() {
        let cands = CandidateSet::new(["C", "N", "O"]);
        let g = LabeledGraph::from_edges(vec![0, 1, 2], [(0, 1), (0, 2)]).unwrap();
        let dot = g.to_dot(&cands, "x");
        assert!(dot.starts_with("graph \"x\" {"));
        assert!(dot.contains("n1 [label=\"N\""));
        assert!(dot.contains("n0 -- n2;"));
        assert_eq!(dot.matches("--").count(), 2);
    }

    fn arb_graph(max_n: usize) -> impl Strategy<Value = LabeledGraph> {
        (1..=max_n).prop_flat_map(|n| {
            prop::collection::vec((0..n, 0..n), 0..=n * 2).prop_map(move |pairs| {
                LabeledGraph::from_edges(vec![0; n], pairs.into_iter().filter(|(u, v)| u != v)).unwrap()
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn has_cycle_matches_forest_edge_count(g in arb_graph(12)) {
            // A forest on n nodes with c components has exactly n - c edges.
            let oracle = g.edge_count() > g.node_count() - brute_force_components(&g);
            prop_assert_eq!(g.has_cycle(), oracle);
        }

        #[test]
        fn normalized_adjacency_symmetric_unit_range(g in arb_graph(10)) {
            let a = g.normalized_adjacency();
            for i in 0..a.rows() {
                for j in 0..a.cols() {
                    prop_assert_eq!(a.get(i, j), a.get(j, i));
                    prop_assert!((0.0..=1.0).contains(&a.get(i, j)));
                }
            }
        }

        #[test]
        fn edits_never_mutate_input(g in arb_graph(8), u in 0usize..8, v in 0usize..8) {
            let snapshot = g.clone();
            let _ = g.add_edge(u, v);
            let _ = g.add_node_with_edge(u, 0);
            prop_assert_eq!(g, snapshot);
        }
    }

    #[allow(clippy::needless_range_loop)]
    fn brute_force_components(g: &LabeledGraph) -> usize {
        let n = g.node_count();
        let mut seen = vec![false; n];
        let mut count = 0;
        for s in 0..n {
            if seen[s] {
                continue;
            }
            count += 1;
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(x) = stack.pop() {
                for y in 0..n {
                    if !seen[y] && g.has_edge(x, y) {
                        seen[y] = true;
                        stack.push(y);
                    }
                }
            }
        }
        count
    }
}
