//! Graph, mask and dataset containers.
//!
//! Undirected edges are stored as two directed pairs `(i, j)` and `(j, i)`
//! carrying identical edge features, so `edges.len()` counts directed pairs.
//! Graphs built through [`Graph::from_undirected`] keep each pair adjacent,
//! which is what lets the dataset file list every undirected edge once.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::engine::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    pub node_count: usize,
    pub edges: Vec<(usize, usize)>,
    pub node_features: Matrix,
    pub edge_features: Matrix,
}

/// A broken [`Graph`] invariant, with the offending index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    EndpointOutOfRange { edge: usize, node: usize },
    SelfLoop { edge: usize },
    DuplicatePair { edge: usize },
    MissingReverse { edge: usize },
    ReverseFeatureMismatch { edge: usize },
    NodeFeatureRows { expected: usize, found: usize },
    EdgeFeatureRows { expected: usize, found: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EndpointOutOfRange { edge, node } => {
                write!(f, "endpoint out of range: edge {edge} references node {node}")
            }
            Violation::SelfLoop { edge } => write!(f, "self-loop at edge {edge}"),
            Violation::DuplicatePair { edge } => write!(f, "duplicate directed pair at edge {edge}"),
            Violation::MissingReverse { edge } => write!(f, "missing reverse pair for edge {edge}"),
            Violation::ReverseFeatureMismatch { edge } => {
                write!(f, "reverse pair of edge {edge} has different features")
            }
            Violation::NodeFeatureRows { expected, found } => {
                write!(f, "node feature rows: expected {expected}, found {found}")
            }
            Violation::EdgeFeatureRows { expected, found } => {
                write!(f, "edge feature rows: expected {expected}, found {found}")
            }
        }
    }
}

impl Graph {
    /// Graph with no nodes and the given feature widths.
    pub fn empty(node_dim: usize, edge_dim: usize) -> Self {
        Self {
            node_count: 0,
            edges: Vec::new(),
            node_features: Array2::zeros((0, node_dim)),
            edge_features: Array2::zeros((0, edge_dim)),
        }
    }

    /// Materialises both directions of every undirected edge. `edge_features`
    /// has one row per undirected edge.
    pub fn from_undirected(
        node_count: usize,
        undirected: &[(usize, usize)],
        node_features: Matrix,
        edge_features: &Matrix,
    ) -> Self {
        let mut edges = Vec::with_capacity(undirected.len() * 2);
        let mut rows = Vec::with_capacity(undirected.len() * 2);
        for (e, &(i, j)) in undirected.iter().enumerate() {
            edges.push((i, j));
            edges.push((j, i));
            rows.push(e);
            rows.push(e);
        }
        let edge_features = edge_features.select(Axis(0), &rows);
        Self {
            node_count,
            edges,
            node_features,
            edge_features,
        }
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_dim(&self) -> usize {
        self.node_features.ncols()
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_features.ncols()
    }

    /// Indices of the directed pairs `(i, j)` with `i < j`, i.e. one
    /// representative per undirected edge, in storage order.
    pub fn undirected_edge_indices(&self) -> Vec<usize> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, &(i, j))| i < j)
            .map(|(e, _)| e)
            .collect()
    }

    /// Neighbour lists (by directed pairs leaving each node).
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(i, j) in &self.edges {
            if i < self.node_count && j < self.node_count {
                adj[i].push(j);
            }
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency().iter().map(Vec::len).collect()
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.node_features.nrows() != self.node_count {
            out.push(Violation::NodeFeatureRows {
                expected: self.node_count,
                found: self.node_features.nrows(),
            });
        }
        if self.edge_features.nrows() != self.edges.len() {
            out.push(Violation::EdgeFeatureRows {
                expected: self.edges.len(),
                found: self.edge_features.nrows(),
            });
        }
        let mut seen: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            for node in [i, j] {
                if node >= self.node_count {
                    out.push(Violation::EndpointOutOfRange { edge: e, node });
                }
            }
            if i == j {
                out.push(Violation::SelfLoop { edge: e });
            }
            if seen.insert((i, j), e).is_some() {
                out.push(Violation::DuplicatePair { edge: e });
            }
        }
        let features_ok = self.edge_features.nrows() == self.edges.len();
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            match seen.get(&(j, i)) {
                None => out.push(Violation::MissingReverse { edge: e }),
                Some(&r) => {
                    if features_ok && self.edge_features.row(e) != self.edge_features.row(r) {
                        out.push(Violation::ReverseFeatureMismatch { edge: e });
                    }
                }
            }
        }
        out
    }

    /// Subgraph induced by `keep` (in the given order, which becomes the new
    /// index order). Directed pairs survive iff both endpoints survive.
    pub fn induced_subgraph(&self, keep: &[usize]) -> Graph {
        let mut remap = vec![usize::MAX; self.node_count];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let mut edges = Vec::new();
        let mut rows = Vec::new();
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            if remap[i] != usize::MAX && remap[j] != usize::MAX {
                edges.push((remap[i], remap[j]));
                rows.push(e);
            }
        }
        Graph {
            node_count: keep.len(),
            edges,
            node_features: self.node_features.select(Axis(0), keep),
            edge_features: self.edge_features.select(Axis(0), &rows),
        }
    }

    /// Keeps nodes whose mask value is at least `threshold`. Returns the empty
    /// graph when nothing survives.
    pub fn masked_subgraph(&self, node_mask: &[f64], threshold: f64) -> Graph {
        assert_eq!(node_mask.len(), self.node_count, "mask length must equal node count");
        let keep: Vec<usize> = (0..self.node_count)
            .filter(|&i| node_mask[i] >= threshold)
            .collect();
        self.induced_subgraph(&keep)
    }

    /// Removes both directions of the undirected edge `{a, b}`.
    pub fn without_edge(&self, a: usize, b: usize) -> Graph {
        let mut edges = Vec::with_capacity(self.edges.len());
        let mut rows = Vec::with_capacity(self.edges.len());
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            if (i, j) != (a, b) && (i, j) != (b, a) {
                edges.push((i, j));
                rows.push(e);
            }
        }
        Graph {
            node_count: self.node_count,
            edges,
            node_features: self.node_features.clone(),
            edge_features: self.edge_features.select(Axis(0), &rows),
        }
    }

    pub fn without_node(&self, node: usize) -> Graph {
        let keep: Vec<usize> = (0..self.node_count).filter(|&i| i != node).collect();
        self.induced_subgraph(&keep)
    }

    /// Maximal connected node sets, each sorted, ordered by smallest member.
    pub fn connected_components(&self) -> Vec<Vec<usize>> {
        let adj = self.adjacency();
        let mut seen = vec![false; self.node_count];
        let mut out = Vec::new();
        for start in 0..self.node_count {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.connected_components().len() <= 1
    }

    /// Restricts the graph to its largest connected component (lowest
    /// smallest-member wins ties).
    pub fn largest_component(&self) -> Graph {
        let comps = self.connected_components();
        match comps.iter().max_by(|a, b| a.len().cmp(&b.len()).then(b[0].cmp(&a[0]))) {
            Some(best) if comps.len() > 1 => self.induced_subgraph(best),
            _ => self.clone(),
        }
    }

    /// Edge set as unordered pairs, for structural comparisons.
    pub fn undirected_pairs(&self) -> HashSet<(usize, usize)> {
        self.edges
            .iter()
            .map(|&(i, j)| (i.min(j), i.max(j)))
            .collect()
    }
}

/// Per-channel node and edge importances.
#[derive(Clone, Debug, PartialEq)]
pub struct ExplanationMasks {
    /// `V×K`
    pub node_mask: Matrix,
    /// `E×K`, aligned with the owning graph's directed pairs.
    pub edge_mask: Matrix,
}

impl ExplanationMasks {
    pub fn zeros(nodes: usize, edges: usize, channels: usize) -> Self {
        Self {
            node_mask: Array2::zeros((nodes, channels)),
            edge_mask: Array2::zeros((edges, channels)),
        }
    }

    pub fn channels(&self) -> usize {
        self.node_mask.ncols()
    }

    pub fn in_unit_range(&self) -> bool {
        self.node_mask
            .iter()
            .chain(self.edge_mask.iter())
            .all(|&x| (0.0..=1.0).contains(&x))
    }

    pub fn is_binary(&self) -> bool {
        self.node_mask
            .iter()
            .chain(self.edge_mask.iter())
            .all(|&x| x == 0.0 || x == 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Regression,
    Classification,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledGraph {
    pub id: String,
    pub graph: Graph,
    /// One-hot for classification, a single value for regression.
    pub target: Vec<f64>,
    pub ground_truth: Option<ExplanationMasks>,
    /// Names of the motifs the generator planted, when known.
    pub motifs: Vec<String>,
}

impl LabeledGraph {
    /// Index of the hot entry of a one-hot target.
    pub fn class_index(&self) -> usize {
        self.target
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task_kind: TaskKind,
    pub items: Vec<LabeledGraph>,
    pub split: BTreeMap<String, Split>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.split.get(id).copied()
    }

    pub fn indices_in(&self, split: Split) -> Vec<usize> {
        self.items
            .iter()
            .enumerate()
            .filter(|(_, it)| self.split_of(&it.id) == Some(split))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn find(&self, id: &str) -> Option<&LabeledGraph> {
        self.items.iter().find(|it| it.id == id)
    }

    pub fn output_dim(&self) -> usize {
        self.items.first().map(|it| it.target.len()).unwrap_or(0)
    }

    pub fn node_dim(&self) -> usize {
        self.items.first().map(|it| it.graph.node_dim()).unwrap_or(0)
    }

    pub fn edge_dim(&self) -> usize {
        self.items.first().map(|it| it.graph.edge_dim()).unwrap_or(0)
    }

    /// Dataset-level consistency: unique ids, complete split, uniform target
    /// width, valid graphs and binary ground truth.
    pub fn check(&self) -> crate::Result<()> {
        let mut ids = HashSet::new();
        let c = self.output_dim();
        for it in &self.items {
            if !ids.insert(it.id.as_str()) {
                return Err(crate::Error::Config(format!("duplicate item id {:?}", it.id)));
            }
            if !self.split.contains_key(&it.id) {
                return Err(crate::Error::Config(format!("item {:?} missing from split", it.id)));
            }
            if it.target.len() != c {
                return Err(crate::Error::Dimension {
                    item: it.id.clone(),
                    field: "target",
                    expected: c,
                    found: it.target.len(),
                });
            }
            if let Some(v) = it.graph.validate().first() {
                return Err(crate::Error::InvalidGraph {
                    item: it.id.clone(),
                    reason: v.to_string(),
                });
            }
            if let Some(gt) = &it.ground_truth {
                if !gt.is_binary() {
                    return Err(crate::Error::InvalidGraph {
                        item: it.id.clone(),
                        reason: "ground-truth masks must be binary".into(),
                    });
                }
            }
        }
        Ok(())
    }
}
