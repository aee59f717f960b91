//! Dataset file format.
//!
//! A JSON document `{task_kind, items: [...], split: {id: "train"|"test"}}`.
//! Each item lists every undirected edge once, with `edge_features` and the
//! optional `gt_edge_mask` aligned to that list; both directions are
//! materialised on load. Items are written one per line so parse errors point
//! at a useful line.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph::{Dataset, ExplanationMasks, Graph, LabeledGraph, Split, TaskKind};
use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub node_count: usize,
    pub edges: Vec<[usize; 2]>,
    pub node_features: Vec<Vec<f64>>,
    pub edge_features: Vec<Vec<f64>>,
    pub target: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_node_mask: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_edge_mask: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub motifs: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct DatasetRecord {
    task_kind: TaskKind,
    items: Vec<ItemRecord>,
    split: BTreeMap<String, Split>,
}

fn rows_of(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Index of the first directed pair of every undirected edge, in order.
pub(crate) fn representative_pairs(graph: &Graph) -> Vec<usize> {
    let mut seen = HashSet::new();
    graph
        .edges
        .iter()
        .enumerate()
        .filter(|(_, &(i, j))| seen.insert((i.min(j), i.max(j))))
        .map(|(e, _)| e)
        .collect()
}

fn matrix_from_rows(
    rows: &[Vec<f64>],
    width_hint: usize,
    item: &str,
    field: &'static str,
    expected_rows: usize,
) -> Result<Array2<f64>> {
    if rows.len() != expected_rows {
        return Err(Error::Dimension {
            item: item.to_string(),
            field,
            expected: expected_rows,
            found: rows.len(),
        });
    }
    let width = rows.first().map(Vec::len).unwrap_or(width_hint);
    let mut data = Vec::with_capacity(rows.len() * width);
    for r in rows {
        if r.len() != width {
            return Err(Error::Dimension {
                item: item.to_string(),
                field,
                expected: width,
                found: r.len(),
            });
        }
        data.extend_from_slice(r);
    }
    Ok(Array2::from_shape_vec((rows.len(), width), data).expect("sized above"))
}

impl ItemRecord {
    pub fn from_item(item: &LabeledGraph) -> Self {
        let g = &item.graph;
        let reps = representative_pairs(g);
        let pick = |m: &Array2<f64>| reps.iter().map(|&e| m.row(e).to_vec()).collect();
        Self {
            id: item.id.clone(),
            node_count: g.node_count,
            edges: reps.iter().map(|&e| [g.edges[e].0, g.edges[e].1]).collect(),
            node_features: rows_of(&g.node_features),
            edge_features: pick(&g.edge_features),
            target: item.target.clone(),
            gt_node_mask: item.ground_truth.as_ref().map(|m| rows_of(&m.node_mask)),
            gt_edge_mask: item.ground_truth.as_ref().map(|m| pick(&m.edge_mask)),
            motifs: item.motifs.clone(),
        }
    }

    /// `dims` supplies feature and mask widths for items whose rows are
    /// empty (no nodes or no edges).
    pub fn into_item(self, dims: &Widths) -> Result<LabeledGraph> {
        let id = self.id;
        let node_features =
            matrix_from_rows(&self.node_features, dims.node, &id, "node_features", self.node_count)?;
        let und_features =
            matrix_from_rows(&self.edge_features, dims.edge, &id, "edge_features", self.edges.len())?;
        let undirected: Vec<(usize, usize)> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        let graph = Graph::from_undirected(self.node_count, &undirected, node_features, &und_features);
        if let Some(v) = graph.validate().first() {
            return Err(Error::InvalidGraph {
                item: id,
                reason: v.to_string(),
            });
        }
        let ground_truth = match (self.gt_node_mask, self.gt_edge_mask) {
            (None, None) => None,
            (node, edge) => {
                let node = node.unwrap_or_default();
                let node_mask =
                    matrix_from_rows(&node, dims.channels, &id, "gt_node_mask", self.node_count)?;
                let k = node_mask.ncols();
                let edge_mask = match edge {
                    Some(rows) => {
                        let und =
                            matrix_from_rows(&rows, k, &id, "gt_edge_mask", self.edges.len())?;
                        let idx: Vec<usize> = (0..und.nrows()).flat_map(|e| [e, e]).collect();
                        und.select(ndarray::Axis(0), &idx)
                    }
                    None => Array2::zeros((graph.edge_count(), k)),
                };
                if edge_mask.ncols() != k {
                    return Err(Error::Dimension {
                        item: id,
                        field: "gt_edge_mask",
                        expected: k,
                        found: edge_mask.ncols(),
                    });
                }
                Some(ExplanationMasks {
                    node_mask,
                    edge_mask,
                })
            }
        };
        Ok(LabeledGraph {
            id,
            graph,
            target: self.target,
            ground_truth,
            motifs: self.motifs,
        })
    }
}

/// Feature and mask widths used for items with no rows to infer them from.
#[derive(Clone, Copy, Debug, Default)]
pub struct Widths {
    pub node: usize,
    pub edge: usize,
    pub channels: usize,
}

impl Widths {
    fn infer(items: &[ItemRecord]) -> Self {
        let first = |f: &dyn Fn(&ItemRecord) -> Option<usize>| items.iter().find_map(f).unwrap_or(0);
        Widths {
            node: first(&|it| it.node_features.first().map(Vec::len)),
            edge: first(&|it| it.edge_features.first().map(Vec::len)),
            channels: first(&|it| {
                it.gt_node_mask
                    .as_ref()
                    .and_then(|m| m.first().map(Vec::len))
            }),
        }
    }
}

/// A bare graph in the item layout (undirected edges listed once).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub node_count: usize,
    pub edges: Vec<[usize; 2]>,
    pub node_features: Vec<Vec<f64>>,
    pub edge_features: Vec<Vec<f64>>,
}

impl GraphRecord {
    pub fn from_graph(graph: &Graph) -> Self {
        let reps = representative_pairs(graph);
        Self {
            node_count: graph.node_count,
            edges: reps.iter().map(|&e| [graph.edges[e].0, graph.edges[e].1]).collect(),
            node_features: rows_of(&graph.node_features),
            edge_features: reps.iter().map(|&e| graph.edge_features.row(e).to_vec()).collect(),
        }
    }

    pub fn to_graph(&self, node_dim: usize, edge_dim: usize) -> Result<Graph> {
        let nf = matrix_from_rows(&self.node_features, node_dim, "graph", "node_features", self.node_count)?;
        let ef = matrix_from_rows(&self.edge_features, edge_dim, "graph", "edge_features", self.edges.len())?;
        let undirected: Vec<(usize, usize)> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        let graph = Graph::from_undirected(self.node_count, &undirected, nf, &ef);
        if let Some(v) = graph.validate().first() {
            return Err(Error::InvalidGraph {
                item: "graph".into(),
                reason: v.to_string(),
            });
        }
        Ok(graph)
    }
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of the canonical serialization.
pub fn dataset_digest(dataset: &Dataset) -> String {
    sha256_hex(dataset_to_string(dataset).as_bytes())
}

pub fn dataset_to_string(dataset: &Dataset) -> String {
    let kind = serde_json::to_string(&dataset.task_kind).expect("enum");
    let mut out = format!("{{\"task_kind\":{kind},\"items\":[\n");
    for (n, item) in dataset.items.iter().enumerate() {
        if n > 0 {
            out.push_str(",\n");
        }
        out.push_str(&serde_json::to_string(&ItemRecord::from_item(item)).expect("finite values"));
    }
    out.push_str("\n],\n\"split\":");
    out.push_str(&serde_json::to_string(&dataset.split).expect("map"));
    out.push_str("}\n");
    out
}

pub fn dataset_from_str(text: &str, path: &Path) -> Result<Dataset> {
    let record: DatasetRecord = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let widths = Widths::infer(&record.items);
    let items = record
        .items
        .into_iter()
        .map(|it| it.into_item(&widths))
        .collect::<Result<Vec<_>>>()?;
    let dataset = Dataset {
        task_kind: record.task_kind,
        items,
        split: record.split,
    };
    dataset.check()?;
    Ok(dataset)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(dataset_to_string(dataset).as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    dataset_from_str(&text, path)
}
