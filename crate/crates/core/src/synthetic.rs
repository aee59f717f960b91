//! Synthetic benchmark generators with planted motifs and ground-truth masks.
//!
//! * BA2Motifs: Barabási–Albert base graphs seeded with either a house
//!   (class 0) or a five-node cycle (class 1). Structure-only features.
//! * RbMotifs: random colour graphs seeded independently with any of four
//!   coloured motifs; the regression target is the sum of their effects.

use std::collections::{BTreeMap, HashSet};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{Dataset, ExplanationMasks, Graph, LabeledGraph, Split, TaskKind};
use crate::{Error, Result};

pub const BA_FEATURE_DIM: usize = 10;
pub const BA_FEATURE_VALUE: f64 = 0.1;

pub const RED: [f64; 3] = [1.0, 0.0, 0.0];
pub const GREEN: [f64; 3] = [0.0, 1.0, 0.0];
pub const BLUE: [f64; 3] = [0.0, 0.0, 1.0];
pub const YELLOW: [f64; 3] = [1.0, 1.0, 0.0];

/// Base colours closer than this (L∞) to a motif colour are resampled.
const COLOR_EXCLUSION: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum MotifEffect {
    /// Additive contribution to a regression target.
    Value(f64),
    /// Class label decided by the motif.
    Class(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Motif {
    pub name: String,
    /// Connected template; node features are the colour (or constant) rows.
    pub structure: Graph,
    pub effect: MotifEffect,
}

impl Motif {
    fn new(name: &str, nodes: usize, edges: &[(usize, usize)], features: Array2<f64>, effect: MotifEffect) -> Self {
        let structure = Graph::from_undirected(nodes, edges, features, &Array2::ones((edges.len(), 1)));
        debug_assert!(structure.is_connected());
        Self {
            name: name.to_string(),
            structure,
            effect,
        }
    }

    /// Which explanation channel the motif's evidence belongs to: the class
    /// index for classification, 0 (negative) / 1 (positive) for regression.
    pub fn channel(&self) -> usize {
        match self.effect {
            MotifEffect::Class(c) => c,
            MotifEffect::Value(v) if v < 0.0 => 0,
            MotifEffect::Value(_) => 1,
        }
    }

    pub fn node_count(&self) -> usize {
        self.structure.node_count
    }
}

fn constant_rows(n: usize) -> Array2<f64> {
    Array2::from_elem((n, BA_FEATURE_DIM), BA_FEATURE_VALUE)
}

fn color_rows(colors: &[[f64; 3]]) -> Array2<f64> {
    Array2::from_shape_fn((colors.len(), 3), |(i, c)| colors[i][c])
}

/// Square 0-1-2-3 with roof node 4 on top of edge 0-1.
pub fn house() -> Motif {
    Motif::new(
        "house",
        5,
        &[(0, 1), (1, 2), (2, 3), (3, 0), (0, 4), (1, 4)],
        constant_rows(5),
        MotifEffect::Class(0),
    )
}

pub fn cycle() -> Motif {
    Motif::new(
        "cycle",
        5,
        &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)],
        constant_rows(5),
        MotifEffect::Class(1),
    )
}

const TRIANGLE: [(usize, usize); 3] = [(0, 1), (1, 2), (2, 0)];
const STAR: [(usize, usize); 4] = [(0, 1), (0, 2), (0, 3), (0, 4)];

pub fn blue_green_triangle() -> Motif {
    Motif::new("blue_green_triangle", 3, &TRIANGLE, color_rows(&[BLUE, BLUE, GREEN]), MotifEffect::Value(-1.0))
}

pub fn blue_yellow_star() -> Motif {
    Motif::new(
        "blue_yellow_star",
        5,
        &STAR,
        color_rows(&[BLUE, BLUE, BLUE, YELLOW, YELLOW]),
        MotifEffect::Value(-2.0),
    )
}

pub fn red_green_triangle() -> Motif {
    Motif::new("red_green_triangle", 3, &TRIANGLE, color_rows(&[RED, RED, GREEN]), MotifEffect::Value(1.0))
}

pub fn red_yellow_star() -> Motif {
    Motif::new(
        "red_yellow_star",
        5,
        &STAR,
        color_rows(&[RED, RED, RED, YELLOW, YELLOW]),
        MotifEffect::Value(2.0),
    )
}

pub fn ba2motifs_motifs() -> Vec<Motif> {
    vec![house(), cycle()]
}

pub fn rbmotifs_motifs() -> Vec<Motif> {
    vec![blue_green_triangle(), blue_yellow_star(), red_green_triangle(), red_yellow_star()]
}

/// Looks up a motif template by name across both benchmarks.
pub fn motif_by_name(name: &str) -> Option<Motif> {
    ba2motifs_motifs()
        .into_iter()
        .chain(rbmotifs_motifs())
        .find(|m| m.name == name)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub count: usize,
    pub base_node_count: usize,
    pub ba_attachment: usize,
    pub seed: u64,
    pub motif_probabilities: BTreeMap<String, f64>,
    /// Fraction of items assigned to the test split.
    pub test_fraction: f64,
}

impl GeneratorConfig {
    pub fn ba2motifs(count: usize, seed: u64) -> Self {
        Self {
            count,
            base_node_count: 20,
            ba_attachment: 1,
            seed,
            motif_probabilities: BTreeMap::new(),
            test_fraction: 0.1,
        }
    }

    pub fn rbmotifs(count: usize, seed: u64) -> Self {
        Self {
            count,
            base_node_count: 40,
            ba_attachment: 1,
            seed,
            motif_probabilities: rbmotifs_motifs().into_iter().map(|m| (m.name, 0.4)).collect(),
            test_fraction: 0.1,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("count must be positive".into()));
        }
        if let Some((name, p)) = self.motif_probabilities.iter().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("probability {p} for motif {name} outside [0, 1]")));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config("test_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn item_rng(&self, index: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ index as u64)
    }
}

/// Preferential-attachment graph on `n` nodes starting from a star on
/// `m + 1` nodes; each new node attaches `m` edges to distinct existing
/// nodes picked with probability proportional to degree.
pub fn generate_ba_graph(n: usize, m: usize, rng: &mut impl Rng) -> Result<Graph> {
    if m < 1 || n <= m {
        return Err(Error::Config(format!("BA graph needs n > m >= 1 (got n={n}, m={m})")));
    }
    let mut edges: Vec<(usize, usize)> = (1..=m).map(|j| (0, j)).collect();
    // every node appears once per incident edge
    let mut endpoints: Vec<usize> = edges.iter().flat_map(|&(a, b)| [a, b]).collect();
    for new in (m + 1)..n {
        let mut targets = Vec::with_capacity(m);
        while targets.len() < m {
            let t = endpoints[rng.random_range(0..endpoints.len())];
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for t in targets {
            edges.push((t, new));
            endpoints.push(t);
            endpoints.push(new);
        }
    }
    Ok(Graph::from_undirected(
        n,
        &edges,
        constant_rows(n),
        &Array2::ones((edges.len(), 1)),
    ))
}

/// Result of planting a motif.
#[derive(Clone, Debug, PartialEq)]
pub struct Seeded {
    pub graph: Graph,
    pub node_mask: Vec<f64>,
    /// Aligned with the seeded graph's directed pairs.
    pub edge_mask: Vec<f64>,
}

/// Appends `motif` to `base` and joins a uniformly chosen motif node to a
/// uniformly chosen base node. The masks mark motif nodes and motif-internal
/// edges only.
pub fn seed_motif(base: &Graph, motif: &Motif, rng: &mut impl Rng) -> Seeded {
    seed_motif_within(base, base.node_count, motif, rng)
}

/// Like [`seed_motif`] but only the first `base_nodes` nodes are eligible
/// attachment points, so motifs seeded earlier stay untouched.
fn seed_motif_within(graph: &Graph, base_nodes: usize, motif: &Motif, rng: &mut impl Rng) -> Seeded {
    let offset = graph.node_count;
    let t = &motif.structure;
    let n = offset + t.node_count;

    let mut edges = graph.edges.clone();
    let mut edge_rows: Vec<Array2<f64>> = vec![graph.edge_features.clone()];
    let mut edge_mask = vec![0.0; graph.edge_count()];
    for (e, &(i, j)) in t.edges.iter().enumerate() {
        edges.push((i + offset, j + offset));
        edge_rows.push(t.edge_features.slice(ndarray::s![e..e + 1, ..]).to_owned());
        edge_mask.push(1.0);
    }
    if base_nodes > 0 {
        let anchor = rng.random_range(0..base_nodes);
        let port = offset + rng.random_range(0..t.node_count);
        edges.push((anchor, port));
        edges.push((port, anchor));
        let w = graph.edge_dim().max(t.edge_dim());
        edge_rows.push(Array2::ones((2, w)));
        edge_mask.extend([0.0, 0.0]);
    }
    let views: Vec<_> = edge_rows.iter().map(|m| m.view()).collect();
    let edge_features = ndarray::concatenate(ndarray::Axis(0), &views).expect("same edge width");
    let node_features = ndarray::concatenate(
        ndarray::Axis(0),
        &[graph.node_features.view(), t.node_features.view()],
    )
    .expect("same node width");

    let mut node_mask = vec![0.0; n];
    node_mask[offset..].fill(1.0);
    Seeded {
        graph: Graph {
            node_count: n,
            edges,
            node_features,
            edge_features,
        },
        node_mask,
        edge_mask,
    }
}

fn split_map(ids: &[String], test_fraction: f64, seed: u64) -> BTreeMap<String, Split> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.rotate_left(17) ^ 0x5eed));
    let n_test = (ids.len() as f64 * test_fraction).round() as usize;
    order
        .iter()
        .enumerate()
        .map(|(rank, &i)| {
            let s = if rank < n_test { Split::Test } else { Split::Train };
            (ids[i].clone(), s)
        })
        .collect()
}

fn two_channel_masks(seeded: &Seeded, channel: usize) -> ExplanationMasks {
    let mut m = ExplanationMasks::zeros(seeded.graph.node_count, seeded.graph.edge_count(), 2);
    for (i, &v) in seeded.node_mask.iter().enumerate() {
        m.node_mask[[i, channel]] = v;
    }
    for (e, &v) in seeded.edge_mask.iter().enumerate() {
        m.edge_mask[[e, channel]] = v;
    }
    m
}

/// Classification dataset: even items get a house (class 0), odd items a
/// cycle (class 1).
pub fn generate_ba2motifs(config: &GeneratorConfig) -> Result<Dataset> {
    config.check()?;
    let motifs = ba2motifs_motifs();
    let items: Vec<LabeledGraph> = (0..config.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = config.item_rng(i);
            let base = generate_ba_graph(config.base_node_count, config.ba_attachment, &mut rng)?;
            let motif = &motifs[i % 2];
            let seeded = seed_motif(&base, motif, &mut rng);
            let class = i % 2;
            let mut target = vec![0.0, 0.0];
            target[class] = 1.0;
            Ok(LabeledGraph {
                id: format!("ba2m-{i:05}"),
                ground_truth: Some(two_channel_masks(&seeded, class)),
                graph: seeded.graph,
                target,
                motifs: vec![motif.name.clone()],
            })
        })
        .collect::<Result<_>>()?;
    let ids: Vec<String> = items.iter().map(|it| it.id.clone()).collect();
    Ok(Dataset {
        task_kind: TaskKind::Classification,
        split: split_map(&ids, config.test_fraction, config.seed),
        items,
    })
}

fn near_motif_color(c: &[f64; 3]) -> bool {
    [RED, GREEN, BLUE, YELLOW].iter().any(|m| {
        m.iter()
            .zip(c)
            .all(|(a, b)| (a - b).abs() < COLOR_EXCLUSION)
    })
}

/// Connected random colour graph: a random recursive spanning tree plus
/// extra random edges up to a mean degree of about 2.5.
pub fn random_color_graph(n: usize, rng: &mut impl Rng) -> Graph {
    let mut pairs: HashSet<(usize, usize)> = HashSet::new();
    let mut edges = Vec::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        pairs.insert((u, v));
        edges.push((u, v));
    }
    let wanted = ((n as f64) * 1.25).round() as usize;
    let max_edges = n * (n - 1) / 2;
    let mut attempts = 0;
    while edges.len() < wanted.min(max_edges) && attempts < 100 * n {
        attempts += 1;
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b {
            continue;
        }
        let key = (a.min(b), a.max(b));
        if pairs.insert(key) {
            edges.push(key);
        }
    }
    let mut colors = Vec::with_capacity(n);
    for _ in 0..n {
        let c = loop {
            let c = [rng.random(), rng.random(), rng.random()];
            if !near_motif_color(&c) {
                break c;
            }
        };
        colors.push(c);
    }
    Graph::from_undirected(n, &edges, color_rows(&colors), &Array2::ones((edges.len(), 1)))
}

/// Regression dataset: each motif is planted independently with its
/// configured probability and the target is the sum of planted effects.
pub fn generate_rbmotifs(config: &GeneratorConfig) -> Result<Dataset> {
    config.check()?;
    let motifs = rbmotifs_motifs();
    let min_nodes = 10.min(config.base_node_count);
    let items: Vec<LabeledGraph> = (0..config.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = config.item_rng(i);
            let n = rng.random_range(min_nodes..=config.base_node_count);
            let base = random_color_graph(n, &mut rng);
            let mut graph = base;
            let mut gt = ExplanationMasks::zeros(graph.node_count, graph.edge_count(), 2);
            let mut target = 0.0;
            let mut planted = Vec::new();
            for motif in &motifs {
                let p = config.motif_probabilities.get(&motif.name).copied().unwrap_or(0.0);
                if rng.random::<f64>() >= p {
                    continue;
                }
                let seeded = seed_motif_within(&graph, n, motif, &mut rng);
                let ch = motif.channel();
                let mut next = ExplanationMasks::zeros(seeded.graph.node_count, seeded.graph.edge_count(), 2);
                next.node_mask
                    .slice_mut(ndarray::s![..graph.node_count, ..])
                    .assign(&gt.node_mask);
                next.edge_mask
                    .slice_mut(ndarray::s![..graph.edge_count(), ..])
                    .assign(&gt.edge_mask);
                for (v, &m) in seeded.node_mask.iter().enumerate() {
                    if m == 1.0 {
                        next.node_mask[[v, ch]] = 1.0;
                    }
                }
                for (e, &m) in seeded.edge_mask.iter().enumerate() {
                    if m == 1.0 {
                        next.edge_mask[[e, ch]] = 1.0;
                    }
                }
                gt = next;
                graph = seeded.graph;
                if let MotifEffect::Value(v) = motif.effect {
                    target += v;
                }
                planted.push(motif.name.clone());
            }
            LabeledGraph {
                id: format!("rbm-{i:05}"),
                graph,
                target: vec![target],
                ground_truth: Some(gt),
                motifs: planted,
            }
        })
        .collect();
    let ids: Vec<String> = items.iter().map(|it| it.id.clone()).collect();
    Ok(Dataset {
        task_kind: TaskKind::Regression,
        split: split_map(&ids, config.test_fraction, config.seed),
        items,
    })
}

/// Name of the nearest primary motif colour for an RGB row.
pub fn color_name(rgb: &[f64]) -> &'static str {
    let named = [
        ("red", RED),
        ("green", GREEN),
        ("blue", BLUE),
        ("yellow", YELLOW),
        ("black", [0.0, 0.0, 0.0]),
        ("white", [1.0, 1.0, 1.0]),
        ("magenta", [1.0, 0.0, 1.0]),
        ("cyan", [0.0, 1.0, 1.0]),
    ];
    named
        .iter()
        .map(|(n, c)| {
            let d: f64 = c.iter().zip(rgb).map(|(a, b)| (a - b).powi(2)).sum();
            (d, *n)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, n)| n)
        .unwrap_or("unknown")
}

/// True when an RGB row is one of the exact motif colours.
pub fn is_motif_color(rgb: &[f64]) -> bool {
    [RED, GREEN, BLUE, YELLOW]
        .iter()
        .any(|c| c.iter().zip(rgb).all(|(a, b)| (a - b).abs() < 1e-9))
}
