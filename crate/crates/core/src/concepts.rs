//! Concept mining: per-channel clustering of projections and contribution
//! statistics, plus nearest-concept assignment for new graphs.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::Matrix;
use crate::graph::{Dataset, Graph, LabeledGraph};
use crate::hdbscan;
use crate::model::{MaskOverride, Megan};
use crate::prototype::Prototype;
use crate::synthetic;
use crate::{Error, Result};

/// Assignments below this cosine similarity are flagged as weak.
pub const LOW_SIMILARITY: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    /// `None` picks `max(10, 0.5% of embedded points)`.
    pub min_cluster_size: Option<usize>,
    pub min_samples: usize,
    /// Graphs whose channel mask sums below this are not embedded.
    pub activity_threshold: f64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            min_cluster_size: None,
            min_samples: 5,
            activity_threshold: 1.0,
        }
    }
}

impl MiningConfig {
    pub fn cluster_size_for(&self, points: usize) -> usize {
        self.min_cluster_size
            .unwrap_or_else(|| 10.max((points as f64 * 0.005).ceil() as usize))
    }
}

/// Channel projections of the graphs active in one channel.
#[derive(Clone, Debug)]
pub struct EmbeddingSet {
    pub channel: usize,
    /// `M×P` unit rows.
    pub rows: Matrix,
    /// Dataset indices aligned with `rows`.
    pub items: Vec<usize>,
    /// Channel output of the unmodified forward pass, aligned with `rows`.
    pub outputs: Vec<f64>,
}

struct GraphEmbedding {
    projections: Matrix,
    mask_sums: Vec<f64>,
    outputs: Vec<f64>,
}

fn embed_all(model: &Megan, dataset: &Dataset) -> Result<Vec<GraphEmbedding>> {
    dataset
        .items
        .par_iter()
        .map(|item| {
            let out = model.forward(&item.graph, &MaskOverride::none())?;
            let k = model.channels();
            Ok(GraphEmbedding {
                mask_sums: (0..k).map(|c| out.mask_sum(c)).collect(),
                outputs: (0..k).map(|c| model.channel_output(&out.prediction, c)).collect(),
                projections: out.channel_projections,
            })
        })
        .collect()
}

fn select_channel(all: &[GraphEmbedding], channel: usize, activity: f64, dim: usize) -> EmbeddingSet {
    let items: Vec<usize> = (0..all.len()).filter(|&i| all[i].mask_sums[channel] >= activity).collect();
    let mut rows = Array2::zeros((items.len(), dim));
    for (r, &i) in items.iter().enumerate() {
        rows.row_mut(r).assign(&all[i].projections.row(channel));
    }
    EmbeddingSet {
        channel,
        rows,
        outputs: items.iter().map(|&i| all[i].outputs[channel]).collect(),
        items,
    }
}

/// Projections of every graph whose channel mask sum reaches `activity`.
pub fn collect_embeddings(model: &Megan, dataset: &Dataset, channel: usize, activity: f64) -> Result<EmbeddingSet> {
    let all = embed_all(model, dataset)?;
    Ok(select_channel(&all, channel, activity, model.config().projection_dim))
}

/// One [`EmbeddingSet`] per channel from a single pass over the dataset.
pub fn collect_all(model: &Megan, dataset: &Dataset, activity: f64) -> Result<Vec<EmbeddingSet>> {
    let all = embed_all(model, dataset)?;
    Ok((0..model.channels())
        .map(|k| select_channel(&all, k, activity, model.config().projection_dim))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub item: usize,
    pub id: String,
    pub delta: f64,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptCluster {
    pub channel: usize,
    pub index: usize,
    pub size: usize,
    pub contribution_mean: f64,
    pub contribution_std: f64,
    pub centroid: Vec<f64>,
    /// Sorted by similarity to the centroid, highest first.
    pub members: Vec<Member>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prototype: Option<Prototype>,
}

impl ConceptCluster {
    pub fn min_similarity(&self) -> f64 {
        self.members.iter().map(|m| m.similarity).fold(f64::INFINITY, f64::min)
    }
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn normalized_mean(rows: &[&[f64]]) -> Vec<f64> {
    let dim = rows[0].len();
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r.iter()) {
            *m += x;
        }
    }
    let n: f64 = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        mean.iter_mut().for_each(|x| *x /= n);
    } else {
        mean[0] = 1.0;
    }
    mean
}

/// One concept per non-noise label, numbered in label order.
pub fn build_concepts(set: &EmbeddingSet, labels: &[Option<usize>], model: &Megan, dataset: &Dataset) -> Result<Vec<ConceptCluster>> {
    let count = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let deltas: Vec<Option<f64>> = labels
        .par_iter()
        .enumerate()
        .map(|(r, label)| {
            if label.is_none() {
                return Ok(None);
            }
            let g = &dataset.items[set.items[r]].graph;
            let ablated = model.forward(g, &MaskOverride::channel(set.channel, vec![0.0; g.node_count]))?;
            Ok(Some(set.outputs[r] - model.channel_output(&ablated.prediction, set.channel)))
        })
        .collect::<Result<_>>()?;

    let mut concepts = Vec::with_capacity(count);
    for q in 0..count {
        let rows: Vec<usize> = (0..labels.len()).filter(|&r| labels[r] == Some(q)).collect();
        let vectors: Vec<&[f64]> = rows.iter().map(|&r| set.rows.row(r).to_slice().expect("standard layout")).collect();
        let centroid = normalized_mean(&vectors);
        let mut members: Vec<Member> = rows
            .iter()
            .zip(&vectors)
            .map(|(&r, v)| Member {
                item: set.items[r],
                id: dataset.items[set.items[r]].id.clone(),
                delta: deltas[r].expect("labelled"),
                similarity: cosine(v, &centroid),
            })
            .collect();
        members.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.item.cmp(&b.item)));
        let n = members.len() as f64;
        let mean = members.iter().map(|m| m.delta).sum::<f64>() / n;
        let var = members.iter().map(|m| (m.delta - mean).powi(2)).sum::<f64>() / n;
        concepts.push(ConceptCluster {
            channel: set.channel,
            index: q,
            size: members.len(),
            contribution_mean: mean,
            contribution_std: var.sqrt(),
            centroid,
            members,
            prototype: None,
        });
    }
    Ok(concepts)
}

/// Embeds, clusters and summarises every channel.
pub fn mine(model: &Megan, dataset: &Dataset, config: &MiningConfig) -> Result<Vec<ConceptCluster>> {
    let sets = collect_all(model, dataset, config.activity_threshold)?;
    let mut concepts = Vec::new();
    for set in &sets {
        let mcs = config.cluster_size_for(set.rows.nrows());
        let labels = hdbscan::hdbscan(&set.rows, mcs, config.min_samples);
        log::info!(
            "channel {}: {} embedded, {} noise",
            set.channel,
            labels.len(),
            labels.iter().filter(|l| l.is_none()).count()
        );
        concepts.extend(build_concepts(set, &labels, model, dataset)?);
    }
    Ok(concepts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub channel: usize,
    /// Position in the concept list, absent when the channel has none.
    pub concept: Option<usize>,
    pub similarity: f64,
    pub low_similarity: bool,
}

/// Nearest concept per channel by cosine similarity of the channel
/// projection; ties go to the earlier concept.
pub fn assign_query(model: &Megan, graph: &Graph, concepts: &[ConceptCluster]) -> Result<Vec<Assignment>> {
    let out = model.forward(graph, &MaskOverride::none())?;
    Ok(assign_projections(&out.channel_projections, concepts))
}

pub(crate) fn assign_projections(projections: &Matrix, concepts: &[ConceptCluster]) -> Vec<Assignment> {
    (0..projections.nrows())
        .map(|k| {
            let z = projections.row(k).to_vec();
            let mut best: Option<(usize, f64)> = None;
            for (i, c) in concepts.iter().enumerate().filter(|(_, c)| c.channel == k) {
                let s = cosine(&z, &c.centroid);
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((i, s));
                }
            }
            match best {
                Some((i, s)) => Assignment {
                    channel: k,
                    concept: Some(i),
                    similarity: s,
                    low_similarity: s < LOW_SIMILARITY,
                },
                None => Assignment {
                    channel: k,
                    concept: None,
                    similarity: 0.0,
                    low_similarity: true,
                },
            }
        })
        .collect()
}

/// Motifs of `item` whose evidence belongs to `channel`, joined with `+`,
/// or `"none"`.
pub fn motif_label(item: &LabeledGraph, channel: usize) -> String {
    let mut names: Vec<&str> = item
        .motifs
        .iter()
        .filter(|m| synthetic::motif_by_name(m).is_some_and(|motif| motif.channel() == channel))
        .map(String::as_str)
        .collect();
    names.sort_unstable();
    if names.is_empty() {
        "none".to_string()
    } else {
        names.join("+")
    }
}

/// Most frequent motif label among a concept's members and its share.
pub fn dominant_motif(concept: &ConceptCluster, dataset: &Dataset) -> (String, f64) {
    let mut counts: std::collections::BTreeMap<String, usize> = Default::default();
    for m in &concept.members {
        *counts.entry(motif_label(&dataset.items[m.item], concept.channel)).or_default() += 1;
    }
    let (label, n) = counts
        .into_iter()
        .fold((String::new(), 0), |best, (l, n)| if n > best.1 { (l, n) } else { best });
    (label, n as f64 / concept.size.max(1) as f64)
}

pub const CATALOG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptCatalog {
    pub version: u32,
    pub model_digest: String,
    pub dataset_digest: String,
    pub mining: MiningConfig,
    pub concepts: Vec<ConceptCluster>,
}

impl ConceptCatalog {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("serializable");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn check_model(&self, model: &Megan) -> Result<()> {
        let found = model.digest();
        if found != self.model_digest {
            return Err(Error::DigestMismatch {
                what: "model".into(),
                expected: self.model_digest.clone(),
                found,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::TaskKind;
    use crate::model::ModelConfig;
    use crate::synthetic::GeneratorConfig;

    fn setup() -> (Megan, Dataset) {
        let data = synthetic::generate_rbmotifs(&GeneratorConfig::rbmotifs(30, 5)).unwrap();
        let config = ModelConfig {
            hidden_dim: 6,
            projection_dim: 12,
            head_hidden: vec![6],
            layers: 2,
            ..ModelConfig::for_task(TaskKind::Regression, 3, 1, 1)
        };
        (Megan::new(config).unwrap(), data)
    }

    #[test]
    fn untrained_embeddings_are_well_formed() {
        let (model, data) = setup();
        let set = collect_embeddings(&model, &data, 1, 0.0).unwrap();
        assert_eq!(set.items.len(), data.len());
        for r in set.rows.rows() {
            assert!((r.dot(&r).sqrt() - 1.0).abs() < 1e-9);
        }
        let strict = collect_embeddings(&model, &data, 1, f64::INFINITY).unwrap();
        assert!(strict.items.is_empty());
    }

    #[test]
    fn identical_members_share_centroid() {
        let (model, data) = setup();
        let mut set = collect_embeddings(&model, &data, 0, 0.0).unwrap();
        let shared = set.rows.row(0).to_owned();
        for mut r in set.rows.rows_mut() {
            r.assign(&shared);
        }
        let labels = vec![Some(0); set.rows.nrows()];
        let concepts = build_concepts(&set, &labels, &model, &data).unwrap();
        assert_eq!(concepts.len(), 1);
        for (a, b) in concepts[0].centroid.iter().zip(shared.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(build_concepts(&set, &vec![None; set.rows.nrows()], &model, &data).unwrap().is_empty());
    }

    #[test]
    fn members_sorted_and_deltas_match_model() {
        let (model, data) = setup();
        let set = collect_embeddings(&model, &data, 1, 0.0).unwrap();
        let labels: Vec<Option<usize>> = (0..set.rows.nrows()).map(|i| Some(i % 2)).collect();
        let concepts = build_concepts(&set, &labels, &model, &data).unwrap();
        for c in &concepts {
            assert!(c.members.windows(2).all(|w| w[0].similarity >= w[1].similarity));
            let norm: f64 = c.centroid.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
            let m = &c.members[0];
            let expected = model.leave_one_out_deviation(&data.items[m.item].graph, 1).unwrap();
            assert!((m.delta - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn nearest_member_assigns_to_own_cluster() {
        let (model, data) = setup();
        let set = collect_embeddings(&model, &data, 0, 0.0).unwrap();
        let labels: Vec<Option<usize>> = (0..set.rows.nrows()).map(|i| Some(usize::from(i >= 15))).collect();
        let concepts = build_concepts(&set, &labels, &model, &data).unwrap();
        let first = &concepts[1].members[0];
        let a = assign_query(&model, &data.items[first.item].graph, &concepts).unwrap();
        assert_eq!(a[0].concept, Some(1));
        assert_eq!(a[1].concept, None);
        assert!(a[1].low_similarity);
    }

    #[test]
    fn catalog_roundtrip_and_digest_check() {
        let (model, data) = setup();
        let concepts = mine(&model, &data, &MiningConfig { min_cluster_size: Some(3), ..Default::default() }).unwrap();
        let cat = ConceptCatalog {
            version: CATALOG_VERSION,
            model_digest: model.digest(),
            dataset_digest: "x".into(),
            mining: MiningConfig::default(),
            concepts,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        cat.save(&p).unwrap();
        assert_eq!(ConceptCatalog::load(&p).unwrap(), cat);
        cat.check_model(&model).unwrap();
        let mut other = model.clone();
        let id = other.params().ids().next().unwrap();
        other.params_mut().value_mut(id)[[0, 0]] += 1.0;
        assert!(matches!(cat.check_model(&other), Err(Error::DigestMismatch { .. })));
    }

    #[test]
    fn motif_labels_follow_channel() {
        let mut item = synthetic::generate_rbmotifs(&GeneratorConfig::rbmotifs(1, 0)).unwrap().items.remove(0);
        item.motifs = vec!["red_yellow_star".into(), "blue_green_triangle".into(), "red_green_triangle".into()];
        assert_eq!(motif_label(&item, 0), "blue_green_triangle");
        assert_eq!(motif_label(&item, 1), "red_green_triangle+red_yellow_star");
        item.motifs.clear();
        assert_eq!(motif_label(&item, 1), "none");
    }
}
