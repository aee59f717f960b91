//! Losses, mask augmentation, the training loop and evaluation.
//!
//! Each graph of a batch is processed on its own tape (in parallel): the
//! prediction, co-training and sparsity terms are local to one graph, and
//! the anchor/positive projections are recorded there too. The contrastive
//! term couples the batch, so it is evaluated on a separate small tape whose
//! gradients with respect to the projections are then pushed back into every
//! graph tape as seeds.

use std::fmt::Write as _;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{Adam, AdamConfig, EngineError, Matrix, Tape, Var};
use crate::graph::{Dataset, LabeledGraph, Split, TaskKind};
use crate::metrics;
use crate::model::{MaskOverride, Megan};
use crate::{Error, Result};

/// Where the augmented positive view is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveView {
    /// Re-pool the anchor's node embeddings under the augmented mask.
    #[default]
    Pooled,
    /// Re-encode the subgraph induced by the binarized mask, pooled under
    /// the noisy mask. Nodes outside the explanation never pass messages.
    Subgraph,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub beta: f64,
    pub gamma: f64,
    pub mu: f64,
    pub tau: f64,
    pub threshold: f64,
    pub noise_std: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Co-training evidence threshold on the centered regression target.
    pub delta: f64,
    /// Co-training shift subtracted from pooled evidence.
    pub shift: f64,
    /// Detach the augmented view from the graph so only the anchor view
    /// receives contrastive gradients.
    pub stop_positive_gradient: bool,
    pub positive_view: PositiveView,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            gamma: 0.1,
            mu: 1.0,
            tau: 0.1,
            threshold: 0.5,
            noise_std: 0.1,
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            delta: 0.5,
            shift: 1.0,
            stop_positive_gradient: false,
            positive_view: PositiveView::Pooled,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.tau > 0.0) {
            return fail("temperature tau must be positive");
        }
        if !(self.noise_std >= 0.0) {
            return fail("noise std must be non-negative");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return fail("binarization threshold must lie in (0, 1)");
        }
        if self.batch_size < 2 {
            return fail("batch size must be at least 2");
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning rate must be positive");
        }
        if [self.beta, self.gamma, self.mu].iter().any(|w| !(*w >= 0.0)) {
            return fail("loss weights must be non-negative");
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub prediction: f64,
    pub explanation: f64,
    pub sparsity: f64,
    pub contrastive: f64,
}

impl LossBreakdown {
    pub fn compose(config: &TrainConfig, prediction: f64, explanation: f64, sparsity: f64, contrastive: f64) -> Self {
        Self {
            total: prediction + config.beta * explanation + config.gamma * sparsity + config.mu * contrastive,
            prediction,
            explanation,
            sparsity,
            contrastive,
        }
    }

    fn add_scaled(&mut self, other: &Self, w: f64) {
        self.total += w * other.total;
        self.prediction += w * other.prediction;
        self.explanation += w * other.explanation;
        self.sparsity += w * other.sparsity;
        self.contrastive += w * other.contrastive;
    }
}

/// Per-channel co-training targets `b_k`.
///
/// Classification: `b_k = 1` for the true class. Regression with two
/// channels: `b_0 = 1` when the centered target is below `-delta`, `b_1 = 1`
/// when it is above `delta`.
pub fn channel_targets(target: &[f64], task: TaskKind, channels: usize, center: f64, delta: f64) -> Vec<f64> {
    match task {
        TaskKind::Classification => {
            let class = metrics::argmax(target);
            (0..channels).map(|k| if k == class { 1.0 } else { 0.0 }).collect()
        }
        TaskKind::Regression => {
            let y = target[0] - center;
            (0..channels)
                .map(|k| {
                    // channel 0 carries negative evidence, all others positive
                    let signed = if k == 0 { -y } else { y };
                    if signed > delta {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        }
    }
}

/// Mean squared error or softmax cross-entropy of one prediction row.
pub fn prediction_loss(tape: &mut Tape, prediction: Var, target: &[f64], task: TaskKind) -> Result<Var> {
    let loss = match task {
        TaskKind::Regression => {
            let y = tape.constant(Array2::from_shape_vec((1, target.len()), target.to_vec()).expect("row"))?;
            let diff = tape.sub(prediction, y)?;
            let sq = tape.mul(diff, diff)?;
            tape.mean(sq)?
        }
        TaskKind::Classification => {
            let class = metrics::argmax(target);
            let lse = tape.logsumexp_rows(prediction)?;
            let logit = tape.slice_cols(prediction, class, class + 1)?;
            tape.sub(lse, logit)?
        }
    };
    Ok(loss)
}

/// Mean over channels of `BCE(sigmoid(sum_i V[i,k] - shift), b_k)`.
pub fn explanation_loss(tape: &mut Tape, node_mask: Var, channel_targets: &[f64], shift: f64) -> Result<Var> {
    let evidence = tape.sum_rows(node_mask)?;
    let x = tape.add_scalar(evidence, -shift)?;
    let sp = tape.softplus(x)?;
    let b = tape.constant(Array2::from_shape_vec((1, channel_targets.len()), channel_targets.to_vec()).expect("row"))?;
    let bx = tape.mul(b, x)?;
    let per_channel = tape.sub(sp, bx)?;
    Ok(tape.mean(per_channel)?)
}

/// Mean absolute node importance.
pub fn sparsity_loss(tape: &mut Tape, node_mask: Var) -> Result<Var> {
    if tape.shape(node_mask).0 == 0 {
        return Ok(tape.scalar(0.0)?);
    }
    let a = tape.abs(node_mask)?;
    Ok(tape.mean(a)?)
}

/// Binarizes one channel's node mask at `threshold`, adds Gaussian noise and
/// clamps to `[0, 1]`.
pub fn augment_mask(column: &[f64], threshold: f64, noise_std: f64, rng: &mut impl Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, noise_std.max(0.0)).expect("finite std");
    column
        .iter()
        .map(|&v| {
            let b = if v > threshold { 1.0 } else { 0.0 };
            let n = if noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
            (b + n).clamp(0.0, 1.0)
        })
        .collect()
}

/// Records InfoNCE for one channel: rows of `anchors` and `positives` are
/// paired, every other anchor is a negative. Returns the mean over rows.
pub fn contrastive_on_tape(tape: &mut Tape, anchors: Var, positives: Var, tau: f64) -> Result<Var> {
    let b = tape.shape(anchors).0;
    let at = tape.transpose(anchors)?;
    let gram = tape.matmul(anchors, at)?;
    let off = tape.constant(Array2::from_shape_fn((b, b), |(i, j)| if i == j { 0.0 } else { 1.0 }))?;
    let negatives = tape.mul(gram, off)?;
    let paired = tape.mul(anchors, positives)?;
    let paired = tape.sum_cols(paired)?;
    let eye = tape.constant(Array2::eye(b))?;
    let diag = tape.mul(eye, paired)?;
    let logits = tape.add(negatives, diag)?;
    let logits = tape.scale(logits, 1.0 / tau)?;
    let lse = tape.logsumexp_rows(logits)?;
    let pos = tape.scale(paired, 1.0 / tau)?;
    let per_row = tape.sub(lse, pos)?;
    Ok(tape.mean(per_row)?)
}

const UNIT_TOLERANCE: f64 = 1e-6;

/// InfoNCE of one channel from plain values. Rows must be unit norm.
pub fn contrastive_loss(anchors: &Matrix, positives: &Matrix, tau: f64) -> Result<f64> {
    if anchors.dim() != positives.dim() {
        return Err(EngineError::Shape {
            op: "contrastive_loss",
            lhs: anchors.dim(),
            rhs: positives.dim(),
        }
        .into());
    }
    for (name, m) in [("anchor", anchors), ("positive", positives)] {
        for (i, row) in m.rows().into_iter().enumerate() {
            let n = row.dot(&row).sqrt();
            if (n - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::Config(format!("{name} row {i} has norm {n}, expected 1")));
            }
        }
    }
    let mut tape = Tape::new();
    let a = tape.constant(anchors.clone())?;
    let p = tape.constant(positives.clone())?;
    let l = contrastive_on_tape(&mut tape, a, p, tau)?;
    Ok(tape.scalar_value(l))
}

/// Everything recorded for one graph of a batch.
struct GraphPass {
    tape: Tape,
    local: Var,
    anchors: Vec<Var>,
    positives: Vec<Var>,
    parts: [f64; 3],
}

fn graph_pass(
    model: &Megan,
    item: &LabeledGraph,
    config: &TrainConfig,
    center: f64,
    rng: &mut impl Rng,
) -> Result<GraphPass> {
    let task = model.config().task_kind;
    let k_count = model.channels();
    let mut tape = Tape::new();
    let vars = model.forward_on_tape(&mut tape, &item.graph, &MaskOverride::none())?;
    let pred = prediction_loss(&mut tape, vars.prediction, &item.target, task)?;
    let b = channel_targets(&item.target, task, k_count, center, config.delta);
    let expl = explanation_loss(&mut tape, vars.node_mask, &b, config.shift)?;
    let spar = sparsity_loss(&mut tape, vars.node_mask)?;
    let we = tape.scale(expl, config.beta)?;
    let ws = tape.scale(spar, config.gamma)?;
    let local = tape.add(pred, we)?;
    let local = tape.add(local, ws)?;

    let mut positives = Vec::with_capacity(k_count);
    if config.mu > 0.0 {
        let embeddings = if config.stop_positive_gradient {
            tape.constant(tape.value(vars.embeddings).clone())?
        } else {
            vars.embeddings
        };
        let mask = tape.value(vars.node_mask).clone();
        for k in 0..k_count {
            let column: Vec<f64> = mask.column(k).to_vec();
            let augmented = augment_mask(&column, config.threshold, config.noise_std, rng);
            let v = augmented.len();
            let keep: Vec<usize> = (0..v).filter(|&i| column[i] > config.threshold).collect();
            let (_, z) = if v == 0 {
                // no nodes: the positive equals the anchor
                (vars.pooled[k], vars.projections[k])
            } else if config.positive_view == PositiveView::Subgraph && !keep.is_empty() {
                let sub = item.graph.induced_subgraph(&keep);
                let noisy: Vec<f64> = keep.iter().map(|&i| augmented[i]).collect();
                let view = model.forward_on_tape(&mut tape, &sub, &MaskOverride::channel(k, noisy))?;
                (view.pooled[k], view.projections[k])
            } else {
                let col = tape.constant(Array2::from_shape_vec((v, 1), augmented).expect("column"))?;
                model.pool_and_project(&mut tape, embeddings, col, k)?
            };
            positives.push(z);
        }
    }
    let parts = [tape.scalar_value(pred), tape.scalar_value(expl), tape.scalar_value(spar)];
    Ok(GraphPass {
        tape,
        local,
        anchors: vars.projections,
        positives,
        parts,
    })
}

fn rows_of(passes: &[GraphPass], pick: impl Fn(&GraphPass) -> Var) -> Matrix {
    let views: Vec<_> = passes.iter().map(|p| p.tape.value(pick(p)).view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("equal widths")
}

/// Gradient of the batch contrastive loss (mean over channels) with respect
/// to every anchor and positive, as `(loss, d_anchor[k], d_positive[k])`.
fn contrastive_gradients(passes: &[GraphPass], channels: usize, tau: f64) -> Result<(f64, Vec<Matrix>, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let mut anchors = Vec::with_capacity(channels);
    let mut positives = Vec::with_capacity(channels);
    let mut losses = Vec::with_capacity(channels);
    for k in 0..channels {
        let a = tape.constant(rows_of(passes, |p| p.anchors[k]))?;
        let p = tape.constant(rows_of(passes, |p| p.positives[k]))?;
        losses.push(contrastive_on_tape(&mut tape, a, p, tau)?);
        anchors.push(a);
        positives.push(p);
    }
    let stacked = tape.concat_cols(&losses)?;
    let loss = tape.mean(stacked)?;
    let grads = tape.backward(loss)?;
    Ok((
        tape.scalar_value(loss),
        anchors.iter().map(|&a| grads.get_or_zeros(&tape, a)).collect(),
        positives.iter().map(|&p| grads.get_or_zeros(&tape, p)).collect(),
    ))
}

/// Median of the training targets, the regression centering statistic.
pub fn target_center(dataset: &Dataset) -> f64 {
    match dataset.task_kind {
        TaskKind::Classification => 0.0,
        TaskKind::Regression => {
            let ys: Vec<f64> = dataset
                .indices_in(Split::Train)
                .into_iter()
                .map(|i| dataset.items[i].target[0])
                .collect();
            metrics::median(&ys)
        }
    }
}

fn graph_rng(seed: u64, epoch: usize, item: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | item as u64);
    rng
}

/// One optimizer step on `batch` (dataset indices). Returns the batch loss.
fn train_batch(
    model: &mut Megan,
    adam: &mut Adam,
    dataset: &Dataset,
    batch: &[usize],
    config: &TrainConfig,
    center: f64,
    epoch: usize,
) -> Result<LossBreakdown> {
    let passes = batch
        .par_iter()
        .map(|&i| {
            let mut rng = graph_rng(config.seed, epoch, i);
            graph_pass(model, &dataset.items[i], config, center, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = passes.len() as f64;
    let k_count = model.channels();

    let use_contrastive = config.mu > 0.0 && passes.len() >= 2;
    let (contrastive, d_anchor, d_positive) = if use_contrastive {
        contrastive_gradients(&passes, k_count, config.tau)?
    } else {
        (0.0, Vec::new(), Vec::new())
    };

    let params = model.params();
    let buffers = passes
        .par_iter()
        .enumerate()
        .map(|(b, pass)| {
            let mut seeds = vec![(pass.local, Array2::from_elem((1, 1), 1.0 / n))];
            if use_contrastive {
                for k in 0..k_count {
                    let row = |m: &Matrix| m.row(b).insert_axis(Axis(0)).mapv(|g| g * config.mu);
                    seeds.push((pass.anchors[k], row(&d_anchor[k])));
                    if !config.stop_positive_gradient {
                        seeds.push((pass.positives[k], row(&d_positive[k])));
                    }
                }
            }
            let grads = pass.tape.backward_seeded(&seeds)?;
            let mut buf = params.zeros_like();
            grads.accumulate_params(&pass.tape, &mut buf);
            Ok(buf)
        })
        .collect::<std::result::Result<Vec<_>, EngineError>>()?;

    let mut total = params.zeros_like();
    for buf in &buffers {
        for (t, g) in total.iter_mut().zip(buf) {
            *t += g;
        }
    }
    let mean = |j: usize| passes.iter().map(|p| p.parts[j]).sum::<f64>() / n;
    let breakdown = LossBreakdown::compose(config, mean(0), mean(1), mean(2), contrastive);
    if !breakdown.total.is_finite() || total.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
        return Err(Error::Diverged {
            epoch,
            batch: 0,
            detail: format!("{breakdown:?}"),
        });
    }
    adam.step(model.params_mut(), &total);
    Ok(breakdown)
}

/// Trains `model` in place and returns the per-epoch mean losses.
pub fn train(model: &mut Megan, dataset: &Dataset, config: &TrainConfig) -> Result<Vec<LossBreakdown>> {
    train_with(model, dataset, config, |_, _| {})
}

/// As [`train`], calling `on_epoch(epoch, losses)` after every epoch.
pub fn train_with(
    model: &mut Megan,
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &LossBreakdown),
) -> Result<Vec<LossBreakdown>> {
    config.check()?;
    if dataset.task_kind != model.config().task_kind {
        return Err(Error::Config("dataset and model task kinds differ".into()));
    }
    let center = target_center(dataset);
    let mut adam = Adam::new(config.adam(), model.params());
    let mut order = dataset.indices_in(Split::Train);
    let mut shuffler = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffler);
        let mut epoch_loss = LossBreakdown::default();
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let loss = train_batch(model, &mut adam, dataset, batch, config, center, epoch).map_err(|e| match e {
                Error::Diverged { detail, .. } => Error::Diverged {
                    epoch,
                    batch: b,
                    detail,
                },
                other => other,
            })?;
            epoch_loss.add_scaled(&loss, batch.len() as f64 / order.len() as f64);
        }
        log::debug!("epoch {epoch}: {epoch_loss:?}");
        on_epoch(epoch, &epoch_loss);
        history.push(epoch_loss);
    }
    Ok(history)
}

/// Tab-separated per-epoch loss table with a header row.
pub fn history_table(history: &[LossBreakdown]) -> String {
    let mut out = String::from("epoch\ttotal\tprediction\texplanation\tsparsity\tcontrastive\n");
    for (e, l) in history.iter().enumerate() {
        let _ = writeln!(
            out,
            "{e}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            l.total, l.prediction, l.explanation, l.sparsity, l.contrastive
        );
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub count: usize,
    pub accuracy: Option<f64>,
    pub r_squared: Option<f64>,
    pub node_auc: Option<f64>,
    pub edge_auc: Option<f64>,
}

/// Prediction quality and explanation AUCs over one split.
///
/// Nodes and edges are scored by their maximum importance across channels
/// (regression) or by the true-class channel (classification); labels are
/// the maximum of the ground-truth masks across channels.
pub fn evaluate(model: &Megan, dataset: &Dataset, split: Split) -> Result<Metrics> {
    let indices = dataset.indices_in(split);
    let task = model.config().task_kind;
    struct Row {
        pred: Vec<f64>,
        node: Vec<(f64, bool)>,
        edge: Vec<(f64, bool)>,
    }
    let rows = indices
        .par_iter()
        .map(|&i| {
            let item = &dataset.items[i];
            let out = model.forward(&item.graph, &MaskOverride::none())?;
            let mut row = Row {
                pred: out.prediction.clone(),
                node: Vec::new(),
                edge: Vec::new(),
            };
            if let Some(gt) = &item.ground_truth {
                let class = item.class_index();
                let score = |m: &Matrix, r: usize| match task {
                    TaskKind::Classification => m[[r, class]],
                    TaskKind::Regression => m.row(r).fold(f64::NEG_INFINITY, |a, &b| a.max(b)),
                };
                let label = |m: &Matrix, r: usize| m.row(r).iter().any(|&x| x > 0.5);
                row.node = (0..item.graph.node_count)
                    .map(|r| (score(&out.masks.node_mask, r), label(&gt.node_mask, r)))
                    .collect();
                row.edge = (0..item.graph.edge_count())
                    .map(|r| (score(&out.masks.edge_mask, r), label(&gt.edge_mask, r)))
                    .collect();
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut m = Metrics {
        count: rows.len(),
        ..Metrics::default()
    };
    match task {
        TaskKind::Regression => {
            let p: Vec<f64> = rows.iter().map(|r| r.pred[0]).collect();
            let y: Vec<f64> = indices.iter().map(|&i| dataset.items[i].target[0]).collect();
            m.r_squared = metrics::r_squared(&p, &y);
        }
        TaskKind::Classification => {
            let p: Vec<usize> = rows.iter().map(|r| metrics::argmax(&r.pred)).collect();
            let y: Vec<usize> = indices.iter().map(|&i| dataset.items[i].class_index()).collect();
            m.accuracy = metrics::accuracy(&p, &y);
        }
    }
    let auc = |pick: &dyn Fn(&Row) -> &Vec<(f64, bool)>| {
        let all: Vec<(f64, bool)> = rows.iter().flat_map(|r| pick(r).iter().copied()).collect();
        let (s, l): (Vec<f64>, Vec<bool>) = all.into_iter().unzip();
        metrics::roc_auc(&s, &l)
    };
    m.node_auc = auc(&|r| &r.node);
    m.edge_auc = auc(&|r| &r.edge);
    Ok(m)
}
