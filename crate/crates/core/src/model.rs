//! Multi-channel self-explaining graph attention network.
//!
//! `L` attention layers each run `K` parallel heads ("explanation
//! channels"). Raw attention scores are summed over layers and squashed into
//! edge importances; node importances combine a per-channel node head with
//! the mean importance of incident edges. Each channel pools the final node
//! embeddings weighted by its node importances, the pooled vectors feed both a
//! per-channel projection onto the unit sphere and the shared prediction head.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{EngineError, Matrix, ParamId, ParamStore, Tape, Var};
use crate::graph::{ExplanationMasks, Graph, TaskKind};
use crate::{Error, Result};

const EMBED_SLOPE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub channels: usize,
    pub node_dim: usize,
    pub edge_dim: usize,
    pub hidden_dim: usize,
    pub projection_dim: usize,
    pub output_dim: usize,
    pub task_kind: TaskKind,
    /// Hidden widths of the prediction head; its input is `channels * hidden_dim`.
    pub head_hidden: Vec<usize>,
    pub importance_threshold: f64,
    pub attention_slope: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// Defaults for a task: two channels (negative, positive) for
    /// regression, one channel per class for classification.
    pub fn for_task(task_kind: TaskKind, node_dim: usize, edge_dim: usize, output_dim: usize) -> Self {
        let channels = match task_kind {
            TaskKind::Regression => 2,
            TaskKind::Classification => output_dim,
        };
        Self {
            layers: 3,
            channels,
            node_dim,
            edge_dim,
            hidden_dim: 64,
            projection_dim: 128,
            output_dim,
            task_kind,
            head_hidden: vec![64],
            importance_threshold: 0.5,
            attention_slope: 0.2,
            seed: 0,
        }
    }

    pub fn check(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.channels < 1 {
            return fail("model needs at least one channel");
        }
        if self.layers < 1 {
            return fail("model needs at least one attention layer");
        }
        if self.output_dim < 1 {
            return fail("output dimension must be positive");
        }
        if self.hidden_dim < 1 {
            return fail("hidden dimension must be positive");
        }
        if self.projection_dim < 2 * self.hidden_dim {
            return fail("projection dimension must be at least twice the hidden dimension");
        }
        if self.task_kind == TaskKind::Classification && self.channels != self.output_dim {
            return fail("classification models use one channel per class");
        }
        if !(self.importance_threshold > 0.0 && self.importance_threshold < 1.0) {
            return fail("importance threshold must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct HeadParams {
    w_dst: ParamId,
    w_src: ParamId,
    w_val: ParamId,
    w_edge: ParamId,
    bias: ParamId,
    attn: ParamId,
}

#[derive(Clone, Debug)]
struct LayerParams {
    heads: Vec<HeadParams>,
    w_out: ParamId,
    w_self: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
struct Mlp2 {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
struct Layout {
    layers: Vec<LayerParams>,
    node_heads: Vec<Mlp2>,
    projections: Vec<Mlp2>,
    head: Vec<(ParamId, ParamId)>,
}

/// Node masks that replace the model's own importances at the pooling stage,
/// one optional column per channel.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MaskOverride {
    channels: Vec<Option<Vec<f64>>>,
}

impl MaskOverride {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn channel(channel: usize, mask: Vec<f64>) -> Self {
        Self::none().with(channel, mask)
    }

    pub fn with(mut self, channel: usize, mask: Vec<f64>) -> Self {
        if self.channels.len() <= channel {
            self.channels.resize(channel + 1, None);
        }
        self.channels[channel] = Some(mask);
        self
    }

    pub fn get(&self, channel: usize) -> Option<&[f64]> {
        self.channels.get(channel).and_then(|m| m.as_deref())
    }
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub prediction: Var,
    /// `V×K`
    pub node_mask: Var,
    /// `E×K`, absent for edgeless graphs.
    pub edge_mask: Option<Var>,
    /// Final node embeddings `V×D`.
    pub embeddings: Var,
    /// Per channel `1×D`.
    pub pooled: Vec<Var>,
    /// Per channel `1×P`, unit norm.
    pub projections: Vec<Var>,
    /// Per layer `E×K` raw attention scores.
    pub attention: Vec<Var>,
}

/// Plain-value result of [`Megan::forward`].
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub prediction: Vec<f64>,
    pub masks: ExplanationMasks,
    /// `K×D`
    pub channel_embeddings: Matrix,
    /// `K×P`
    pub channel_projections: Matrix,
    /// Per layer `E×K` raw attention scores.
    pub attention: Vec<Matrix>,
}

impl ForwardOutput {
    pub fn projection(&self, channel: usize) -> Vec<f64> {
        self.channel_projections.row(channel).to_vec()
    }

    /// Sum of the node importances of one channel.
    pub fn mask_sum(&self, channel: usize) -> f64 {
        self.masks.node_mask.column(channel).sum()
    }
}

/// Index lists derived from a graph once per forward pass.
struct Topology {
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
    incident_edges: Arc<[usize]>,
    incident_nodes: Arc<[usize]>,
    inv_incident: Matrix,
    isolated: Matrix,
    in_degree: Matrix,
}

impl Topology {
    fn new(graph: &Graph) -> Self {
        let v = graph.node_count;
        let src: Vec<usize> = graph.edges.iter().map(|e| e.0).collect();
        let dst: Vec<usize> = graph.edges.iter().map(|e| e.1).collect();
        let e = graph.edges.len();
        let incident_edges: Vec<usize> = (0..e).chain(0..e).collect();
        let incident_nodes: Vec<usize> = dst.iter().chain(src.iter()).copied().collect();
        let mut count = vec![0usize; v];
        for &n in &incident_nodes {
            count[n] += 1;
        }
        let inv_incident = Array2::from_shape_fn((v, 1), |(i, _)| {
            if count[i] > 0 {
                1.0 / count[i] as f64
            } else {
                0.0
            }
        });
        let isolated = Array2::from_shape_fn((v, 1), |(i, _)| if count[i] == 0 { 1.0 } else { 0.0 });
        let mut in_degree = Array2::zeros((v, 1));
        for &d in &dst {
            in_degree[[d, 0]] += 1.0;
        }
        Self {
            src: src.into(),
            dst: dst.into(),
            incident_edges: incident_edges.into(),
            incident_nodes: incident_nodes.into(),
            inv_incident,
            isolated,
            in_degree,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Megan {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

impl Megan {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamStore::new();
        let d = config.hidden_dim;
        let k_count = config.channels;

        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let input = if l == 0 { config.node_dim } else { d };
            let heads = (0..k_count)
                .map(|k| {
                    let n = |s: &str| format!("layer{l}.ch{k}.{s}");
                    HeadParams {
                        w_dst: p.add_glorot(n("w_dst"), input, d, &mut rng),
                        w_src: p.add_glorot(n("w_src"), input, d, &mut rng),
                        w_val: p.add_glorot(n("w_val"), input, d, &mut rng),
                        w_edge: p.add_glorot(n("w_edge"), config.edge_dim.max(1), d, &mut rng),
                        bias: p.add_zeros(n("bias"), 1, d),
                        attn: p.add_glorot(n("attn"), d, 1, &mut rng),
                    }
                })
                .collect();
            layers.push(LayerParams {
                heads,
                w_out: p.add_glorot(format!("layer{l}.w_out"), d, d, &mut rng),
                w_self: p.add_glorot(format!("layer{l}.w_self"), input, d, &mut rng),
                bias: p.add_zeros(format!("layer{l}.bias"), 1, d),
            });
        }

        let half = (d / 2).max(1);
        let node_heads = (0..k_count)
            .map(|k| Mlp2 {
                w1: p.add_glorot(format!("node_head.ch{k}.w1"), d, half, &mut rng),
                b1: p.add_zeros(format!("node_head.ch{k}.b1"), 1, half),
                w2: p.add_glorot(format!("node_head.ch{k}.w2"), half, 1, &mut rng),
                b2: p.add_zeros(format!("node_head.ch{k}.b2"), 1, 1),
            })
            .collect();

        let pdim = config.projection_dim;
        let projections = (0..k_count)
            .map(|k| Mlp2 {
                w1: p.add_glorot(format!("projection.ch{k}.w1"), d, pdim, &mut rng),
                b1: p.add_zeros(format!("projection.ch{k}.b1"), 1, pdim),
                w2: p.add_glorot(format!("projection.ch{k}.w2"), pdim, pdim, &mut rng),
                b2: p.add_zeros(format!("projection.ch{k}.b2"), 1, pdim),
            })
            .collect();

        let mut head = Vec::new();
        let mut width = k_count * d;
        for (i, &h) in config.head_hidden.iter().chain([config.output_dim].iter()).enumerate() {
            head.push((
                p.add_glorot(format!("head.{i}.w"), width, h, &mut rng),
                p.add_zeros(format!("head.{i}.b"), 1, h),
            ));
            width = h;
        }

        Ok(Self {
            config,
            params: p,
            layout: Layout {
                layers,
                node_heads,
                projections,
                head,
            },
        })
    }

    /// Rebuilds a model from its configuration and a parameter store whose
    /// names and shapes must match a freshly initialised model.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config)?;
        if model.params.manifest() != params.manifest() {
            return Err(Error::Checkpoint(
                "parameter names or shapes do not match the model configuration".into(),
            ));
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn channels(&self) -> usize {
        self.config.channels
    }

    /// SHA-256 over the configuration and every parameter value.
    pub fn digest(&self) -> String {
        let mut bytes = serde_json::to_vec(&self.config).expect("serializable");
        self.params.write_binary(&mut bytes).expect("in-memory write");
        crate::io::sha256_hex(&bytes)
    }

    /// Writes `<stem>.bin` (parameters) and `<stem>.manifest.json`
    /// (configuration plus parameter listing).
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let bin = dir.join(format!("{stem}.bin"));
        let mut bytes = Vec::with_capacity(self.params.total_size() * 8 + 1024);
        self.params.write_binary(&mut bytes).expect("in-memory write");
        fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
        let manifest = Manifest {
            config: self.config.clone(),
            parameters: self.params.manifest().lines().map(str::to_string).collect(),
        };
        let path = dir.join(format!("{stem}.manifest.json"));
        let text = serde_json::to_string_pretty(&manifest).expect("serializable");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let path = dir.join(format!("{stem}.manifest.json"));
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.clone(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let bin = dir.join(format!("{stem}.bin"));
        let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        let params = ParamStore::read_binary(&mut bytes.as_slice()).map_err(Error::Checkpoint)?;
        Self::from_parts(manifest.config, params)
    }

    fn check_graph(&self, graph: &Graph) -> std::result::Result<(), EngineError> {
        if graph.node_dim() != self.config.node_dim && graph.node_count > 0 {
            return Err(EngineError::Shape {
                op: "input node features",
                lhs: graph.node_features.dim(),
                rhs: (graph.node_count, self.config.node_dim),
            });
        }
        if graph.edge_count() > 0 && graph.edge_dim() != self.config.edge_dim {
            return Err(EngineError::Shape {
                op: "input edge features",
                lhs: graph.edge_features.dim(),
                rhs: (graph.edge_count(), self.config.edge_dim),
            });
        }
        Ok(())
    }

    /// One attention layer. Returns the next node embeddings and the raw
    /// per-channel scores stacked as `E×K` (absent without edges).
    fn attention_layer(
        &self,
        tape: &mut Tape,
        layer: usize,
        h: Var,
        edge_features: Option<Var>,
        topo: &Topology,
        node_count: usize,
    ) -> std::result::Result<(Var, Option<Var>), EngineError> {
        let lp = &self.layout.layers[layer];
        let p = &self.params;
        let mut aggregated = Vec::with_capacity(lp.heads.len());
        let mut scores = Vec::with_capacity(lp.heads.len());
        if let Some(ef) = edge_features {
            for head in &lp.heads {
                let w_dst = tape.param(p, head.w_dst);
                let w_src = tape.param(p, head.w_src);
                let w_val = tape.param(p, head.w_val);
                let w_edge = tape.param(p, head.w_edge);
                let bias = tape.param(p, head.bias);
                let attn = tape.param(p, head.attn);

                let q = tape.matmul(h, w_dst)?;
                let s = tape.matmul(h, w_src)?;
                let q = tape.gather_rows(q, topo.dst.clone())?;
                let s = tape.gather_rows(s, topo.src.clone())?;
                let u = tape.matmul(ef, w_edge)?;
                let pre = tape.add(q, s)?;
                let pre = tape.add(pre, u)?;
                let pre = tape.add(pre, bias)?;
                let act = tape.leaky_relu(pre, self.config.attention_slope)?;
                let score = tape.matmul(act, attn)?;
                let alpha = tape.segment_softmax(score, topo.dst.clone(), node_count)?;

                let val = tape.matmul(h, w_val)?;
                let val = tape.gather_rows(val, topo.src.clone())?;
                let msg = tape.mul(val, alpha)?;
                let agg = tape.segment_sum(msg, topo.dst.clone(), node_count)?;
                // scale by in-degree so that neighbourhood size survives the
                // normalised coefficients
                let deg = tape.constant(topo.in_degree.clone())?;
                aggregated.push(tape.mul(agg, deg)?);
                scores.push(score);
            }
        }

        let w_self = tape.param(p, lp.w_self);
        let bias = tape.param(p, lp.bias);
        let mut next = tape.matmul(h, w_self)?;
        if !aggregated.is_empty() {
            let mut total = aggregated[0];
            for &a in &aggregated[1..] {
                total = tape.add(total, a)?;
            }
            let mean = tape.scale(total, 1.0 / aggregated.len() as f64)?;
            let w_out = tape.param(p, lp.w_out);
            let mixed = tape.matmul(mean, w_out)?;
            next = tape.add(next, mixed)?;
        }
        let next = tape.add(next, bias)?;
        let next = tape.leaky_relu(next, EMBED_SLOPE)?;
        let stacked = if scores.is_empty() {
            None
        } else {
            Some(tape.concat_cols(&scores)?)
        };
        Ok((next, stacked))
    }

    fn mlp2(&self, tape: &mut Tape, m: &Mlp2, x: Var) -> std::result::Result<Var, EngineError> {
        let p = &self.params;
        let (w1, b1, w2, b2) = (
            tape.param(p, m.w1),
            tape.param(p, m.b1),
            tape.param(p, m.w2),
            tape.param(p, m.b2),
        );
        let hdn = tape.matmul(x, w1)?;
        let hdn = tape.add(hdn, b1)?;
        let hdn = tape.leaky_relu(hdn, EMBED_SLOPE)?;
        let out = tape.matmul(hdn, w2)?;
        tape.add(out, b2)
    }

    /// Pools `embeddings` with a `V×1` mask column and projects the result.
    /// Returns `(h, z)` for the channel.
    pub fn pool_and_project(
        &self,
        tape: &mut Tape,
        embeddings: Var,
        mask_column: Var,
        channel: usize,
    ) -> std::result::Result<(Var, Var), EngineError> {
        let mt = tape.transpose(mask_column)?;
        let pooled = tape.matmul(mt, embeddings)?;
        let proj = self.mlp2(tape, &self.layout.projections[channel], pooled)?;
        let z = tape.l2_normalize(proj)?;
        Ok((pooled, z))
    }

    /// Records the full forward pass on `tape`.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        graph: &Graph,
        overrides: &MaskOverride,
    ) -> std::result::Result<ForwardVars, EngineError> {
        self.check_graph(graph)?;
        let v = graph.node_count;
        let k_count = self.config.channels;
        let d = self.config.hidden_dim;
        let topo = Topology::new(graph);
        let p = &self.params;

        let node_features = if v == 0 {
            Array2::zeros((0, self.config.node_dim))
        } else {
            graph.node_features.clone()
        };
        let mut h = tape.constant(node_features)?;
        let edge_features = if graph.edge_count() > 0 {
            Some(tape.constant(graph.edge_features.clone())?)
        } else {
            None
        };

        let mut attention = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            let (next, scores) = self.attention_layer(tape, l, h, edge_features, &topo, v)?;
            h = next;
            if let Some(s) = scores {
                attention.push(s);
            }
        }

        let edge_mask = if attention.is_empty() {
            None
        } else {
            let mut total = attention[0];
            for &a in &attention[1..] {
                total = tape.add(total, a)?;
            }
            Some(tape.sigmoid(total)?)
        };

        let mut node_logits = Vec::with_capacity(k_count);
        for nh in &self.layout.node_heads {
            node_logits.push(self.mlp2(tape, nh, h)?);
        }
        let node_logits = tape.concat_cols(&node_logits)?;
        let node_gate = tape.sigmoid(node_logits)?;
        let node_mask = match edge_mask {
            Some(em) => {
                let inc = tape.gather_rows(em, topo.incident_edges.clone())?;
                let sums = tape.segment_sum(inc, topo.incident_nodes.clone(), v)?;
                let inv = tape.constant(topo.inv_incident.clone())?;
                let mean = tape.mul(sums, inv)?;
                let iso = tape.constant(topo.isolated.clone())?;
                let mean = tape.add(mean, iso)?;
                tape.mul(node_gate, mean)?
            }
            None => node_gate,
        };

        let mut pooled = Vec::with_capacity(k_count);
        let mut projections = Vec::with_capacity(k_count);
        for k in 0..k_count {
            let column = match overrides.get(k) {
                Some(mask) => {
                    if mask.len() != v {
                        return Err(EngineError::Shape {
                            op: "mask override",
                            lhs: (mask.len(), 1),
                            rhs: (v, 1),
                        });
                    }
                    tape.constant(Array2::from_shape_vec((v, 1), mask.to_vec()).expect("len checked"))?
                }
                None => tape.slice_cols(node_mask, k, k + 1)?,
            };
            let (hk, zk) = if v == 0 {
                let zero = tape.constant(Array2::zeros((1, d)))?;
                let proj = self.mlp2(tape, &self.layout.projections[k], zero)?;
                (zero, tape.l2_normalize(proj)?)
            } else {
                self.pool_and_project(tape, h, column, k)?
            };
            pooled.push(hk);
            projections.push(zk);
        }

        let mut x = tape.concat_cols(&pooled)?;
        let last = self.layout.head.len() - 1;
        for (i, &(w, b)) in self.layout.head.iter().enumerate() {
            let w = tape.param(p, w);
            let b = tape.param(p, b);
            x = tape.matmul(x, w)?;
            x = tape.add(x, b)?;
            if i < last {
                x = tape.leaky_relu(x, EMBED_SLOPE)?;
            }
        }

        Ok(ForwardVars {
            prediction: x,
            node_mask,
            edge_mask,
            embeddings: h,
            pooled,
            projections,
            attention,
        })
    }

    pub fn forward(&self, graph: &Graph, overrides: &MaskOverride) -> Result<ForwardOutput> {
        let mut tape = Tape::new();
        let vars = self.forward_on_tape(&mut tape, graph, overrides)?;
        Ok(self.collect(&tape, &vars, graph))
    }

    /// Copies tape values of a forward pass into a [`ForwardOutput`].
    pub fn collect(&self, tape: &Tape, vars: &ForwardVars, graph: &Graph) -> ForwardOutput {
        let k = self.config.channels;
        let edge_mask = match vars.edge_mask {
            Some(e) => tape.value(e).clone(),
            None => Array2::zeros((graph.edge_count(), k)),
        };
        let rows = |vs: &[Var]| {
            let views: Vec<_> = vs.iter().map(|&v| tape.value(v).view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("equal widths")
        };
        ForwardOutput {
            prediction: tape.value(vars.prediction).row(0).to_vec(),
            masks: ExplanationMasks {
                node_mask: tape.value(vars.node_mask).clone(),
                edge_mask,
            },
            channel_embeddings: rows(&vars.pooled),
            channel_projections: rows(&vars.projections),
            attention: vars.attention.iter().map(|&a| tape.value(a).clone()).collect(),
        }
    }

    /// The scalar a channel is judged by: the regression output, or the
    /// logit of the channel's class.
    pub fn channel_output(&self, prediction: &[f64], channel: usize) -> f64 {
        match self.config.task_kind {
            TaskKind::Regression => prediction[0],
            TaskKind::Classification => prediction[channel],
        }
    }

    /// Change of the channel output when the channel's pooled contribution
    /// is removed by zeroing its node mask.
    pub fn leave_one_out_deviation(&self, graph: &Graph, channel: usize) -> Result<f64> {
        let full = self.forward(graph, &MaskOverride::none())?;
        self.deviation_from(graph, channel, &full)
    }

    /// As [`Self::leave_one_out_deviation`] reusing an existing full pass.
    pub fn deviation_from(&self, graph: &Graph, channel: usize, full: &ForwardOutput) -> Result<f64> {
        let ablated = self.forward(graph, &MaskOverride::channel(channel, vec![0.0; graph.node_count]))?;
        Ok(self.channel_output(&full.prediction, channel) - self.channel_output(&ablated.prediction, channel))
    }

    /// Projection of `graph` in `channel` with every node fully active, used
    /// when the graph itself is the candidate motif.
    pub fn embed_whole(&self, graph: &Graph, channel: usize) -> Result<Vec<f64>> {
        let out = self.forward(graph, &MaskOverride::channel(channel, vec![1.0; graph.node_count]))?;
        Ok(out.projection(channel))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    parameters: Vec<String>,
}
