//! Concept reports, prototype drawings, hypothesis prompts and per-graph
//! query explanations.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concepts::{self, Assignment, ConceptCatalog};
use crate::graph::{Dataset, Graph, TaskKind};
use crate::io::{self, GraphRecord};
use crate::model::{MaskOverride, Megan};
use crate::prototype::Prototype;
use crate::synthetic;
use crate::training::Metrics;
use crate::{Error, Result};

pub const PROTOTYPE_UNAVAILABLE: &str = "prototype unavailable";
pub const PROMPT_TEMPLATE_ID: &str = "concept-hypothesis/v1";

const PROMPT_TEMPLATE: &str = "\
You are assisting with the interpretation of a graph neural network trained for {task}.
The model explains its predictions through separate explanation channels. \
The following substructure was identified as a recurring concept in the {polarity} channel.
On average, the presence of this concept changes the prediction by {contribution}.

Substructure (adjacency list, one line per node: index (colour): neighbours):
{prototype}

Propose a short causal hypothesis for why this substructure might have this effect on the prediction.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub dataset_digest: String,
    pub model_digest: String,
    pub metrics: Option<Metrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NearestMember {
    pub id: String,
    pub item: usize,
    pub similarity: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptEntry {
    pub channel: usize,
    pub index: usize,
    pub size: usize,
    pub polarity: String,
    pub contribution_mean: f64,
    pub contribution_std: f64,
    pub prototype: Option<Prototype>,
    /// Adjacency-list rendering, or the unavailable marker.
    pub prototype_text: String,
    pub nearest: Vec<NearestMember>,
    pub hypothesis: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptReport {
    pub metadata: RunMetadata,
    pub task: String,
    pub prompt_template: String,
    /// Seconds since the Unix epoch.
    pub generated_at: u64,
    pub concepts: Vec<ConceptEntry>,
}

/// Human-readable role of a channel.
pub fn channel_polarity(task: TaskKind, channel: usize) -> String {
    match (task, channel) {
        (TaskKind::Regression, 0) => "negative".to_string(),
        (TaskKind::Regression, _) => "positive".to_string(),
        (TaskKind::Classification, k) => format!("class {k}"),
    }
}

fn task_description(task: TaskKind) -> &'static str {
    match task {
        TaskKind::Regression => "graph regression",
        TaskKind::Classification => "graph classification",
    }
}

/// One line per node: `index (colour): neighbours`. Colours are named only
/// for three-wide RGB features.
pub fn prototype_text(record: &GraphRecord) -> String {
    let mut neighbours = vec![Vec::new(); record.node_count];
    for &[i, j] in &record.edges {
        if i < record.node_count {
            neighbours[i].push(j);
        }
    }
    let mut out = String::new();
    for (i, adj) in neighbours.iter_mut().enumerate() {
        adj.sort_unstable();
        adj.dedup();
        let row = &record.node_features[i];
        let colour = if row.len() == 3 { synthetic::color_name(row) } else { "node" };
        let list: Vec<String> = adj.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(out, "{i} ({colour}): {}", list.join(", "));
    }
    out.trim_end().to_string()
}

/// Deterministic report over every catalog concept, ordered by channel
/// then size descending.
pub fn compile_report(catalog: &ConceptCatalog, dataset: &Dataset, metrics: Option<Metrics>, n_nearest: usize) -> Result<ConceptReport> {
    let digest = io::dataset_digest(dataset);
    if digest != catalog.dataset_digest {
        return Err(Error::DigestMismatch {
            what: "dataset".into(),
            expected: catalog.dataset_digest.clone(),
            found: digest,
        });
    }
    let mut order: Vec<usize> = (0..catalog.concepts.len()).collect();
    order.sort_by_key(|&i| {
        let c = &catalog.concepts[i];
        (c.channel, std::cmp::Reverse(c.size), c.index)
    });
    let concepts = order
        .into_iter()
        .map(|i| {
            let c = &catalog.concepts[i];
            let mut nearest: Vec<NearestMember> = c
                .members
                .iter()
                .map(|m| NearestMember {
                    id: m.id.clone(),
                    item: m.item,
                    similarity: m.similarity,
                    delta: m.delta,
                })
                .collect();
            nearest.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.item.cmp(&b.item)));
            nearest.truncate(n_nearest);
            ConceptEntry {
                channel: c.channel,
                index: c.index,
                size: c.size,
                polarity: channel_polarity(dataset.task_kind, c.channel),
                contribution_mean: c.contribution_mean,
                contribution_std: c.contribution_std,
                prototype_text: c
                    .prototype
                    .as_ref()
                    .map_or_else(|| PROTOTYPE_UNAVAILABLE.to_string(), |p| prototype_text(&p.graph)),
                prototype: c.prototype.clone(),
                nearest,
                hypothesis: None,
            }
        })
        .collect();
    Ok(ConceptReport {
        metadata: RunMetadata {
            dataset_digest: catalog.dataset_digest.clone(),
            model_digest: catalog.model_digest.clone(),
            metrics,
        },
        task: task_description(dataset.task_kind).to_string(),
        prompt_template: PROMPT_TEMPLATE_ID.to_string(),
        generated_at: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        concepts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRequest {
    pub prototype_text: String,
    pub polarity: String,
    pub contribution: f64,
    pub task: String,
    pub template: String,
}

impl HypothesisRequest {
    pub fn for_entry(report: &ConceptReport, entry: &ConceptEntry) -> Self {
        Self {
            prototype_text: entry.prototype_text.clone(),
            polarity: entry.polarity.clone(),
            contribution: entry.contribution_mean,
            task: report.task.clone(),
            template: PROMPT_TEMPLATE_ID.to_string(),
        }
    }

    pub fn prompt(&self) -> String {
        PROMPT_TEMPLATE
            .replace("{task}", &self.task)
            .replace("{polarity}", &self.polarity)
            .replace("{contribution}", &format!("{:.2}", self.contribution))
            .replace("{prototype}", &self.prototype_text)
    }
}

/// Chat-completion endpoint settings. The bearer token is read from the
/// environment variable named by `token_env`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub enabled: bool,
    pub base_url: String,
    pub model: String,
    pub timeout_s: u64,
    pub max_concurrent: usize,
    pub token_env: String,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4".into(),
            timeout_s: 60,
            max_concurrent: 4,
            token_env: "MEGAN_API_TOKEN".into(),
        }
    }
}

#[derive(Serialize)]
struct LogRecord<'a> {
    prompt: &'a str,
    response: Option<&'a str>,
    error: Option<&'a str>,
}

/// Appends request/response records as JSON lines.
pub struct RequestLog {
    path: PathBuf,
    lock: Mutex<()>,
}

impl RequestLog {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            lock: Mutex::new(()),
        }
    }

    fn append(&self, record: &LogRecord) {
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let line = serde_json::to_string(record).expect("strings serialize");
        let written = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .and_then(|mut f| writeln!(f, "{line}"));
        if let Err(e) = written {
            log::warn!("cannot write request log {}: {e}", self.path.display());
        }
    }
}

fn send(request: &HypothesisRequest, endpoint: &EndpointConfig, prompt: &str) -> std::result::Result<(String, String), String> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(endpoint.timeout_s.max(1))))
        .build()
        .into();
    let url = format!("{}/chat/completions", endpoint.base_url.trim_end_matches('/'));
    let body = serde_json::json!({
        "model": endpoint.model,
        "messages": [{"role": "user", "content": prompt}],
        "metadata": {"template": request.template},
    });
    let mut call = agent.post(&url);
    if let Ok(token) = std::env::var(&endpoint.token_env) {
        call = call.header("Authorization", format!("Bearer {token}"));
    }
    let mut response = call.send_json(&body).map_err(|e| e.to_string())?;
    let raw = response.body_mut().read_to_string().map_err(|e| e.to_string())?;
    let parsed: serde_json::Value = serde_json::from_str(&raw).map_err(|e| format!("malformed response: {e}"))?;
    let text = parsed["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| "response has no choices[0].message.content".to_string())?;
    Ok((text.to_string(), raw))
}

/// One chat-completion call. Any failure is logged and yields `None`.
pub fn request_hypothesis(request: &HypothesisRequest, endpoint: &EndpointConfig, log: Option<&RequestLog>) -> Option<String> {
    if !endpoint.enabled {
        return None;
    }
    let prompt = request.prompt();
    match send(request, endpoint, &prompt) {
        Ok((text, raw)) => {
            if let Some(l) = log {
                l.append(&LogRecord {
                    prompt: &prompt,
                    response: Some(&raw),
                    error: None,
                });
            }
            Some(text)
        }
        Err(e) => {
            log::warn!("hypothesis request failed: {e}");
            if let Some(l) = log {
                l.append(&LogRecord {
                    prompt: &prompt,
                    response: None,
                    error: Some(&e),
                });
            }
            None
        }
    }
}

/// Fills `hypothesis` for every entry with at most `max_concurrent`
/// requests in flight. Other fields are untouched.
pub fn attach_hypotheses(report: &mut ConceptReport, endpoint: &EndpointConfig, log: Option<&RequestLog>) {
    if !endpoint.enabled || report.concepts.is_empty() {
        return;
    }
    let requests: Vec<HypothesisRequest> = report.concepts.iter().map(|e| HypothesisRequest::for_entry(report, e)).collect();
    let run = || -> Vec<Option<String>> {
        requests
            .par_iter()
            .map(|r| request_hypothesis(r, endpoint, log))
            .collect()
    };
    let answers = match rayon::ThreadPoolBuilder::new().num_threads(endpoint.max_concurrent.max(1)).build() {
        Ok(pool) => pool.install(run),
        Err(_) => requests.iter().map(|r| request_hypothesis(r, endpoint, log)).collect(),
    };
    for (entry, answer) in report.concepts.iter_mut().zip(answers) {
        entry.hypothesis = answer;
    }
}

/// Fruchterman-Reingold layout in the unit square with a fixed seed.
pub fn layout(record: &GraphRecord, seed: u64) -> Vec<(f64, f64)> {
    let n = record.node_count;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<(f64, f64)> = (0..n).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
    if n < 2 {
        return vec![(0.5, 0.5); n];
    }
    let k = (1.0 / n as f64).sqrt();
    let iterations = 200;
    for it in 0..iterations {
        let temperature = 0.1 * (1.0 - it as f64 / iterations as f64);
        let mut disp = vec![(0.0, 0.0); n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (dx, dy) = (pos[i].0 - pos[j].0, pos[i].1 - pos[j].1);
                let d = (dx * dx + dy * dy).sqrt().max(1e-6);
                let f = k * k / d;
                disp[i].0 += dx / d * f;
                disp[i].1 += dy / d * f;
            }
        }
        for &[i, j] in &record.edges {
            if i >= j || j >= n {
                continue;
            }
            let (dx, dy) = (pos[i].0 - pos[j].0, pos[i].1 - pos[j].1);
            let d = (dx * dx + dy * dy).sqrt().max(1e-6);
            let f = d * d / k;
            disp[i].0 -= dx / d * f;
            disp[i].1 -= dy / d * f;
            disp[j].0 += dx / d * f;
            disp[j].1 += dy / d * f;
        }
        for (p, d) in pos.iter_mut().zip(&disp) {
            let len = (d.0 * d.0 + d.1 * d.1).sqrt().max(1e-12);
            let step = len.min(temperature);
            p.0 += d.0 / len * step;
            p.1 += d.1 / len * step;
        }
    }
    let (min_x, max_x) = pos.iter().fold((f64::MAX, f64::MIN), |a, p| (a.0.min(p.0), a.1.max(p.0)));
    let (min_y, max_y) = pos.iter().fold((f64::MAX, f64::MIN), |a, p| (a.0.min(p.1), a.1.max(p.1)));
    let span = (max_x - min_x).max(max_y - min_y).max(1e-9);
    pos.iter().map(|p| ((p.0 - min_x) / span, (p.1 - min_y) / span)).collect()
}

fn node_fill(row: &[f64]) -> String {
    if row.len() == 3 {
        let c = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        format!("rgb({},{},{})", c(row[0]), c(row[1]), c(row[2]))
    } else {
        "rgb(200,200,200)".to_string()
    }
}

/// Standalone SVG drawing of a graph record.
pub fn draw_svg(record: &GraphRecord) -> String {
    const SIZE: f64 = 200.0;
    const MARGIN: f64 = 20.0;
    let pos = layout(record, 0);
    let at = |i: usize| (MARGIN + pos[i].0 * (SIZE - 2.0 * MARGIN), MARGIN + pos[i].1 * (SIZE - 2.0 * MARGIN));
    let mut svg = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n");
    for &[i, j] in &record.edges {
        if i < j && j < record.node_count {
            let (a, b) = (at(i), at(j));
            let _ = writeln!(svg, "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\" stroke-width=\"1.5\"/>", a.0, a.1, b.0, b.1);
        }
    }
    for i in 0..record.node_count {
        let p = at(i);
        let _ = writeln!(
            svg,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"7\" fill=\"{}\" stroke=\"black\"/>",
            p.0,
            p.1,
            node_fill(&record.node_features[i])
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

fn metric(value: Option<f64>) -> String {
    value.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

/// Single static HTML document with inline drawings.
pub fn render_html(report: &ConceptReport) -> String {
    let mut h = String::new();
    h.push_str("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Concept report</title>\n");
    h.push_str("<style>body{font-family:sans-serif;max-width:960px;margin:auto}section{border-top:1px solid #ccc;padding:8px 0}table{border-collapse:collapse}td,th{padding:2px 8px;text-align:left}pre{background:#f4f4f4;padding:4px}</style>\n");
    h.push_str("</head><body>\n<h1>Concept report</h1>\n<table>\n");
    let meta = &report.metadata;
    let _ = writeln!(h, "<tr><th>task</th><td>{}</td></tr>", escape(&report.task));
    let _ = writeln!(h, "<tr><th>dataset digest</th><td>{}</td></tr>", meta.dataset_digest);
    let _ = writeln!(h, "<tr><th>model digest</th><td>{}</td></tr>", meta.model_digest);
    if let Some(m) = &meta.metrics {
        let _ = writeln!(h, "<tr><th>test graphs</th><td>{}</td></tr>", m.count);
        let _ = writeln!(h, "<tr><th>accuracy</th><td>{}</td></tr>", metric(m.accuracy));
        let _ = writeln!(h, "<tr><th>R²</th><td>{}</td></tr>", metric(m.r_squared));
        let _ = writeln!(h, "<tr><th>node AUC</th><td>{}</td></tr>", metric(m.node_auc));
        let _ = writeln!(h, "<tr><th>edge AUC</th><td>{}</td></tr>", metric(m.edge_auc));
    }
    let _ = writeln!(h, "<tr><th>prompt template</th><td>{}</td></tr>", escape(&report.prompt_template));
    let _ = writeln!(h, "<tr><th>concepts</th><td>{}</td></tr>\n</table>", report.concepts.len());
    for e in &report.concepts {
        let _ = writeln!(
            h,
            "<section class=\"concept\" data-channel=\"{}\" data-index=\"{}\" data-size=\"{}\" data-contribution-mean=\"{}\" data-contribution-std=\"{}\">",
            e.channel, e.index, e.size, e.contribution_mean, e.contribution_std
        );
        let _ = writeln!(h, "<h2>Channel {} ({}), concept {}</h2>", e.channel, escape(&e.polarity), e.index);
        let _ = writeln!(
            h,
            "<p>{} members, contribution {:.3} ± {:.3}</p>",
            e.size, e.contribution_mean, e.contribution_std
        );
        match &e.prototype {
            Some(p) => {
                h.push_str(&draw_svg(&p.graph));
                let _ = writeln!(
                    h,
                    "<p>prototype: {} nodes, similarity {:.3}{}</p>",
                    p.graph.node_count,
                    p.similarity,
                    if p.feasible { "" } else { " (below similarity floor)" }
                );
            }
            None => {
                let _ = writeln!(h, "<p class=\"missing\">{PROTOTYPE_UNAVAILABLE}</p>");
            }
        }
        let _ = writeln!(h, "<pre>{}</pre>", escape(&e.prototype_text));
        h.push_str("<table><tr><th>nearest member</th><th>similarity</th><th>Δ</th></tr>\n");
        for m in &e.nearest {
            let _ = writeln!(h, "<tr><td>{}</td><td>{:.3}</td><td>{:.3}</td></tr>", escape(&m.id), m.similarity, m.delta);
        }
        h.push_str("</table>\n");
        if let Some(text) = &e.hypothesis {
            let _ = writeln!(h, "<div class=\"hypothesis\"><h3>Hypothesis</h3><p>{}</p></div>", escape(text));
        }
        h.push_str("</section>\n");
    }
    h.push_str("</body></html>\n");
    h
}

pub fn render_json(report: &ConceptReport) -> String {
    serde_json::to_string_pretty(report).expect("finite report values")
}

#[derive(Clone, Debug)]
pub struct RenderedFiles {
    pub json: PathBuf,
    pub html: PathBuf,
    pub drawings: Vec<PathBuf>,
}

/// Writes `report.json`, `report.html` and `drawings/*.svg` under `dir`.
pub fn render(report: &ConceptReport, dir: &Path) -> Result<RenderedFiles> {
    let drawing_dir = dir.join("drawings");
    fs::create_dir_all(&drawing_dir).map_err(|e| Error::io(&drawing_dir, e))?;
    let write = |path: PathBuf, text: &str| -> Result<PathBuf> {
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    };
    let json = write(dir.join("report.json"), &render_json(report))?;
    let html = write(dir.join("report.html"), &render_html(report))?;
    let mut drawings = Vec::new();
    for e in &report.concepts {
        if let Some(p) = &e.prototype {
            let name = format!("concept-{}-{}.svg", e.channel, e.index);
            drawings.push(write(drawing_dir.join(name), &draw_svg(&p.graph))?);
        }
    }
    Ok(RenderedFiles { json, html, drawings })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelExplanation {
    pub channel: usize,
    pub node_mask: Vec<f64>,
    pub edge_mask: Vec<f64>,
    /// Leave-one-out deviation of the channel.
    pub deviation: f64,
    /// Position of the nearest concept in the catalog.
    pub concept: Option<usize>,
    pub concept_index: Option<usize>,
    pub similarity: f64,
    pub low_similarity: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryExplanation {
    pub prediction: Vec<f64>,
    pub channels: Vec<ChannelExplanation>,
}

/// Masks, deviations and nearest concepts for one graph.
pub fn explain_query(model: &Megan, graph: &Graph, catalog: &ConceptCatalog) -> Result<QueryExplanation> {
    catalog.check_model(model)?;
    let full = model.forward(graph, &MaskOverride::none())?;
    let assignments: Vec<Assignment> = concepts::assign_projections(&full.channel_projections, &catalog.concepts);
    let channels = assignments
        .into_iter()
        .map(|a| {
            Ok(ChannelExplanation {
                channel: a.channel,
                node_mask: full.masks.node_mask.column(a.channel).to_vec(),
                edge_mask: full.masks.edge_mask.column(a.channel).to_vec(),
                deviation: model.deviation_from(graph, a.channel, &full)?,
                concept: a.concept,
                concept_index: a.concept.map(|i| catalog.concepts[i].index),
                similarity: a.similarity,
                low_similarity: a.low_similarity,
            })
        })
        .collect::<Result<_>>()?;
    Ok(QueryExplanation {
        prediction: full.prediction,
        channels,
    })
}
