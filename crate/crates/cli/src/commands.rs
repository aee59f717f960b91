use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use megan_core::concepts::{self, ConceptCatalog, CATALOG_VERSION};
use megan_core::graph::{Dataset, Split};
use megan_core::io::{self, GraphRecord};
use megan_core::model::Megan;
use megan_core::prototype;
use megan_core::reporting::{self, RequestLog};
use megan_core::synthetic::{self, GeneratorConfig};
use megan_core::training::{self, Metrics};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{Overrides, RunConfig};

pub const MODEL_STEM: &str = "model";
pub const STAGE_FILE: &str = "stage.json";
pub const CATALOG_FILE: &str = "catalog.json";
pub const METRICS_FILE: &str = "metrics.json";

/// Provenance written next to every stage's outputs.
#[derive(Debug, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub tool_version: String,
    pub config_digest: Option<String>,
    pub seed: Option<u64>,
    pub inputs: serde_json::Value,
    pub outputs: serde_json::Value,
}

impl StageRecord {
    fn new(stage: &str, config: Option<&RunConfig>, inputs: serde_json::Value, outputs: serde_json::Value) -> Self {
        Self {
            stage: stage.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_digest: config.map(RunConfig::digest),
            seed: config.map(|c| c.seed),
            inputs,
            outputs,
        }
    }

    fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(STAGE_FILE), self)
    }
}

/// Machine-parsable category of the innermost recognised cause.
pub fn category(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<megan_core::Error>() {
            return match e {
                megan_core::Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => "not-found",
                other => other.category(),
            };
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            return if e.kind() == std::io::ErrorKind::NotFound { "not-found" } else { "io" };
        }
        if cause.is::<toml::de::Error>() {
            return "config";
        }
        if cause.is::<serde_json::Error>() {
            return "parse";
        }
    }
    "internal"
}

/// The error chain on one line, skipping causes already quoted by their parent.
pub fn one_line(err: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in err.chain() {
        let text = cause.to_string().replace('\n', " ");
        if !parts.last().is_some_and(|p| p.contains(&text)) {
            parts.push(text);
        }
    }
    parts.join(": ")
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn prepare(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_dataset(path: &Path) -> Result<(Dataset, String)> {
    let dataset = io::load_dataset(path)?;
    let digest = io::dataset_digest(&dataset);
    Ok((dataset, digest))
}

fn mismatch(what: &str, expected: &str, found: &str) -> anyhow::Error {
    megan_core::Error::DigestMismatch {
        what: what.into(),
        expected: expected.into(),
        found: found.into(),
    }
    .into()
}

/// Loads a checkpoint and refuses it when it was trained on another dataset.
fn load_checkpoint(dir: &Path, dataset_digest: Option<&str>) -> Result<Megan> {
    let model = Megan::load(dir, MODEL_STEM)?;
    if let Some(expected) = dataset_digest {
        let path = dir.join(STAGE_FILE);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let record: StageRecord = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let trained_on = record.inputs["dataset"].as_str().unwrap_or_default();
        if trained_on != expected {
            return Err(mismatch("dataset of checkpoint", trained_on, expected));
        }
    }
    Ok(model)
}

fn check_catalog_dataset(catalog: &ConceptCatalog, digest: &str) -> Result<()> {
    if catalog.dataset_digest != digest {
        return Err(mismatch("dataset of catalog", &catalog.dataset_digest, digest));
    }
    Ok(())
}

pub fn gen_data(rb: bool, count: usize, seed: u64, out: &Path) -> Result<()> {
    let dataset = if rb {
        synthetic::generate_rbmotifs(&GeneratorConfig::rbmotifs(count, seed))?
    } else {
        synthetic::generate_ba2motifs(&GeneratorConfig::ba2motifs(count, seed))?
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        prepare(parent)?;
    }
    io::save_dataset(&dataset, out)?;
    println!("wrote {} items to {}", dataset.items.len(), out.display());
    Ok(())
}

pub fn train(dataset_path: &Path, config_path: Option<&Path>, overrides: &Overrides, out_dir: &Path) -> Result<()> {
    let (dataset, digest) = load_dataset(dataset_path)?;
    let config = RunConfig::load(config_path, overrides)?;
    prepare(out_dir)?;
    config.echo(out_dir)?;
    let mut model = Megan::new(config.model_config(&dataset))?;
    let history = training::train_with(&mut model, &dataset, &config.train, |epoch, loss| {
        eprintln!("epoch {epoch}: loss {:.4} (prediction {:.4})", loss.total, loss.prediction);
    })?;
    model.save(out_dir, MODEL_STEM)?;
    let metrics = training::evaluate(&model, &dataset, Split::Test)?;
    write_json(&out_dir.join(METRICS_FILE), &metrics)?;
    let history_path = out_dir.join("history.tsv");
    fs::write(&history_path, training::history_table(&history)).with_context(|| format!("writing {}", history_path.display()))?;
    StageRecord::new(
        "train",
        Some(&config),
        json!({ "dataset": digest }),
        json!({ "model": model.digest() }),
    )
    .write(out_dir)?;
    println!("{}", serde_json::to_string(&metrics)?);
    Ok(())
}

pub fn mine(checkpoint: &Path, dataset_path: &Path, config_path: Option<&Path>, overrides: &Overrides, out_dir: &Path) -> Result<()> {
    let (dataset, digest) = load_dataset(dataset_path)?;
    let model = load_checkpoint(checkpoint, Some(&digest))?;
    let config = RunConfig::load(config_path, overrides)?;
    prepare(out_dir)?;
    config.echo(out_dir)?;
    let concepts = concepts::mine(&model, &dataset, &config.mining)?;
    let catalog = ConceptCatalog {
        version: CATALOG_VERSION,
        model_digest: model.digest(),
        dataset_digest: digest.clone(),
        mining: config.mining.clone(),
        concepts,
    };
    let path = out_dir.join(CATALOG_FILE);
    catalog.save(&path)?;
    StageRecord::new(
        "mine",
        Some(&config),
        json!({ "dataset": digest, "model": catalog.model_digest }),
        json!({ "concepts": catalog.concepts.len() }),
    )
    .write(out_dir)?;
    for c in &catalog.concepts {
        println!(
            "channel {} concept {}: {} members, contribution {:.3} ± {:.3}",
            c.channel, c.index, c.size, c.contribution_mean, c.contribution_std
        );
    }
    Ok(())
}

pub fn prototype(
    catalog_path: &Path,
    checkpoint: &Path,
    dataset_path: &Path,
    config_path: Option<&Path>,
    overrides: &Overrides,
    out_dir: &Path,
) -> Result<()> {
    let (dataset, digest) = load_dataset(dataset_path)?;
    let mut catalog = ConceptCatalog::load(catalog_path)?;
    check_catalog_dataset(&catalog, &digest)?;
    let model = load_checkpoint(checkpoint, Some(&digest))?;
    catalog.check_model(&model)?;
    let config = RunConfig::load(config_path, overrides)?;
    prepare(out_dir)?;
    config.echo(out_dir)?;
    for c in catalog.concepts.iter_mut() {
        let evolution = prototype::evolve(c, &model, &dataset, &config.prototype)?;
        let p = evolution.prototype();
        println!(
            "channel {} concept {}: {} nodes, similarity {:.3}{}",
            c.channel,
            c.index,
            p.graph.node_count,
            p.similarity,
            if p.feasible { "" } else { " (infeasible)" }
        );
        c.prototype = Some(p);
    }
    catalog.save(&out_dir.join(CATALOG_FILE))?;
    StageRecord::new(
        "prototype",
        Some(&config),
        json!({ "dataset": digest, "model": catalog.model_digest }),
        json!({ "concepts": catalog.concepts.len() }),
    )
    .write(out_dir)?;
    Ok(())
}

pub fn report(
    catalog_path: &Path,
    dataset_path: &Path,
    metrics_path: Option<&Path>,
    config_path: Option<&Path>,
    overrides: &Overrides,
    workers: Option<usize>,
    out_dir: &Path,
) -> Result<()> {
    let (dataset, digest) = load_dataset(dataset_path)?;
    let catalog = ConceptCatalog::load(catalog_path)?;
    let metrics: Option<Metrics> = metrics_path
        .map(|p| -> Result<Metrics> {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        })
        .transpose()?;
    let mut config = RunConfig::load(config_path, overrides)?;
    if let Some(n) = workers {
        config.report.endpoint.max_concurrent = config.report.endpoint.max_concurrent.min(n);
    }
    prepare(out_dir)?;
    config.echo(out_dir)?;
    let mut report = reporting::compile_report(&catalog, &dataset, metrics, config.report.nearest)?;
    if let Some(epoch) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        report.generated_at = epoch;
    }
    if config.report.endpoint.enabled {
        let log = RequestLog::new(out_dir.join("requests.jsonl"));
        reporting::attach_hypotheses(&mut report, &config.report.endpoint, Some(&log));
    }
    let files = reporting::render(&report, out_dir)?;
    StageRecord::new(
        "report",
        Some(&config),
        json!({ "dataset": digest, "model": catalog.model_digest }),
        json!({ "concepts": report.concepts.len(), "drawings": files.drawings.len() }),
    )
    .write(out_dir)?;
    println!("{}", files.html.display());
    Ok(())
}

pub fn query(checkpoint: &Path, catalog_path: &Path, graph_path: &Path) -> Result<()> {
    let model = load_checkpoint(checkpoint, None)?;
    let catalog = ConceptCatalog::load(catalog_path)?;
    let text = fs::read_to_string(graph_path).with_context(|| format!("reading {}", graph_path.display()))?;
    let record: GraphRecord = serde_json::from_str(&text).with_context(|| format!("parsing {}", graph_path.display()))?;
    let graph = record.to_graph(model.config().node_dim, model.config().edge_dim)?;
    let explanation = reporting::explain_query(&model, &graph, &catalog)?;
    println!("{}", serde_json::to_string_pretty(&explanation)?);
    Ok(())
}
