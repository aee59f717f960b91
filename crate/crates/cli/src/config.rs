use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use megan_core::concepts::MiningConfig;
use megan_core::graph::Dataset;
use megan_core::io::sha256_hex;
use megan_core::model::ModelConfig;
use megan_core::prototype::GaConfig;
use megan_core::reporting::EndpointConfig;
use megan_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

pub const RESOLVED_CONFIG: &str = "config.toml";

/// Architecture settings that do not depend on the dataset. Input and
/// output widths, task kind and channel count come from the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub layers: usize,
    pub hidden_dim: usize,
    pub projection_dim: usize,
    pub head_hidden: Vec<usize>,
    pub importance_threshold: f64,
    pub attention_slope: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            layers: 3,
            hidden_dim: 32,
            projection_dim: 64,
            head_hidden: vec![32],
            importance_threshold: 0.5,
            attention_slope: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    /// Members listed per concept.
    pub nearest: usize,
    pub endpoint: EndpointConfig,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            nearest: 5,
            endpoint: EndpointConfig::default(),
        }
    }
}

/// Fully resolved run configuration. Every section has defaults, so an
/// empty file is valid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub mining: MiningConfig,
    pub prototype: GaConfig,
    pub report: ReportSection,
}

/// Flag values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(epochs) = overrides.epochs {
            config.train.epochs = epochs;
        }
        // one seed drives every stage
        config.train.seed = config.seed;
        config.prototype.seed = config.seed;
        config.train.check()?;
        config.prototype.check()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("serializable config")
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }

    pub fn model_config(&self, dataset: &Dataset) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            layers: m.layers,
            hidden_dim: m.hidden_dim,
            projection_dim: m.projection_dim,
            head_hidden: m.head_hidden.clone(),
            importance_threshold: m.importance_threshold,
            attention_slope: m.attention_slope,
            seed: self.seed,
            ..ModelConfig::for_task(dataset.task_kind, dataset.node_dim(), dataset.edge_dim(), dataset.output_dim())
        }
    }

    /// Writes the resolved configuration next to a stage's outputs.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RESOLVED_CONFIG);
        fs::write(&path, self.to_toml()).with_context(|| format!("writing {}", path.display()))
    }
}
