//! Pipeline configuration: one TOML file, dotted-path overrides, defaults
//! merged per stage, and a content hash of the resolved result.

use std::path::PathBuf;

use dldp_core::discovery::{DiscoveryConfig, DomainSelection};
use dldp_core::eval::EvalConfig;
use dldp_core::net::{InputPipeline, NetConfig, TrainSchedule};
use dldp_core::pool::{SynthSpec, Tag};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("bad override `{0}`: expected dotted.path=value")]
    Override(String),
    #[error("config field `{path}`: {msg}")]
    Field { path: String, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Input manifest; empty means `<out_dir>/data/manifest.tsv`.
    pub manifest: String,
    /// Optional ground-truth box manifest for detection galleries.
    pub ground_truth: String,
    pub out_dir: String,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            manifest: String::new(),
            ground_truth: String::new(),
            out_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainStages {
    pub baseline: TrainSchedule,
    pub domain: TrainSchedule,
    pub hard: TrainSchedule,
    /// Used only when `strategy.init = "autoencoder"`.
    pub autoencoder: TrainSchedule,
}

impl Default for TrainStages {
    fn default() -> Self {
        Self {
            baseline: TrainSchedule::baseline(),
            domain: TrainSchedule::domain(),
            hard: TrainSchedule::hard_negative(),
            autoencoder: TrainSchedule::baseline(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    Supervised,
    Autoencoder,
}

/// How the discovery net is initialised and how probes are routed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Strategy {
    pub init: InitKind,
    pub selection: DomainSelection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub gallery_sizes: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            gallery_sizes: vec![50, 100, 200, 400],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub subset_tags: Vec<String>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            subset_tags: vec!["occlusion".into(), "lowres".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub synth: SynthSpec,
    /// `input_dim = 0` takes the width from the data.
    pub net: NetConfig,
    pub input: InputPipeline,
    pub train: TrainStages,
    pub discovery: DiscoveryConfig,
    pub strategy: Strategy,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub report: ReportConfig,
}

/// Reference synthetic data: held-out probe/gallery persons, distractors
/// and degraded probes so every stage has something to work on.
pub fn reference_synth() -> SynthSpec {
    SynthSpec {
        test_persons_per_mode: 25,
        distractors: 100,
        occlusion_fraction: 0.2,
        lowres_fraction: 0.2,
        ..SynthSpec::default()
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: Paths::default(),
            synth: reference_synth(),
            net: NetConfig {
                input_dim: 0,
                ..NetConfig::default()
            },
            input: InputPipeline::default(),
            train: TrainStages::default(),
            discovery: DiscoveryConfig::default(),
            strategy: Strategy::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

fn field(path: &str, e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Field {
        path: path.into(),
        msg: e.to_string(),
    }
}

/// Recursively overlays `user` onto `base`; tables merge, other values replace.
fn merge(base: &mut Table, user: Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> Value {
    format!("v = {value}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(value.to_owned()))
}

fn apply_override(table: &mut Table, spec: &str) -> Result<(), ConfigError> {
    let (path, value) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.into()))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(ConfigError::Override(spec.into()));
    }
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur.entry(k.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(field(path, format!("`{k}` is not a table"))),
        };
    }
    cur.insert(keys[keys.len() - 1].to_owned(), parse_value(value.trim()));
    Ok(())
}

impl PipelineConfig {
    /// Parses config text, applies overrides, fills defaults and validates.
    pub fn resolve(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut user: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        for o in overrides {
            apply_override(&mut user, o)?;
        }
        let mut merged = match Value::try_from(PipelineConfig::default()).map_err(|e| ConfigError::Syntax(e.to_string()))? {
            Value::Table(t) => t,
            _ => unreachable!("config serializes to a table"),
        };
        merge(&mut merged, user);
        let cfg: PipelineConfig = serde_path_to_error::deserialize(Value::Table(merged)).map_err(|e| {
            let path = e.path().to_string();
            field(&path, e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.synth.validate().map_err(|e| field("synth", e))?;
        if self.net.input_dim != 0 {
            self.net.validate().map_err(|e| field("net", e))?;
        } else {
            NetConfig {
                input_dim: 1,
                ..self.net.clone()
            }
            .validate()
            .map_err(|e| field("net", e))?;
        }
        self.input.validate().map_err(|e| field("input", e))?;
        for (name, s) in [
            ("train.baseline", &self.train.baseline),
            ("train.domain", &self.train.domain),
            ("train.hard", &self.train.hard),
            ("train.autoencoder", &self.train.autoencoder),
        ] {
            s.validate().map_err(|e| field(name, e))?;
        }
        self.discovery.validate().map_err(|e| field("discovery", e))?;
        self.eval.validate().map_err(|e| field("eval", e))?;
        if self.sweep.gallery_sizes.is_empty() || self.sweep.gallery_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(field("sweep.gallery_sizes", "sizes must be non-empty and strictly ascending"));
        }
        for t in &self.report.subset_tags {
            t.parse::<Tag>().map_err(|e| field("report.subset_tags", e))?;
        }
        Ok(())
    }

    /// SHA-256 over the resolved config, excluding `paths` (locations do
    /// not change results; input files are hashed in the run manifest).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths = Paths::default();
        let text = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Short form recorded in artifact headers.
    pub fn provenance(&self) -> String {
        format!("config={} seed={}", &self.hash()[..16], self.seed)
    }
}
