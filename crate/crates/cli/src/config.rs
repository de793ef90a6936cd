//! Experiment configuration: a plain `key = value` file whose keys are dotted
//! paths into [`ExperimentConfig`], plus the same syntax for command-line
//! overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use rfap_core::pipeline::PipelineConfig;
use rfap_core::scenario::ManeuverClass;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// A configuration problem; mapped to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Synthetic,
    Highd,
    /// An existing dataset manifest (`load_path`).
    Load,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridPreset {
    Desk,
    Highd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HighdOptions {
    pub tracks: Option<PathBuf>,
    pub meta: Option<PathBuf>,
    /// Time-headway trigger in seconds.
    pub thw_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    pub kmeans_restarts: usize,
    pub q_min: usize,
    pub q_max: usize,
    /// Methods run by `compare-similarities`.
    pub methods: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub source: Source,
    pub grid: GridPreset,
    /// Synthetic samples per class.
    pub n_per_class: usize,
    pub labeled: Vec<String>,
    pub unlabeled: Vec<String>,
    pub test_fraction: f64,
    pub load_path: Option<PathBuf>,
    pub highd: HighdOptions,
    pub pipeline: PipelineConfig,
    pub eval: EvalOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let names = |c: &[ManeuverClass]| c.iter().map(|c| c.name().to_string()).collect();
        ExperimentConfig {
            seed: 0,
            source: Source::Synthetic,
            grid: GridPreset::Desk,
            n_per_class: 150,
            labeled: names(&ManeuverClass::ALL[..4]),
            unlabeled: names(&ManeuverClass::ALL[4..]),
            test_fraction: 0.2,
            load_path: None,
            highd: HighdOptions {
                tracks: None,
                meta: None,
                thw_threshold: 4.0,
            },
            pipeline: PipelineConfig::default(),
            eval: EvalOptions {
                kmeans_restarts: 10,
                q_min: 2,
                q_max: 8,
                methods: ["rfap", "breiman", "cosine", "l2", "knn", "rank"]
                    .map(String::from)
                    .to_vec(),
            },
        }
    }
}

impl ExperimentConfig {
    /// Defaults, then the file (if any), then each `key=value` override.
    /// The training seed always follows the top-level `seed`.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut tree = serde_json::to_value(Self::default()).expect("config serialises");
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
            for (n, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                apply(&mut tree, line)
                    .map_err(|e| ConfigError(format!("{}:{}: {}", path.display(), n + 1, e.0)))?;
            }
        }
        for o in overrides {
            apply(&mut tree, o)?;
        }
        let mut cfg: Self = serde_json::from_value(tree).map_err(|e| ConfigError(e.to_string()))?;
        cfg.pipeline.seed = cfg.seed;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), ConfigError> {
        if let Some(c) = self.labeled.iter().find(|c| self.unlabeled.contains(c)) {
            return Err(ConfigError(format!("class {c:?} is both labelled and unlabelled")));
        }
        if self.source == Source::Synthetic {
            for c in self.labeled.iter().chain(&self.unlabeled) {
                if ManeuverClass::from_name(c).is_none() {
                    return Err(ConfigError(format!("unknown class {c:?}")));
                }
            }
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(ConfigError(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        for m in &self.eval.methods {
            if rfap_core::pipeline::SimilarityMethod::from_name(m).is_none() {
                return Err(ConfigError(format!("unknown similarity method {m:?}")));
            }
        }
        self.pipeline
            .validate()
            .map_err(|e| ConfigError(e.to_string()))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Applies one `dotted.key = value` assignment to the JSON tree.
pub fn apply(tree: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("expected key=value, got {assignment:?}")))?;
    let (key, raw) = (key.trim(), raw.trim());
    if key == "pipeline.seed" {
        return Err(ConfigError("pipeline.seed follows the top-level seed; set seed instead".into()));
    }
    let mut node = &mut *tree;
    for part in key.split('.') {
        node = node
            .as_object_mut()
            .and_then(|m| m.get_mut(part))
            .ok_or_else(|| ConfigError(format!("unknown key {key:?}")))?;
    }
    *node = if key == "pipeline.q" {
        parse_q(raw)?
    } else {
        parse_value(raw, node)
    };
    Ok(())
}

/// `3`, `estimate` (2 to 8) or `estimate:MIN-MAX`.
fn parse_q(raw: &str) -> Result<Value, ConfigError> {
    let bad = || ConfigError(format!("pipeline.q must be an integer or estimate[:MIN-MAX], got {raw:?}"));
    if let Ok(q) = raw.parse::<usize>() {
        return Ok(serde_json::json!({ "fixed": q }));
    }
    let rest = raw.strip_prefix("estimate").ok_or_else(bad)?;
    let (min, max) = match rest.strip_prefix(':') {
        None if rest.is_empty() => (2, 8),
        Some(range) => {
            let (a, b) = range.split_once('-').ok_or_else(bad)?;
            (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?)
        }
        None => return Err(bad()),
    };
    Ok(serde_json::json!({ "estimate": { "min": min, "max": max } }))
}

fn parse_value(raw: &str, current: &Value) -> Value {
    match current {
        Value::String(_) => Value::String(raw.to_string()),
        Value::Array(items) => {
            if let Ok(v @ Value::Array(_)) = serde_json::from_str(raw) {
                return v;
            }
            let proto = items.first().cloned().unwrap_or(Value::String(String::new()));
            Value::Array(
                raw.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_value(s, &proto))
                    .collect(),
            )
        }
        _ => serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string())),
    }
}
