//! Experiment configuration, read from TOML.
//!
//! ```toml
//! property = "fairness-variance"
//! threshold = 1.0            # optional; calibrated from the stream if absent
//! initial = "m1"             # optional; defaults to the first model
//!
//! [engine]
//! seed = 7
//! memory = 0.10
//! residual = 0.01
//! thr = 0.10
//! burn_in = 50
//! g = 100
//! max_early_per_window = 1
//!
//! [penalty]
//! c1 = 10.0
//! c2 = 0.5
//!
//! [stream]
//! kind = "synthetic"         # or "csv" with `path` and `schema`
//! traces = 5000
//! train = 0                  # leading traces held out for training
//!
//! [[models]]
//! kind = "synthetic"
//! id = "m1"
//! p = 0.9
//! drift = [{ at = 2500, p = 0.2 }]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{EngineConfig, PropertyKind};
use crate::error::{Error, Result};
use crate::harness::metrics::PenaltyParams;
use crate::models::{five_arm_specs, ModelSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StreamSpec {
    Synthetic {
        traces: usize,
        #[serde(default)]
        train: usize,
    },
    Csv {
        path: PathBuf,
        /// Schema TOML; the synthetic schema when absent.
        #[serde(default)]
        schema: Option<PathBuf>,
        #[serde(default)]
        train: usize,
    },
}

impl StreamSpec {
    pub fn train(&self) -> usize {
        match self {
            StreamSpec::Synthetic { train, .. } | StreamSpec::Csv { train, .. } => *train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default = "default_property")]
    pub property: PropertyKind,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub initial: Option<String>,
    #[serde(default)]
    pub penalty: PenaltyParams,
    #[serde(default = "default_stream")]
    pub stream: StreamSpec,
    #[serde(default = "five_arm_specs")]
    pub models: Vec<ModelSpec>,
}

fn default_property() -> PropertyKind {
    PropertyKind::FairnessVariance
}

fn default_stream() -> StreamSpec {
    StreamSpec::Synthetic {
        traces: 5_000,
        train: 0,
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            engine: EngineConfig::default(),
            property: default_property(),
            threshold: None,
            initial: None,
            penalty: PenaltyParams::default(),
            stream: default_stream(),
            models: five_arm_specs(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Loads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut config = Self::from_toml_str(&std::fs::read_to_string(path)?)?;
        if let Some(dir) = path.parent() {
            config.resolve_paths(dir);
        }
        Ok(config)
    }

    pub fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let StreamSpec::Csv { path, schema, .. } = &mut self.stream {
            fix(path);
            if let Some(s) = schema {
                fix(s);
            }
        }
        for spec in &mut self.models {
            if let ModelSpec::NaiveBayes { model: Some(p), .. } = spec {
                fix(p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.engine.validate()?;
        self.penalty.validate()?;
        if let Some(t) = self.threshold {
            if !t.is_finite() {
                return Err(Error::Config(format!("threshold {t} is not finite")));
            }
        }
        if self.models.is_empty() {
            return Err(Error::Config("no models configured".into()));
        }
        if let Some(initial) = &self.initial {
            if !self.models.iter().any(|m| m.id() == initial) {
                return Err(Error::Config(format!("initial model `{initial}` is not in the pool")));
            }
        }
        Ok(())
    }
}
