//! Candidate predictors and pool construction.

mod naive_bayes;
mod synthetic;

use std::path::PathBuf;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use naive_bayes::{train_naive_bayes, NaiveBayesModel};
pub use synthetic::{synthetic_schema, synthetic_stream, Drift, SyntheticPredictor, SEQ_FEATURE};

use crate::bandit::CandidateSet;
use crate::domain::{FeatureMap, FeatureSchema};
use crate::error::{Error, Result};
use crate::rng::fnv1a;

/// Anything that maps a feature map to a numeric prediction.
pub trait Predictor: Send + Sync {
    fn predict(&self, features: &FeatureMap) -> Result<f64>;
}

impl<F> Predictor for F
where
    F: Fn(&FeatureMap) -> Result<f64> + Send + Sync,
{
    fn predict(&self, features: &FeatureMap) -> Result<f64> {
        self(features)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Model {
    NaiveBayes(NaiveBayesModel),
    Synthetic(SyntheticPredictor),
}

impl Predictor for Model {
    fn predict(&self, features: &FeatureMap) -> Result<f64> {
        match self {
            Model::NaiveBayes(m) => m.predict(features),
            Model::Synthetic(m) => m.predict(features),
        }
    }
}

/// Per-model entry of a pool description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    Synthetic {
        id: String,
        p: f64,
        #[serde(default)]
        drift: Vec<Drift>,
    },
    NaiveBayes {
        id: String,
        /// Load a previously trained model instead of training.
        #[serde(default)]
        model: Option<PathBuf>,
        /// Fraction of the training rows sampled for this model.
        #[serde(default = "default_fraction")]
        fraction: f64,
        #[serde(default = "default_buckets")]
        buckets: usize,
        #[serde(default = "default_smoothing")]
        smoothing: f64,
    },
}

fn default_fraction() -> f64 {
    1.0
}

fn default_buckets() -> usize {
    10
}

fn default_smoothing() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn id(&self) -> &str {
        match self {
            ModelSpec::Synthetic { id, .. } | ModelSpec::NaiveBayes { id, .. } => id,
        }
    }

    pub fn synthetic(id: impl Into<String>, p: f64) -> Self {
        ModelSpec::Synthetic {
            id: id.into(),
            p,
            drift: Vec::new(),
        }
    }
}

/// Pool of five synthetic arms with success probabilities
/// `{0.9, 0.6, 0.5, 0.4, 0.3}`, ids `m1..m5`.
pub fn five_arm_specs() -> Vec<ModelSpec> {
    [0.9, 0.6, 0.5, 0.4, 0.3]
        .iter()
        .enumerate()
        .map(|(i, &p)| ModelSpec::synthetic(format!("m{}", i + 1), p))
        .collect()
}

/// Builds predictors and a fresh candidate set (ids in spec order).
///
/// Synthetic predictors derive their seed from `seed` and their id.
/// Naive Bayes models train on a random subset of `training` drawn with
/// `rng`, unless they load a saved model.
pub fn make_candidate_pool<R: Rng + ?Sized>(
    specs: &[ModelSpec],
    schema: &FeatureSchema,
    training: &[(FeatureMap, f64)],
    seed: u64,
    rng: &mut R,
) -> Result<(CandidateSet, Vec<Model>)> {
    if specs.is_empty() {
        return Err(Error::Usage("model pool is empty".into()));
    }
    let candidates = CandidateSet::new(specs.iter().map(|s| s.id().to_string()))?;
    let mut models = Vec::with_capacity(specs.len());
    for spec in specs {
        let model = match spec {
            ModelSpec::Synthetic { id, p, drift } => {
                let mut m = SyntheticPredictor::new(*p, seed ^ fnv1a(id.as_bytes()), schema)?;
                for d in drift {
                    m = m.with_drift(d.at, d.p)?;
                }
                Model::Synthetic(m)
            }
            ModelSpec::NaiveBayes { model: Some(path), .. } => Model::NaiveBayes(NaiveBayesModel::load(path)?),
            ModelSpec::NaiveBayes {
                id,
                fraction,
                buckets,
                smoothing,
                ..
            } => {
                if !(*fraction > 0.0 && *fraction <= 1.0) {
                    return Err(Error::Config(format!(
                        "model `{id}`: fraction {fraction} outside (0, 1]"
                    )));
                }
                if training.is_empty() {
                    return Err(Error::Config(format!("model `{id}` needs training data")));
                }
                let n = ((training.len() as f64 * fraction).round() as usize).clamp(1, training.len());
                let mut picked = sample(rng, training.len(), n).into_vec();
                picked.sort_unstable();
                let subset: Vec<(FeatureMap, f64)> = picked.into_iter().map(|i| training[i].clone()).collect();
                Model::NaiveBayes(train_naive_bayes(&subset, schema, *buckets, *smoothing)?)
            }
        };
        models.push(model);
    }
    Ok((candidates, models))
}
