//! Categorical naive Bayes over a discretized numeric target.
//!
//! The target is cut into equal-frequency buckets, each predicted as the
//! midpoint of the training values it holds. Numeric features are binned by
//! training quantiles; categorical features are used as-is. Likelihoods use
//! additive smoothing with one extra slot per feature for unseen values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{FeatureMap, FeatureSchema, FeatureValue};
use crate::error::{Error, Result};
use crate::models::Predictor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Encoding {
    /// Ascending cut points; bin = number of cuts `<= x`.
    Numeric {
        cuts: Vec<f64>,
    },
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FeatureTable {
    name: String,
    encoding: Encoding,
    /// Known value keys, sorted.
    values: Vec<String>,
    /// `counts[class][value]`.
    counts: Vec<Vec<f64>>,
}

impl FeatureTable {
    fn key(&self, value: &FeatureValue) -> Result<String> {
        match (&self.encoding, value) {
            (Encoding::Numeric { cuts }, FeatureValue::Num(x)) => {
                Ok(format!("bin{}", cuts.iter().filter(|c| **c <= *x).count()))
            }
            (Encoding::Numeric { .. }, FeatureValue::Cat(s)) => Err(Error::Usage(format!(
                "feature `{}` expects a number, got {s:?}",
                self.name
            ))),
            (Encoding::Categorical, v) => Ok(v.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    /// Numeric prediction of each class (bucket midpoint).
    pub midpoints: Vec<f64>,
    /// Upper-exclusive cut points of the target buckets.
    pub target_cuts: Vec<f64>,
    pub class_counts: Vec<f64>,
    pub smoothing: f64,
    features: Vec<FeatureTable>,
}

/// Equal-frequency cut points: distinct values strictly above the minimum.
fn quantile_cuts(sorted: &[f64], buckets: usize) -> Vec<f64> {
    let n = sorted.len();
    let mut cuts: Vec<f64> = (1..buckets)
        .map(|k| sorted[(k * n / buckets).min(n - 1)])
        .filter(|c| *c > sorted[0])
        .collect();
    cuts.dedup();
    cuts
}

fn bucket_of(cuts: &[f64], x: f64) -> usize {
    cuts.iter().filter(|c| **c <= x).count()
}

fn sorted_values(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Trains on `(features, target)` rows using every schema feature.
pub fn train_naive_bayes(
    dataset: &[(FeatureMap, f64)],
    schema: &FeatureSchema,
    buckets: usize,
    smoothing: f64,
) -> Result<NaiveBayesModel> {
    if dataset.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    if buckets == 0 {
        return Err(Error::Usage("bucket count must be positive".into()));
    }
    if !(smoothing > 0.0 && smoothing.is_finite()) {
        return Err(Error::Usage(format!("smoothing {smoothing} must be positive")));
    }
    let targets = sorted_values(dataset.iter().map(|(_, y)| *y));
    if targets.iter().any(|y| !y.is_finite()) {
        return Err(Error::Usage("non-finite target".into()));
    }
    if targets[0] == targets[targets.len() - 1] {
        return Err(Error::DegenerateBuckets(format!(
            "target takes the single value {}",
            targets[0]
        )));
    }
    let target_cuts = quantile_cuts(&targets, buckets);
    let classes = target_cuts.len() + 1;
    let labels: Vec<usize> = dataset.iter().map(|(_, y)| bucket_of(&target_cuts, *y)).collect();

    let mut lo = vec![f64::INFINITY; classes];
    let mut hi = vec![f64::NEG_INFINITY; classes];
    let mut class_counts = vec![0.0; classes];
    for ((_, y), &c) in dataset.iter().zip(&labels) {
        lo[c] = lo[c].min(*y);
        hi[c] = hi[c].max(*y);
        class_counts[c] += 1.0;
    }
    let midpoints = lo.iter().zip(&hi).map(|(l, h)| (l + h) / 2.0).collect();

    let mut features = Vec::with_capacity(schema.features.len());
    for name in &schema.features {
        let column: Vec<&FeatureValue> = dataset
            .iter()
            .map(|(f, _)| {
                f.get(name)
                    .ok_or_else(|| Error::Schema(format!("training row lacks feature `{name}`")))
            })
            .collect::<Result<_>>()?;
        let numeric = !schema.is_protected(name) && column.iter().all(|v| v.as_num().is_some());
        let encoding = if numeric {
            let sorted = sorted_values(column.iter().filter_map(|v| v.as_num()));
            Encoding::Numeric {
                cuts: quantile_cuts(&sorted, buckets),
            }
        } else {
            Encoding::Categorical
        };
        let mut table = FeatureTable {
            name: name.clone(),
            encoding,
            values: Vec::new(),
            counts: Vec::new(),
        };
        let keys: Vec<String> = column.iter().map(|v| table.key(v)).collect::<Result<_>>()?;
        let mut values = keys.clone();
        values.sort();
        values.dedup();
        let mut counts = vec![vec![0.0; values.len()]; classes];
        for (key, &c) in keys.iter().zip(&labels) {
            let v = values.binary_search(key).expect("key collected above");
            counts[c][v] += 1.0;
        }
        table.values = values;
        table.counts = counts;
        features.push(table);
    }

    Ok(NaiveBayesModel {
        midpoints,
        target_cuts,
        class_counts,
        smoothing,
        features,
    })
}

impl NaiveBayesModel {
    pub fn classes(&self) -> usize {
        self.midpoints.len()
    }

    /// Normalized class posteriors for one input.
    pub fn posteriors(&self, features: &FeatureMap) -> Result<Vec<f64>> {
        let a = self.smoothing;
        let n: f64 = self.class_counts.iter().sum();
        let k = self.classes() as f64;
        let mut logp: Vec<f64> = self.class_counts.iter().map(|c| ((c + a) / (n + a * k)).ln()).collect();
        for table in &self.features {
            let value = features
                .get(&table.name)
                .ok_or_else(|| Error::Usage(format!("feature `{}` missing", table.name)))?;
            let key = table.key(value)?;
            let slot = table.values.binary_search(&key).ok();
            // One extra slot keeps unseen values at nonzero probability.
            let width = table.values.len() as f64 + 1.0;
            for (c, lp) in logp.iter_mut().enumerate() {
                let count = slot.map_or(0.0, |v| table.counts[c][v]);
                *lp += ((count + a) / (self.class_counts[c] + a * width)).ln();
            }
        }
        let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logp.iter().map(|lp| (lp - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        Ok(weights.into_iter().map(|w| w / total).collect())
    }

    /// Most probable bucket (lowest index on ties).
    pub fn classify(&self, features: &FeatureMap) -> Result<usize> {
        Ok(crate::bandit::argmax_first(&self.posteriors(features)?))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Predictor for NaiveBayesModel {
    fn predict(&self, features: &FeatureMap) -> Result<f64> {
        Ok(self.midpoints[self.classify(features)?])
    }
}
