//! Non-functional score functions. Fairness is measured as the variance of
//! a model's predictions across every combination of protected attributes.

use serde::{Deserialize, Serialize};

use crate::domain::{ExecutionTrace, FeatureMap, FeatureSchema, FeatureValue, PropertyKind};
use crate::error::{Error, Result};
use crate::models::Predictor;

/// Scores a candidate model (by index) on a trace. The engine only sees
/// models through this trait.
pub trait Evaluator {
    fn score(&self, model: usize, trace: &ExecutionTrace) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    pub value: f64,
    pub probes: usize,
}

/// A score function `trace × predictor → real`.
pub trait Scorer: Send + Sync {
    fn name(&self) -> &'static str;

    fn score(&self, trace: &ExecutionTrace, predictor: &dyn Predictor, schema: &FeatureSchema) -> Result<ScoreResult>;
}

/// Copies of `trace.dp`, one per element of the cartesian product of the
/// protected domains (first attribute varies slowest).
pub fn expand_protected_groups(trace: &ExecutionTrace, schema: &FeatureSchema) -> Result<Vec<FeatureMap>> {
    if let Some(empty) = schema.protected.iter().find(|a| a.values.is_empty()) {
        return Err(Error::Schema(format!(
            "protected attribute `{}` has an empty domain",
            empty.name
        )));
    }
    trace.validate(schema)?;
    let total: usize = schema.protected.iter().map(|a| a.values.len()).product();
    let mut probes = Vec::with_capacity(total);
    for mut code in 0..total {
        let mut probe = trace.dp.clone();
        for attr in schema.protected.iter().rev() {
            let n = attr.values.len();
            probe.insert(attr.name.clone(), FeatureValue::Cat(attr.values[code % n].clone()));
            code /= n;
        }
        probes.push(probe);
    }
    Ok(probes)
}

/// Population variance (divides by `n`). Zero for empty input.
pub fn population_variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    // Shifting by the first value makes identical inputs exactly 0.
    let n = values.len() as f64;
    let shift = values[0];
    let mean = values.iter().map(|v| v - shift).sum::<f64>() / n;
    values.iter().map(|v| (v - shift - mean).powi(2)).sum::<f64>() / n
}

fn describe_probe(probe: &FeatureMap) -> String {
    let parts: Vec<String> = probe.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Variance of the predictor's outputs over all protected-group probes of
/// the trace. Higher variance means weaker support for fairness.
pub fn fairness_variance_score(
    trace: &ExecutionTrace,
    predictor: &dyn Predictor,
    schema: &FeatureSchema,
) -> Result<ScoreResult> {
    let probes = expand_protected_groups(trace, schema)?;
    let mut predictions = Vec::with_capacity(probes.len());
    for probe in &probes {
        let value = predictor.predict(probe).map_err(|e| Error::Scorer {
            probe: describe_probe(probe),
            source: Box::new(e),
        })?;
        predictions.push(value);
    }
    Ok(ScoreResult {
        value: population_variance(&predictions),
        probes: probes.len(),
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FairnessVariance;

impl Scorer for FairnessVariance {
    fn name(&self) -> &'static str {
        "fairness-variance"
    }

    fn score(&self, trace: &ExecutionTrace, predictor: &dyn Predictor, schema: &FeatureSchema) -> Result<ScoreResult> {
        fairness_variance_score(trace, predictor, schema)
    }
}

pub fn scorer_for(kind: PropertyKind) -> Box<dyn Scorer> {
    match kind {
        PropertyKind::FairnessVariance => Box::new(FairnessVariance),
    }
}

/// Binds a pool of predictors to a scorer and schema.
pub struct PoolEvaluator<P> {
    predictors: Vec<P>,
    scorer: Box<dyn Scorer>,
    schema: FeatureSchema,
}

impl<P: Predictor> PoolEvaluator<P> {
    pub fn new(predictors: Vec<P>, scorer: Box<dyn Scorer>, schema: FeatureSchema) -> Self {
        Self {
            predictors,
            scorer,
            schema,
        }
    }

    pub fn predictors(&self) -> &[P] {
        &self.predictors
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }
}

impl<P: Predictor> Evaluator for PoolEvaluator<P> {
    fn score(&self, model: usize, trace: &ExecutionTrace) -> Result<f64> {
        let predictor = self
            .predictors
            .get(model)
            .ok_or_else(|| Error::Usage(format!("no predictor at index {model}")))?;
        Ok(self.scorer.score(trace, predictor, &self.schema)?.value)
    }
}
