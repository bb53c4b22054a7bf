//! Synthetic predictors whose fairness outcome is a controlled Bernoulli
//! draw, plus the matching synthetic trace stream.
//!
//! Each trace carries a sequence number. For a trace, a predictor hashes
//! `(seed, seq)` into `u ∈ [0, 1)`; when `u < p` it is *fair* and answers the
//! same value for every protected group (variance 0), otherwise its answer
//! moves with the protected combination (variance `spread² · Var(code)`).
//! Any threshold in `(0, spread² · Var(code)]` therefore succeeds with
//! probability exactly `p` per trace.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ExecutionTrace, FeatureMap, FeatureSchema, FeatureValue, ProtectedAttribute};
use crate::error::{Error, Result};
use crate::models::Predictor;
use crate::rng::{derive_seed, mix64, seeded, unit_interval};

pub const SEQ_FEATURE: &str = "seq";

/// Success probability switches to `p` from trace `at` onwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub at: usize,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPredictor {
    pub p: f64,
    #[serde(default)]
    pub drift: Vec<Drift>,
    pub seed: u64,
    pub base: f64,
    pub spread: f64,
    protected: Vec<ProtectedAttribute>,
}

impl SyntheticPredictor {
    pub fn new(p: f64, seed: u64, schema: &FeatureSchema) -> Result<Self> {
        check_probability(p)?;
        Ok(Self {
            p,
            drift: Vec::new(),
            seed,
            base: 10_000.0,
            spread: 1_000.0,
            protected: schema.protected.clone(),
        })
    }

    /// Adds a change point; change points apply in order of `at`.
    pub fn with_drift(mut self, at: usize, p: f64) -> Result<Self> {
        check_probability(p)?;
        self.drift.push(Drift { at, p });
        self.drift.sort_by_key(|d| d.at);
        Ok(self)
    }

    /// Success probability in effect at trace `seq`.
    pub fn probability_at(&self, seq: usize) -> f64 {
        self.drift
            .iter()
            .take_while(|d| d.at <= seq)
            .last()
            .map_or(self.p, |d| d.p)
    }

    /// Whether this predictor answers the trace fairly.
    pub fn is_fair_at(&self, seq: usize) -> bool {
        unit_interval(mix64(self.seed ^ mix64(seq as u64))) < self.probability_at(seq)
    }

    /// Smallest variance produced on an unfair trace.
    pub fn unfair_variance(&self) -> f64 {
        let total: usize = self.protected.iter().map(|a| a.values.len()).product();
        let codes: Vec<f64> = (0..total).map(|c| c as f64).collect();
        self.spread * self.spread * crate::scoring::population_variance(&codes)
    }

    fn combination_code(&self, features: &FeatureMap) -> Result<usize> {
        let mut code = 0;
        for attr in &self.protected {
            let value = features
                .get(&attr.name)
                .and_then(FeatureValue::as_cat)
                .ok_or_else(|| Error::Usage(format!("protected feature `{}` missing", attr.name)))?;
            let idx = attr
                .values
                .iter()
                .position(|v| v == value)
                .ok_or_else(|| Error::Usage(format!("`{}` = {value:?} not in domain", attr.name)))?;
            code = code * attr.values.len() + idx;
        }
        Ok(code)
    }
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Domain(format!("success probability {p} outside [0, 1]")))
    }
}

impl Predictor for SyntheticPredictor {
    fn predict(&self, features: &FeatureMap) -> Result<f64> {
        let seq = features
            .get(SEQ_FEATURE)
            .and_then(FeatureValue::as_num)
            .filter(|s| *s >= 0.0)
            .ok_or_else(|| Error::Usage(format!("feature `{SEQ_FEATURE}` missing or invalid")))?;
        let code = self.combination_code(features)?;
        if self.is_fair_at(seq as usize) {
            Ok(self.base)
        } else {
            Ok(self.base + self.spread * code as f64)
        }
    }
}

/// Schema of the synthetic stream: a sequence number, age, and two
/// protected attributes (2 × 3 groups).
pub fn synthetic_schema() -> FeatureSchema {
    FeatureSchema::new(
        vec![SEQ_FEATURE.into(), "age".into(), "gender".into(), "race".into()],
        vec![
            ProtectedAttribute {
                name: "gender".into(),
                values: vec!["male".into(), "female".into()],
            },
            ProtectedAttribute {
                name: "race".into(),
                values: vec!["latino".into(), "white".into(), "black".into()],
            },
        ],
        "bail",
    )
    .expect("static schema is valid")
}

/// `n` synthetic traces with `seq = 0..n`.
pub fn synthetic_stream(n: usize, seed: u64) -> Vec<ExecutionTrace> {
    let schema = synthetic_schema();
    let mut rng = seeded(derive_seed(seed, 0x5354_5245_414d));
    (0..n)
        .map(|t| {
            let age = rng.random_range(18..80) as f64;
            let gender = &schema.protected[0].values[rng.random_range(0..2)];
            let race = &schema.protected[1].values[rng.random_range(0..3)];
            let mut dp = FeatureMap::new();
            dp.insert(SEQ_FEATURE.into(), FeatureValue::Num(t as f64));
            dp.insert("age".into(), FeatureValue::Num(age));
            dp.insert("gender".into(), FeatureValue::Cat(gender.clone()));
            dp.insert("race".into(), FeatureValue::Cat(race.clone()));
            let bail = 500.0 * (1.0 + (age / 10.0).floor());
            ExecutionTrace { dp, pred: bail }
        })
        .collect()
}
