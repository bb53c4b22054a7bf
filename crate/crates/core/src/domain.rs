//! Shared data model: execution traces, feature schemas, properties, engine
//! configuration and the append-only observation/event logs.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single feature value. Protected attributes are always categorical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Num(f64),
    Cat(String),
}

impl FeatureValue {
    /// Numbers when the text parses as `f64`, categories otherwise.
    pub fn parse(text: &str) -> Self {
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => FeatureValue::Num(v),
            _ => FeatureValue::Cat(text.to_string()),
        }
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            FeatureValue::Num(v) => Some(*v),
            FeatureValue::Cat(_) => None,
        }
    }

    pub fn as_cat(&self) -> Option<&str> {
        match self {
            FeatureValue::Cat(s) => Some(s),
            FeatureValue::Num(_) => None,
        }
    }
}

impl fmt::Display for FeatureValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureValue::Num(v) => write!(f, "{v}"),
            FeatureValue::Cat(s) => f.write_str(s),
        }
    }
}

/// Feature name to value. Ordered so that iteration (and hashing) is stable.
pub type FeatureMap = BTreeMap<String, FeatureValue>;

/// One observed `(dp, pred)` pair flowing through the stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub dp: FeatureMap,
    pub pred: f64,
}

impl ExecutionTrace {
    pub fn new(dp: FeatureMap, pred: f64) -> Result<Self> {
        if dp.is_empty() {
            return Err(Error::Schema("trace has no features".into()));
        }
        Ok(Self { dp, pred })
    }

    /// Checks the trace against a schema: every protected attribute is
    /// present and takes a value of its declared domain.
    pub fn validate(&self, schema: &FeatureSchema) -> Result<()> {
        if self.dp.is_empty() {
            return Err(Error::Schema("trace has no features".into()));
        }
        for attr in &schema.protected {
            let value = self
                .dp
                .get(&attr.name)
                .ok_or_else(|| Error::Schema(format!("protected attribute `{}` missing", attr.name)))?;
            let text = value.to_string();
            if !attr.values.contains(&text) {
                return Err(Error::Domain(format!(
                    "`{}` = {text:?} is outside {:?}",
                    attr.name, attr.values
                )));
            }
        }
        Ok(())
    }
}

/// A protected attribute and its finite value domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtectedAttribute {
    pub name: String,
    pub values: Vec<String>,
}

/// Column layout of trace records: features in order, then the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<String>,
    #[serde(default)]
    pub protected: Vec<ProtectedAttribute>,
    pub target: String,
}

impl FeatureSchema {
    pub fn new(features: Vec<String>, protected: Vec<ProtectedAttribute>, target: impl Into<String>) -> Result<Self> {
        let schema = Self {
            features,
            protected,
            target: target.into(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Schema("schema declares no features".into()));
        }
        for (i, name) in self.features.iter().enumerate() {
            if self.features[..i].contains(name) {
                return Err(Error::Schema(format!("duplicate feature `{name}`")));
            }
        }
        if self.features.contains(&self.target) {
            return Err(Error::Schema(format!("target `{}` is also a feature", self.target)));
        }
        for attr in &self.protected {
            if !self.features.contains(&attr.name) {
                return Err(Error::Schema(format!(
                    "protected attribute `{}` is not a feature",
                    attr.name
                )));
            }
            if attr.values.len() < 2 {
                return Err(Error::Schema(format!(
                    "protected attribute `{}` needs at least two values",
                    attr.name
                )));
            }
        }
        Ok(())
    }

    pub fn protected_attribute(&self, name: &str) -> Option<&ProtectedAttribute> {
        self.protected.iter().find(|a| a.name == name)
    }

    pub fn is_protected(&self, name: &str) -> bool {
        self.protected_attribute(name).is_some()
    }

    /// Header row of a trace file.
    pub fn header(&self) -> Vec<&str> {
        self.features
            .iter()
            .map(String::as_str)
            .chain(std::iter::once(self.target.as_str()))
            .collect()
    }

    /// Parses a schema file (TOML).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let schema: Self = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Builds a trace from already-split fields in header order.
    pub fn parse_fields<'a, I>(&self, fields: I) -> Result<ExecutionTrace>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let fields: Vec<&str> = fields.into_iter().collect();
        let expected = self.features.len() + 1;
        if fields.len() != expected {
            return Err(Error::Schema(format!(
                "expected {expected} columns, found {}",
                fields.len()
            )));
        }
        let mut dp = FeatureMap::new();
        for (name, raw) in self.features.iter().zip(&fields) {
            let value = match self.protected_attribute(name) {
                Some(attr) => {
                    if !attr.values.iter().any(|v| v == raw) {
                        return Err(Error::Domain(format!(
                            "`{name}` = {raw:?} is outside {:?}",
                            attr.values
                        )));
                    }
                    FeatureValue::Cat(raw.to_string())
                }
                None => {
                    if raw.is_empty() {
                        return Err(Error::Schema(format!("feature `{name}` is empty")));
                    }
                    FeatureValue::parse(raw)
                }
            };
            dp.insert(name.clone(), value);
        }
        let raw_pred = fields[expected - 1];
        let pred = raw_pred
            .parse::<f64>()
            .ok()
            .filter(|p| p.is_finite())
            .ok_or_else(|| Error::Schema(format!("prediction {raw_pred:?} is not numeric")))?;
        ExecutionTrace::new(dp, pred)
    }

    /// Fields of a trace in header order.
    pub fn fields(&self, trace: &ExecutionTrace) -> Result<Vec<String>> {
        let mut out = Vec::with_capacity(self.features.len() + 1);
        for name in &self.features {
            let value = trace
                .dp
                .get(name)
                .ok_or_else(|| Error::Schema(format!("feature `{name}` missing from trace")))?;
            out.push(value.to_string());
        }
        out.push(trace.pred.to_string());
        Ok(out)
    }
}

fn csv_reader<R: Read>(input: R, has_headers: bool) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(has_headers)
        .trim(csv::Trim::All)
        .from_reader(input)
}

/// Parses one delimited record (no header) against the schema.
pub fn parse_trace(line: &str, schema: &FeatureSchema) -> Result<ExecutionTrace> {
    let mut reader = csv_reader(line.as_bytes(), false);
    let mut record = csv::StringRecord::new();
    if !reader.read_record(&mut record)? {
        return Err(Error::Schema("empty record".into()));
    }
    schema.parse_fields(record.iter())
}

/// Renders a trace as one delimited record (no trailing newline).
pub fn serialize_trace(trace: &ExecutionTrace, schema: &FeatureSchema) -> Result<String> {
    let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
    writer.write_record(schema.fields(trace)?)?;
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let mut line = String::from_utf8(bytes).map_err(|e| Error::Schema(e.to_string()))?;
    while line.ends_with('\n') || line.ends_with('\r') {
        line.pop();
    }
    Ok(line)
}

/// Reads a header-first trace file. The header must list the schema's
/// features followed by its target, in order.
pub fn read_traces<R: Read>(input: R, schema: &FeatureSchema) -> Result<Vec<ExecutionTrace>> {
    let mut reader = csv_reader(input, true);
    let header = reader.headers()?.clone();
    let expected = schema.header();
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Schema(format!(
            "header {:?} does not match schema {:?}",
            header.iter().collect::<Vec<_>>(),
            expected
        )));
    }
    let mut traces = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let trace = schema.parse_fields(record.iter()).map_err(|e| Error::at_trace(i, e))?;
        traces.push(trace);
    }
    Ok(traces)
}

pub fn load_traces(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Vec<ExecutionTrace>> {
    read_traces(std::fs::File::open(path)?, schema)
}

pub fn write_traces<W: Write>(output: W, traces: &[ExecutionTrace], schema: &FeatureSchema) -> Result<()> {
    let mut writer = csv::Writer::from_writer(output);
    writer.write_record(schema.header())?;
    for trace in traces {
        writer.write_record(schema.fields(trace)?)?;
    }
    writer.flush()?;
    Ok(())
}

/// Controlled vocabulary of non-functional properties with a shipped scorer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PropertyKind {
    #[serde(rename = "fairness-variance")]
    FairnessVariance,
}

impl std::str::FromStr for PropertyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fairness-variance" => Ok(PropertyKind::FairnessVariance),
            other => Err(Error::Config(format!("unknown property `{other}`"))),
        }
    }
}

/// A property paired with its score threshold. A score is a success iff it
/// is strictly below the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonFunctionalProperty {
    pub kind: PropertyKind,
    pub threshold: f64,
}

impl NonFunctionalProperty {
    pub fn new(kind: PropertyKind, threshold: f64) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::Config(format!("threshold {threshold} is not finite")));
        }
        Ok(Self { kind, threshold })
    }

    pub fn fairness(threshold: f64) -> Result<Self> {
        Self::new(PropertyKind::FairnessVariance, threshold)
    }

    #[inline]
    pub fn is_success(&self, score: f64) -> bool {
        score < self.threshold
    }
}

/// Percentile used by the value-remaining termination rule.
pub const TERMINATION_PERCENTILE: u32 = 95;

/// Tunables of the dynamic assessment engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Memory carried across windows, in `[0, 1]`.
    pub memory: f64,
    /// Value-remaining threshold as a fraction of the best model's value.
    pub residual: f64,
    /// Degradation threshold for early substitution.
    pub thr: f64,
    /// Minimum number of traces per window.
    pub burn_in: usize,
    /// Monte Carlo draw sets per trace.
    pub g: usize,
    pub seed: u64,
    pub max_early_per_window: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            memory: 0.10,
            residual: 0.01,
            thr: 0.10,
            burn_in: 50,
            g: 100,
            seed: 0,
            max_early_per_window: 1,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.memory) {
            return Err(Error::Config(format!("memory {} outside [0, 1]", self.memory)));
        }
        if !(self.residual > 0.0 && self.residual.is_finite()) {
            return Err(Error::Config(format!("residual {} must be positive", self.residual)));
        }
        if !self.thr.is_finite() {
            return Err(Error::Config(format!("thr {} is not finite", self.thr)));
        }
        if self.g == 0 {
            return Err(Error::Config("g must be at least 1".into()));
        }
        if self.burn_in == 0 {
            return Err(Error::Config("burn_in must be at least 1".into()));
        }
        Ok(())
    }
}

/// One score application: which model was pulled on which trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub trace: usize,
    pub model: usize,
    pub score: f64,
    pub success: bool,
}

/// Append-only observation history.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationLog {
    entries: Vec<Observation>,
}

impl ObservationLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, obs: Observation) -> Result<()> {
        if let Some(last) = self.entries.last() {
            if obs.trace <= last.trace {
                return Err(Error::Usage(format!(
                    "observation for trace {} after trace {}",
                    obs.trace, last.trace
                )));
            }
        }
        self.entries.push(obs);
        Ok(())
    }

    pub fn entries(&self) -> &[Observation] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Observation> {
        self.entries.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubstitutionKind {
    EndOfWindow,
    Early,
}

/// A model swap, as written to the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstitutionEvent {
    pub kind: SubstitutionKind,
    pub window: usize,
    pub trace: usize,
    pub from: String,
    pub to: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degradation: Option<f64>,
    /// Traces between an early trigger and the end of its window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub until_window_end: Option<usize>,
}

impl SubstitutionEvent {
    pub fn end_of_window(window: usize, trace: usize, from: &str, to: &str) -> Result<Self> {
        Self::checked(SubstitutionKind::EndOfWindow, window, trace, from, to, None)
    }

    pub fn early(window: usize, trace: usize, from: &str, to: &str, degradation: f64) -> Result<Self> {
        Self::checked(SubstitutionKind::Early, window, trace, from, to, Some(degradation))
    }

    fn checked(
        kind: SubstitutionKind,
        window: usize,
        trace: usize,
        from: &str,
        to: &str,
        degradation: Option<f64>,
    ) -> Result<Self> {
        if from == to {
            return Err(Error::Usage(format!("substitution of `{from}` by itself")));
        }
        Ok(Self {
            kind,
            window,
            trace,
            from: from.to_string(),
            to: to.to_string(),
            degradation,
            until_window_end: None,
        })
    }
}
