//! Dual-track experiments: a no-memory baseline engine and the configured
//! memory engine consume the same stream with the same seed. On every trace
//! the variant's current ranking top (from its latest window boundary) is
//! placed in the baseline's current ranking.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bandit::{static_select, CandidateSet, StaticSelection};
use crate::domain::{
    load_traces, EngineConfig, ExecutionTrace, FeatureMap, FeatureSchema, NonFunctionalProperty, Observation,
    SubstitutionEvent, SubstitutionKind,
};
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, StreamSpec};
use crate::harness::metrics::{classify_early_substitutions, residual_error, EarlyStats};
use crate::models::{make_candidate_pool, synthetic_schema, synthetic_stream, Model, ModelSpec};
use crate::rng::{derive_seed, seeded};
use crate::scoring::{scorer_for, Evaluator, PoolEvaluator};
use crate::window::{Engine, WindowPolicy, WindowRecord};

const POOL_STREAM: u64 = 0x504f_4f4c;

/// Stream, pool and property ready to run.
pub struct Prepared {
    pub schema: FeatureSchema,
    pub traces: Vec<ExecutionTrace>,
    pub candidates: CandidateSet,
    pub evaluator: PoolEvaluator<Model>,
    pub property: NonFunctionalProperty,
}

/// Loads the stream, trains or builds the pool and fixes the success
/// threshold (calibrating it when the config leaves it open).
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let seed = config.engine.seed;
    let (schema, mut traces) = match &config.stream {
        StreamSpec::Synthetic { traces, train } => (synthetic_schema(), synthetic_stream(train + traces, seed)),
        StreamSpec::Csv { path, schema, .. } => {
            let schema = match schema {
                Some(p) => FeatureSchema::load(p)?,
                None => synthetic_schema(),
            };
            let traces = load_traces(path, &schema)?;
            (schema, traces)
        }
    };
    let train = config.stream.train().min(traces.len());
    let training: Vec<(FeatureMap, f64)> = traces.drain(..train).map(|t| (t.dp, t.pred)).collect();
    if traces.is_empty() {
        return Err(Error::Usage("trace stream is empty".into()));
    }

    let mut pool_rng = seeded(derive_seed(seed, POOL_STREAM));
    let (mut candidates, models) = make_candidate_pool(&config.models, &schema, &training, seed, &mut pool_rng)?;
    if let Some(initial) = &config.initial {
        candidates.select_id(initial)?;
    }
    let evaluator = PoolEvaluator::new(models, scorer_for(config.property), schema.clone());
    let threshold = match config.threshold {
        Some(t) => t,
        None => calibrate_threshold(
            &traces[..config.engine.burn_in.min(traces.len())],
            &evaluator,
            candidates.len(),
        )?,
    };
    let property = NonFunctionalProperty::new(config.property, threshold)?;
    Ok(Prepared {
        schema,
        traces,
        candidates,
        evaluator,
        property,
    })
}

/// Median score of `traces` over every model. A non-positive median maps
/// to the smallest positive threshold, so zero scores still succeed.
pub fn calibrate_threshold<E: Evaluator + ?Sized>(
    traces: &[ExecutionTrace],
    evaluator: &E,
    models: usize,
) -> Result<f64> {
    let mut scores = Vec::with_capacity(traces.len() * models);
    for (t, trace) in traces.iter().enumerate() {
        for m in 0..models {
            scores.push(evaluator.score(m, trace).map_err(|e| Error::at_trace(t, e))?);
        }
    }
    if scores.is_empty() {
        return Err(Error::Usage("no traces to calibrate the threshold".into()));
    }
    scores.sort_by(f64::total_cmp);
    let n = scores.len();
    let median = if n % 2 == 1 {
        scores[n / 2]
    } else {
        (scores[n / 2 - 1] + scores[n / 2]) / 2.0
    };
    Ok(if median > 0.0 { median } else { f64::MIN_POSITIVE })
}

/// One row of the per-trace table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub trace: usize,
    pub window: usize,
    pub pulled: String,
    pub score: f64,
    pub success: bool,
    pub selected: String,
    pub assurance: f64,
    pub degradation: f64,
    pub value_remaining: f64,
    /// Top of the variant's latest boundary ranking.
    pub top: String,
    pub baseline_top: String,
    /// 1-based position of `top` in the baseline ranking.
    pub baseline_position: usize,
    pub residual_error: f64,
    pub cumulative_error: f64,
    pub window_closed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSummary {
    pub windows_closed: usize,
    /// Mean size of closed windows.
    pub mean_window_size: Option<f64>,
    pub end_of_window_substitutions: usize,
    pub early_substitutions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub memory: f64,
    pub thr: f64,
    pub residual: f64,
    pub burn_in: usize,
    pub g: usize,
    pub threshold: f64,
    pub models: Vec<String>,
    pub traces: usize,
    pub windows_closed: usize,
    pub mean_window_size: Option<f64>,
    pub end_of_window_substitutions: usize,
    pub early: EarlyStats,
    /// Early events in the final, still open window.
    pub early_pending: usize,
    pub early_exhausted: usize,
    pub cumulative_residual_error: f64,
    pub final_selected: String,
    pub baseline: TrackSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub traces: Vec<TraceRecord>,
    /// Variant windows, closed ones followed by the open tail.
    pub windows: Vec<WindowRecord>,
    pub events: Vec<SubstitutionEvent>,
    pub observations: Vec<Observation>,
    pub summary: Summary,
}

fn track_summary(engine: &Engine) -> TrackSummary {
    let closed = engine.windows();
    TrackSummary {
        windows_closed: closed.len(),
        mean_window_size: mean_size(closed),
        end_of_window_substitutions: count_kind(engine.events(), SubstitutionKind::EndOfWindow),
        early_substitutions: count_kind(engine.events(), SubstitutionKind::Early),
    }
}

fn mean_size(windows: &[WindowRecord]) -> Option<f64> {
    let closed: Vec<_> = windows.iter().filter(|w| w.closed).collect();
    (!closed.is_empty()).then(|| closed.iter().map(|w| w.size as f64).sum::<f64>() / closed.len() as f64)
}

fn count_kind(events: &[SubstitutionEvent], kind: SubstitutionKind) -> usize {
    events.iter().filter(|e| e.kind == kind).count()
}

/// Splits early events into classified ones (closed windows) and a count of
/// those still pending in the open window.
fn classify_with_pending(
    events: &[SubstitutionEvent],
    windows: &[WindowRecord],
    ids: &[String],
) -> Result<(EarlyStats, usize)> {
    let (closed, pending): (Vec<_>, Vec<_>) = events
        .iter()
        .filter(|e| e.kind == SubstitutionKind::Early)
        .cloned()
        .partition(|e| windows.iter().any(|w| w.closed && w.index == e.window));
    Ok((classify_early_substitutions(&closed, windows, ids)?, pending.len()))
}

/// Runs the baseline (fresh windows) and the configured memory engine
/// side by side over the configured stream.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let prepared = prepare(config)?;
    run_prepared(&prepared, &config.engine, config)
}

pub fn run_prepared(
    prepared: &Prepared,
    engine_config: &EngineConfig,
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    let ids = prepared.candidates.ids().to_vec();
    let k = ids.len();
    let mut baseline = Engine::new(
        prepared.candidates.clone(),
        prepared.property,
        engine_config.clone(),
        WindowPolicy::Fresh,
    )?;
    let mut variant = Engine::new(
        prepared.candidates.clone(),
        prepared.property,
        engine_config.clone(),
        WindowPolicy::Memory(engine_config.memory),
    )?;

    let mut records = Vec::with_capacity(prepared.traces.len());
    let mut cumulative = 0.0;
    for (t, trace) in prepared.traces.iter().enumerate() {
        baseline.step(t, trace, &prepared.evaluator)?;
        let out = variant.step(t, trace, &prepared.evaluator)?;
        let base_ranking = baseline.ranking();
        let top = variant.ranking().top();
        let xi = if k >= 2 {
            residual_error(base_ranking, top, k, &config.penalty)?
        } else {
            0.0
        };
        cumulative += xi;
        records.push(TraceRecord {
            trace: t,
            window: out.window,
            pulled: ids[out.pulled].clone(),
            score: out.score,
            success: out.success,
            selected: ids[out.selected].clone(),
            assurance: out.assurance,
            degradation: out.degradation,
            value_remaining: out.value_remaining,
            top: ids[top].clone(),
            baseline_top: ids[base_ranking.top()].clone(),
            baseline_position: base_ranking.position(top).unwrap_or(0),
            residual_error: xi,
            cumulative_error: cumulative,
            window_closed: out.closed.is_some(),
        });
    }

    let windows = variant.all_windows();
    let events = variant.events().to_vec();
    let (early, early_pending) = classify_with_pending(&events, &windows, &ids)?;
    let own = track_summary(&variant);
    let summary = Summary {
        seed: engine_config.seed,
        memory: engine_config.memory,
        thr: engine_config.thr,
        residual: engine_config.residual,
        burn_in: engine_config.burn_in,
        g: engine_config.g,
        threshold: prepared.property.threshold,
        models: ids.clone(),
        traces: records.len(),
        windows_closed: own.windows_closed,
        mean_window_size: own.mean_window_size,
        end_of_window_substitutions: own.end_of_window_substitutions,
        early,
        early_pending,
        early_exhausted: variant.early_exhausted(),
        cumulative_residual_error: cumulative,
        final_selected: variant.candidates().selected_id().to_string(),
        baseline: track_summary(&baseline),
    };
    Ok(ExperimentReport {
        traces: records,
        windows,
        events,
        observations: variant.observations().entries().to_vec(),
        summary,
    })
}

/// Runs only the configured memory engine, without the baseline track.
pub fn run_single(config: &ExperimentConfig) -> Result<Engine> {
    let prepared = prepare(config)?;
    let mut engine = Engine::with_memory(prepared.candidates.clone(), prepared.property, config.engine.clone())?;
    engine.run(&prepared.traces, &prepared.evaluator)?;
    Ok(engine)
}

/// Static MAB over the configured stream and pool (no windows).
pub fn run_static_select(config: &ExperimentConfig) -> Result<(Vec<String>, StaticSelection)> {
    let mut prepared = prepare(config)?;
    let mut rng = seeded(config.engine.seed);
    let selection = static_select(
        &mut prepared.candidates,
        &prepared.traces,
        &prepared.property,
        &prepared.evaluator,
        &mut rng,
    )?;
    Ok((prepared.candidates.ids().to_vec(), selection))
}

/// Convenience config: synthetic stream of `traces` over `models`.
pub fn synthetic_config(models: Vec<ModelSpec>, traces: usize, engine: EngineConfig) -> ExperimentConfig {
    ExperimentConfig {
        engine,
        threshold: Some(1.0),
        stream: StreamSpec::Synthetic { traces, train: 0 },
        models,
        ..ExperimentConfig::default()
    }
}

#[derive(Serialize, Deserialize)]
struct WindowRow {
    index: usize,
    start: usize,
    end: usize,
    size: usize,
    closed: bool,
    ranking: String,
    probabilities: String,
    alpha: String,
    beta: String,
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

impl ExperimentReport {
    /// Writes `traces.csv`, `windows.csv`, `events.jsonl`,
    /// `observations.jsonl` and `summary.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let ids = &self.summary.models;

        let mut traces = csv::Writer::from_path(dir.join("traces.csv"))?;
        for r in &self.traces {
            traces.serialize(r)?;
        }
        traces.flush()?;

        let mut windows = csv::Writer::from_path(dir.join("windows.csv"))?;
        for w in &self.windows {
            windows.serialize(WindowRow {
                index: w.index,
                start: w.start,
                end: w.end,
                size: w.size,
                closed: w.closed,
                ranking: join(w.ranking.iter().map(|&m| &ids[m])),
                probabilities: join(&w.probabilities),
                alpha: join(w.states.iter().map(|s| s.alpha)),
                beta: join(w.states.iter().map(|s| s.beta)),
            })?;
        }
        windows.flush()?;

        write_jsonl(&dir.join("events.jsonl"), &self.events)?;
        let observations: Vec<_> = self
            .observations
            .iter()
            .map(|o| ObservationRow {
                trace: o.trace,
                model: ids[o.model].clone(),
                score: o.score,
                success: o.success,
            })
            .collect();
        write_jsonl(&dir.join("observations.jsonl"), &observations)?;

        let mut summary = serde_json::to_string_pretty(&self.summary)?;
        summary.push('\n');
        fs::write(dir.join("summary.json"), summary)?;
        Ok(())
    }
}

#[derive(Serialize)]
struct ObservationRow {
    trace: usize,
    model: String,
    score: f64,
    success: bool,
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Recomputes headline counts from the logs of a report directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogSummary {
    pub windows_closed: usize,
    pub traces: usize,
    pub mean_window_size: Option<f64>,
    pub end_of_window_substitutions: usize,
    pub early: EarlyStats,
    pub early_pending: usize,
    /// Mean traces from an early trigger to its window's end.
    pub mean_until_window_end: Option<f64>,
}

pub fn summarize_report_dir(dir: impl AsRef<Path>) -> Result<LogSummary> {
    let dir = dir.as_ref();
    let mut reader = csv::Reader::from_path(dir.join("windows.csv"))?;
    let rows: Vec<WindowRow> = reader.deserialize().collect::<std::result::Result<_, _>>()?;
    let mut ids: Vec<String> = Vec::new();
    let mut windows = Vec::with_capacity(rows.len());
    for row in &rows {
        let ranking = row
            .ranking
            .split(';')
            .map(|id| match ids.iter().position(|x| x == id) {
                Some(i) => i,
                None => {
                    ids.push(id.to_string());
                    ids.len() - 1
                }
            })
            .collect();
        windows.push(WindowRecord {
            index: row.index,
            start: row.start,
            end: row.end,
            size: row.size,
            closed: row.closed,
            states: Vec::new(),
            probabilities: Vec::new(),
            ranking,
        });
    }
    let mut events = Vec::new();
    for (n, line) in BufReader::new(File::open(dir.join("events.jsonl"))?)
        .lines()
        .enumerate()
    {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event: SubstitutionEvent =
            serde_json::from_str(&line).map_err(|e| Error::Schema(format!("events.jsonl line {}: {e}", n + 1)))?;
        events.push(event);
    }
    let (early, early_pending) = classify_with_pending(&events, &windows, &ids)?;
    let durations: Vec<f64> = events
        .iter()
        .filter_map(|e| e.until_window_end)
        .map(|d| d as f64)
        .collect();
    Ok(LogSummary {
        windows_closed: windows.iter().filter(|w| w.closed).count(),
        traces: windows.iter().map(|w| w.size).sum(),
        mean_window_size: mean_size(&windows),
        end_of_window_substitutions: count_kind(&events, SubstitutionKind::EndOfWindow),
        early,
        early_pending,
        mean_until_window_end: (!durations.is_empty()).then(|| durations.iter().sum::<f64>() / durations.len() as f64),
    })
}
