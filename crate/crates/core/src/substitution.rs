//! Ranking-based substitution at window boundaries and assurance-based
//! early substitution inside a window.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::bandit::{BetaState, CandidateSet};
use crate::domain::SubstitutionEvent;
use crate::error::{Error, Result};
use crate::window::DrawMatrix;

/// Compares ranking metrics `α/(α+β)` exactly by cross-multiplication.
/// Counts are integers well below 2^26, so the products are exact.
pub fn compare_metric(a: &BetaState, b: &BetaState) -> Ordering {
    (a.alpha * b.total())
        .partial_cmp(&(b.alpha * a.total()))
        .expect("Beta counts are finite")
}

/// Index of the model with the highest ranking metric (first on ties).
pub fn best_by_metric(states: &[BetaState]) -> usize {
    let mut best = 0;
    for (i, s) in states.iter().enumerate().skip(1) {
        if compare_metric(s, &states[best]) == Ordering::Greater {
            best = i;
        }
    }
    best
}

/// Models ordered by descending ranking metric, ties by list order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub window: usize,
    pub order: Vec<usize>,
    pub metrics: Vec<f64>,
}

impl Ranking {
    pub fn top(&self) -> usize {
        self.order[0]
    }

    /// 1-based position of `model`.
    pub fn position(&self, model: usize) -> Option<usize> {
        self.order.iter().position(|&m| m == model).map(|p| p + 1)
    }

    /// The model ranked immediately below `model`.
    pub fn next_below(&self, model: usize) -> Option<usize> {
        let pos = self.order.iter().position(|&m| m == model)?;
        self.order.get(pos + 1).copied()
    }

    /// A ranking that puts `first` on top and keeps list order otherwise.
    pub fn seeded_with(candidates: &CandidateSet, first: usize) -> Self {
        let mut order = vec![first];
        order.extend((0..candidates.len()).filter(|&m| m != first));
        let metrics = order.iter().map(|&m| candidates.state(m).mean()).collect();
        Self {
            window: 0,
            order,
            metrics,
        }
    }

    pub fn ids<'a>(&self, candidates: &'a CandidateSet) -> Vec<&'a str> {
        self.order.iter().map(|&m| candidates.id(m)).collect()
    }
}

pub fn compute_ranking(candidates: &CandidateSet, window: usize) -> Ranking {
    let states = candidates.states();
    let mut order: Vec<usize> = (0..states.len()).collect();
    // Stable sort keeps list order among equal metrics.
    order.sort_by(|&a, &b| compare_metric(&states[b], &states[a]));
    let metrics = order.iter().map(|&m| states[m].mean()).collect();
    Ranking { window, order, metrics }
}

/// Moves the ranking's top model into production if it is not already.
pub fn end_of_window_substitute(
    ranking: &Ranking,
    candidates: &mut CandidateSet,
    trace: usize,
) -> Result<Option<SubstitutionEvent>> {
    let top = ranking.top();
    let current = candidates.selected();
    if top == current {
        return Ok(None);
    }
    let event = SubstitutionEvent::end_of_window(ranking.window, trace, candidates.id(current), candidates.id(top))?;
    candidates.select(top)?;
    Ok(Some(event))
}

/// Selected model's posterior mean over the mean column-wise maximum of
/// the trace's draw matrix. May exceed 1.
pub fn assurance_level(selected: &BetaState, draws: &DrawMatrix) -> Result<f64> {
    let optimum = draws.mean_column_max();
    if optimum < 1e-12 {
        return Err(Error::Singularity(format!("mean column maximum {optimum}")));
    }
    Ok(selected.mean() / optimum)
}

/// Running degradation `1 − mean(al)` of the selected model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AssuranceTracker {
    pub cumulative: f64,
    pub count: usize,
    pub degradation: f64,
    pub early_this_window: usize,
}

impl AssuranceTracker {
    pub fn update(&mut self, assurance: f64) -> f64 {
        self.cumulative += assurance;
        self.count += 1;
        self.degradation = 1.0 - self.cumulative / self.count as f64;
        self.degradation
    }

    /// Clears the running mean; the early-substitution budget is kept.
    pub fn restart(&mut self) {
        self.cumulative = 0.0;
        self.count = 0;
        self.degradation = 0.0;
    }

    /// Start of a new window.
    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

pub fn update_degradation(tracker: &mut AssuranceTracker, assurance: f64) -> f64 {
    tracker.update(assurance)
}

#[derive(Debug, Clone, PartialEq)]
pub enum EarlyCheck {
    Hold,
    Substituted(SubstitutionEvent),
    /// Degradation exceeded the threshold but no lower-ranked model exists.
    Exhausted,
}

/// Replaces the selected model with the next one below it in the stored
/// ranking when degradation strictly exceeds `thr` and the window's budget
/// allows it.
pub fn check_early_substitution(
    tracker: &mut AssuranceTracker,
    ranking: &Ranking,
    candidates: &mut CandidateSet,
    thr: f64,
    max_per_window: usize,
    window: usize,
    trace: usize,
) -> Result<EarlyCheck> {
    if tracker.count == 0 || tracker.degradation <= thr || tracker.early_this_window >= max_per_window {
        return Ok(EarlyCheck::Hold);
    }
    let current = candidates.selected();
    let Some(next) = ranking.next_below(current) else {
        return Ok(EarlyCheck::Exhausted);
    };
    let event = SubstitutionEvent::early(
        window,
        trace,
        candidates.id(current),
        candidates.id(next),
        tracker.degradation,
    )?;
    candidates.select(next)?;
    tracker.early_this_window += 1;
    tracker.restart();
    Ok(EarlyCheck::Substituted(event))
}
