//! Dynamic assessment with variable, memory-carrying evaluation windows.
//!
//! Every trace runs one Thompson pull, scores the pulled model, then draws a
//! `|cl| × g` Monte Carlo matrix from the posteriors. The matrix yields the
//! winner probabilities, the regret samples of the value-remaining rule and
//! the denominator of the assurance level. A window closes once it has seen
//! more than `burn_in` traces and the 95th percentile of the regret samples
//! is at most `v_best × residual`; the posteriors are then rescaled by the
//! memory factor (or reset) for the next window.

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::bandit::{apply_score, thompson_select, BetaState, CandidateSet};
use crate::domain::{
    EngineConfig, ExecutionTrace, NonFunctionalProperty, Observation, ObservationLog, SubstitutionEvent,
    TERMINATION_PERCENTILE,
};
use crate::error::{Error, Result};
use crate::rng::{seeded, SimRng};
use crate::scoring::Evaluator;
use crate::substitution::{
    assurance_level, best_by_metric, check_early_substitution, compute_ranking, end_of_window_substitute,
    AssuranceTracker, EarlyCheck, Ranking,
};

/// `models × g` matrix of posterior draws, stored row-major by model.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawMatrix {
    models: usize,
    g: usize,
    values: Vec<f64>,
}

impl DrawMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let models = rows.len();
        let g = rows.first().map_or(0, Vec::len);
        if models == 0 || g == 0 || rows.iter().any(|r| r.len() != g) {
            return Err(Error::Usage("draw matrix must be rectangular and non-empty".into()));
        }
        Ok(Self {
            models,
            g,
            values: rows.into_iter().flatten().collect(),
        })
    }

    pub fn models(&self) -> usize {
        self.models
    }

    pub fn g(&self) -> usize {
        self.g
    }

    #[inline]
    pub fn get(&self, model: usize, column: usize) -> f64 {
        self.values[model * self.g + column]
    }

    pub fn row(&self, model: usize) -> &[f64] {
        &self.values[model * self.g..(model + 1) * self.g]
    }

    /// Row attaining the column maximum (lowest index on ties).
    pub fn column_winner(&self, column: usize) -> usize {
        let mut best = 0;
        for m in 1..self.models {
            if self.get(m, column) > self.get(best, column) {
                best = m;
            }
        }
        best
    }

    pub fn column_max(&self, column: usize) -> f64 {
        self.get(self.column_winner(column), column)
    }

    pub fn mean_column_max(&self) -> f64 {
        (0..self.g).map(|c| self.column_max(c)).sum::<f64>() / self.g as f64
    }
}

/// Frequency of each model winning a Monte Carlo column, and the model
/// that is currently best by the ranking metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinnerEstimate {
    pub wins: Vec<u32>,
    pub g: usize,
    pub best: usize,
    /// Posterior mean of `best`.
    pub v_best: f64,
}

impl WinnerEstimate {
    pub fn probabilities(&self) -> Vec<f64> {
        self.wins.iter().map(|&w| f64::from(w) / self.g as f64).collect()
    }
}

/// Draws the Monte Carlo matrix and counts column winners.
pub fn monte_carlo<R: Rng + ?Sized>(
    candidates: &CandidateSet,
    g: usize,
    rng: &mut R,
) -> Result<(DrawMatrix, WinnerEstimate)> {
    if g == 0 {
        return Err(Error::Usage("Monte Carlo needs at least one draw set".into()));
    }
    let states = candidates.states();
    let mut values = Vec::with_capacity(states.len() * g);
    for state in states {
        let dist = state.distribution();
        values.extend((0..g).map(|_| dist.sample(rng)));
    }
    let draws = DrawMatrix {
        models: states.len(),
        g,
        values,
    };
    let mut wins = vec![0u32; states.len()];
    for c in 0..g {
        wins[draws.column_winner(c)] += 1;
    }
    let best = best_by_metric(states);
    let estimate = WinnerEstimate {
        wins,
        g,
        best,
        v_best: states[best].mean(),
    };
    Ok((draws, estimate))
}

/// Relative regret per column: `(column max − best cell) / best cell`.
pub fn regret_samples(draws: &DrawMatrix, best: usize) -> Result<Vec<f64>> {
    if best >= draws.models {
        return Err(Error::Usage(format!("model {best} is not a row of the draw matrix")));
    }
    (0..draws.g)
        .map(|c| {
            let own = draws.get(best, c);
            if own < 1e-12 {
                return Err(Error::Singularity(format!("best-model draw {own} in column {c}")));
            }
            // max/own − 1 is exactly 0 when own is the max, and never negative.
            Ok(draws.column_max(c) / own - 1.0)
        })
        .collect()
}

/// Nearest-rank percentile: the `ceil(pct · n / 100)`-th smallest sample.
pub fn percentile_nearest_rank(samples: &[f64], pct: u32) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let n = samples.len();
    let rank = (pct as usize * n).div_ceil(100).clamp(1, n);
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(sorted[rank - 1])
}

/// Value remaining in the experiment: 95th percentile of regret.
pub fn value_remaining(samples: &[f64]) -> Option<f64> {
    percentile_nearest_rank(samples, TERMINATION_PERCENTILE)
}

pub fn should_terminate(samples: &[f64], v_best: f64, residual: f64) -> bool {
    value_remaining(samples).is_some_and(|vr| vr <= v_best * residual)
}

/// Carries `δ`-scaled posteriors into the next window: each count becomes
/// `floor(count · δ)`, raised to 1 when that is 0.
pub fn close_window(candidates: &mut CandidateSet, memory: f64) {
    // Counts are integers; the epsilon absorbs products like 70 · 0.1 that
    // land a hair below the intended integer.
    let carry = |count: f64| ((count * memory + 1e-9).floor()).max(1.0);
    for state in candidates.states_mut() {
        *state = BetaState {
            alpha: carry(state.alpha),
            beta: carry(state.beta),
        };
    }
}

/// How posteriors are re-initialized when a window closes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WindowPolicy {
    /// Fresh `Beta(1, 1)` for every model.
    Fresh,
    /// Carry the previous window's counts scaled by the memory factor.
    Memory(f64),
}

impl WindowPolicy {
    fn apply(self, candidates: &mut CandidateSet) {
        match self {
            WindowPolicy::Fresh => candidates.reset(),
            WindowPolicy::Memory(delta) => close_window(candidates, delta),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowState {
    pub index: usize,
    pub start: usize,
    pub traces_seen: usize,
}

impl WindowState {
    pub fn burn_in_remaining(&self, burn_in: usize) -> usize {
        burn_in.saturating_sub(self.traces_seen)
    }
}

/// Summary of one evaluation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub index: usize,
    pub start: usize,
    /// Last trace of the window.
    pub end: usize,
    pub size: usize,
    pub closed: bool,
    /// Posteriors at the end of the window, before memory scaling.
    pub states: Vec<BetaState>,
    pub probabilities: Vec<f64>,
    pub ranking: Vec<usize>,
}

/// Per-trace outcome of [`Engine::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub trace: usize,
    pub window: usize,
    pub pulled: usize,
    pub score: f64,
    pub success: bool,
    /// Selected model after this trace (including any substitution).
    pub selected: usize,
    pub assurance: f64,
    pub degradation: f64,
    pub value_remaining: f64,
    pub early: Option<SubstitutionEvent>,
    pub early_exhausted: bool,
    /// The window that closed on this trace, with its ranking-based swap.
    pub closed: Option<(usize, Option<SubstitutionEvent>)>,
}

/// Single-threaded assessment/substitution state machine over one stream.
#[derive(Debug, Clone)]
pub struct Engine {
    config: EngineConfig,
    policy: WindowPolicy,
    property: NonFunctionalProperty,
    candidates: CandidateSet,
    rng: SimRng,
    window: WindowState,
    ranking: Ranking,
    tracker: AssuranceTracker,
    observations: ObservationLog,
    events: Vec<SubstitutionEvent>,
    windows: Vec<WindowRecord>,
    last_probabilities: Vec<f64>,
    last_trace: Option<usize>,
    early_exhausted: usize,
}

impl Engine {
    /// Memory-carrying engine using `config.memory`.
    pub fn with_memory(
        candidates: CandidateSet,
        property: NonFunctionalProperty,
        config: EngineConfig,
    ) -> Result<Self> {
        let policy = WindowPolicy::Memory(config.memory);
        Self::new(candidates, property, config, policy)
    }

    /// Engine that restarts every window from `Beta(1, 1)`.
    pub fn fresh(candidates: CandidateSet, property: NonFunctionalProperty, config: EngineConfig) -> Result<Self> {
        Self::new(candidates, property, config, WindowPolicy::Fresh)
    }

    pub fn new(
        candidates: CandidateSet,
        property: NonFunctionalProperty,
        config: EngineConfig,
        policy: WindowPolicy,
    ) -> Result<Self> {
        config.validate()?;
        if let WindowPolicy::Memory(delta) = policy {
            if !(0.0..=1.0).contains(&delta) {
                return Err(Error::Config(format!("memory {delta} outside [0, 1]")));
            }
        }
        let ranking = Ranking::seeded_with(&candidates, candidates.selected());
        let rng = seeded(config.seed);
        let k = candidates.len();
        Ok(Self {
            config,
            policy,
            property,
            candidates,
            rng,
            window: WindowState {
                index: 0,
                start: 0,
                traces_seen: 0,
            },
            ranking,
            tracker: AssuranceTracker::default(),
            observations: ObservationLog::new(),
            events: Vec::new(),
            windows: Vec::new(),
            last_probabilities: vec![0.0; k],
            last_trace: None,
            early_exhausted: 0,
        })
    }

    pub fn candidates(&self) -> &CandidateSet {
        &self.candidates
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn window(&self) -> &WindowState {
        &self.window
    }

    /// Ranking computed at the most recent window boundary.
    pub fn ranking(&self) -> &Ranking {
        &self.ranking
    }

    pub fn tracker(&self) -> &AssuranceTracker {
        &self.tracker
    }

    pub fn observations(&self) -> &ObservationLog {
        &self.observations
    }

    pub fn events(&self) -> &[SubstitutionEvent] {
        &self.events
    }

    /// Closed windows only.
    pub fn windows(&self) -> &[WindowRecord] {
        &self.windows
    }

    pub fn early_exhausted(&self) -> usize {
        self.early_exhausted
    }

    /// Closed windows followed by the open one, if it has seen traces.
    pub fn all_windows(&self) -> Vec<WindowRecord> {
        let mut out = self.windows.clone();
        if self.window.traces_seen > 0 {
            out.push(WindowRecord {
                index: self.window.index,
                start: self.window.start,
                end: self.last_trace.unwrap_or(self.window.start),
                size: self.window.traces_seen,
                closed: false,
                states: self.candidates.states().to_vec(),
                probabilities: self.last_probabilities.clone(),
                ranking: compute_ranking(&self.candidates, self.window.index).order,
            });
        }
        out
    }

    /// Processes trace `t` (indices must strictly increase).
    pub fn step<E: Evaluator + ?Sized>(
        &mut self,
        t: usize,
        trace: &ExecutionTrace,
        evaluator: &E,
    ) -> Result<StepOutcome> {
        self.step_inner(t, trace, evaluator).map_err(|e| Error::at_trace(t, e))
    }

    fn step_inner<E: Evaluator + ?Sized>(
        &mut self,
        t: usize,
        trace: &ExecutionTrace,
        evaluator: &E,
    ) -> Result<StepOutcome> {
        if self.last_trace.is_some_and(|last| t <= last) {
            return Err(Error::Usage(format!("trace index {t} is not increasing")));
        }
        if self.window.traces_seen == 0 {
            self.window.start = t;
        }
        let window_index = self.window.index;

        // Assessment: pull, score, update.
        let pulled = thompson_select(&self.candidates, &mut self.rng);
        let score = evaluator.score(pulled, trace)?;
        let success = apply_score(&mut self.candidates, pulled, score, &self.property)?;
        self.observations.push(Observation {
            trace: t,
            model: pulled,
            score,
            success,
        })?;
        self.last_trace = Some(t);
        self.window.traces_seen += 1;

        let (draws, estimate) = monte_carlo(&self.candidates, self.config.g, &mut self.rng)?;
        self.last_probabilities = estimate.probabilities();
        let regret = regret_samples(&draws, estimate.best)?;
        let value_remaining = value_remaining(&regret).unwrap_or(0.0);

        // Assurance of the model in production.
        let assurance = assurance_level(self.candidates.state(self.candidates.selected()), &draws)?;
        let degradation = self.tracker.update(assurance);
        let mut early = None;
        let mut early_exhausted = false;
        match check_early_substitution(
            &mut self.tracker,
            &self.ranking,
            &mut self.candidates,
            self.config.thr,
            self.config.max_early_per_window,
            window_index,
            t,
        )? {
            EarlyCheck::Hold => {}
            EarlyCheck::Substituted(event) => {
                self.events.push(event.clone());
                early = Some(event);
            }
            EarlyCheck::Exhausted => {
                log::warn!("trace {t}: degradation {degradation:.4} but no lower-ranked model to substitute");
                self.early_exhausted += 1;
                early_exhausted = true;
            }
        }

        let mut closed = None;
        if self.window.traces_seen > self.config.burn_in
            && should_terminate(&regret, estimate.v_best, self.config.residual)
        {
            closed = Some((window_index, self.close(t)?));
        }

        Ok(StepOutcome {
            trace: t,
            window: window_index,
            pulled,
            score,
            success,
            selected: self.candidates.selected(),
            assurance,
            degradation,
            value_remaining,
            early,
            early_exhausted,
            closed,
        })
    }

    fn close(&mut self, t: usize) -> Result<Option<SubstitutionEvent>> {
        let index = self.window.index;
        let ranking = compute_ranking(&self.candidates, index);
        self.windows.push(WindowRecord {
            index,
            start: self.window.start,
            end: t,
            size: self.window.traces_seen,
            closed: true,
            states: self.candidates.states().to_vec(),
            probabilities: self.last_probabilities.clone(),
            ranking: ranking.order.clone(),
        });
        for event in self.events.iter_mut().rev() {
            if event.window != index {
                break;
            }
            if event.until_window_end.is_none() && event.kind == crate::domain::SubstitutionKind::Early {
                event.until_window_end = Some(t - event.trace);
            }
        }
        let swap = end_of_window_substitute(&ranking, &mut self.candidates, t)?;
        if let Some(event) = &swap {
            self.events.push(event.clone());
        }
        self.ranking = ranking;
        self.policy.apply(&mut self.candidates);
        self.tracker.reset();
        self.window = WindowState {
            index: index + 1,
            start: t + 1,
            traces_seen: 0,
        };
        Ok(swap)
    }

    /// Feeds a whole stream, indexing traces from 0.
    pub fn run<E: Evaluator + ?Sized>(&mut self, traces: &[ExecutionTrace], evaluator: &E) -> Result<()> {
        for (t, trace) in traces.iter().enumerate() {
            self.step(t, trace, evaluator)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{FeatureMap, FeatureValue};
    use proptest::prelude::*;

    #[test]
    fn regret_hand_matrix() {
        let draws = DrawMatrix::from_rows(vec![vec![0.8, 0.6], vec![0.7, 0.9]]).unwrap();
        assert_eq!(regret_samples(&draws, 0).unwrap(), vec![0.0, 0.5]);
        let single = DrawMatrix::from_rows(vec![vec![0.3, 0.9, 0.1]]).unwrap();
        assert_eq!(regret_samples(&single, 0).unwrap(), vec![0.0; 3]);
        assert!(regret_samples(&draws, 2).is_err());
        let zero = DrawMatrix::from_rows(vec![vec![0.0], vec![0.5]]).unwrap();
        assert!(matches!(regret_samples(&zero, 0), Err(Error::Singularity(_))));
    }

    #[test]
    fn nearest_rank_percentile() {
        // Oracle: sort, take the ceil(0.95 · 20) = 19th smallest.
        let samples: Vec<f64> = (0..20).rev().map(|i| i as f64 / 100.0).collect();
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let oracle = sorted[(0.95f64 * 20.0).ceil() as usize - 1];
        assert_eq!(value_remaining(&samples), Some(oracle));
        assert_eq!(oracle, 0.18);
        assert!(should_terminate(&samples, 1.0, 0.18));
        assert!(!should_terminate(&samples, 1.0, 0.179));
        assert!(should_terminate(&[0.0; 7], 0.5, 1e-9));
        assert_eq!(percentile_nearest_rank(&[3.0], 95), Some(3.0));
        assert_eq!(percentile_nearest_rank(&[], 95), None);
        let hundred: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(value_remaining(&hundred), Some(95.0));
    }

    #[test]
    fn memory_reinitialization() {
        let mut c = CandidateSet::with_states(
            vec!["m5".into(), "m1".into()],
            vec![BetaState::new(110.0, 2.0).unwrap(), BetaState::new(7.0, 70.0).unwrap()],
        )
        .unwrap();
        let mut fresh = c.clone();
        close_window(&mut c, 0.1);
        assert_eq!(*c.state(0), BetaState::new(11.0, 1.0).unwrap());
        assert_eq!(*c.state(1), BetaState::new(1.0, 7.0).unwrap());
        close_window(&mut fresh, 0.0);
        assert!(fresh.states().iter().all(|s| *s == BetaState::UNIFORM));
    }

    #[test]
    fn winner_probabilities_are_counts() {
        let c = CandidateSet::new(["a", "b", "c"]).unwrap();
        let mut rng = seeded(4);
        let mut totals = [0.0; 3];
        for _ in 0..400 {
            let (draws, est) = monte_carlo(&c, 100, &mut rng).unwrap();
            assert_eq!(draws.models(), 3);
            assert_eq!(est.wins.iter().sum::<u32>(), 100);
            for (i, p) in est.probabilities().iter().enumerate() {
                assert_eq!(*p, f64::from(est.wins[i]) / 100.0);
                totals[i] += p / 400.0;
            }
            assert_eq!(est.best, 0);
            assert_eq!(est.v_best, 0.5);
        }
        for avg in totals {
            assert!((avg - 1.0 / 3.0).abs() < 0.02, "{avg}");
        }
        assert!(monte_carlo(&c, 0, &mut rng).is_err());
    }

    #[test]
    fn dominant_model_wins_monte_carlo() {
        let c = CandidateSet::with_states(
            vec!["A".into(), "B".into()],
            vec![BetaState::new(100.0, 1.0).unwrap(), BetaState::new(1.0, 100.0).unwrap()],
        )
        .unwrap();
        let good = (0..100u64)
            .filter(|&s| monte_carlo(&c, 100, &mut seeded(s)).unwrap().1.probabilities()[0] >= 0.99)
            .count();
        assert!(good >= 95, "{good}");
    }

    struct Always(f64);

    impl Evaluator for Always {
        fn score(&self, _model: usize, _trace: &ExecutionTrace) -> Result<f64> {
            Ok(self.0)
        }
    }

    fn traces(n: usize) -> Vec<ExecutionTrace> {
        (0..n)
            .map(|i| {
                let mut dp = FeatureMap::new();
                dp.insert("seq".into(), FeatureValue::Num(i as f64));
                ExecutionTrace::new(dp, 0.0).unwrap()
            })
            .collect()
    }

    fn property() -> NonFunctionalProperty {
        NonFunctionalProperty::fairness(1.0).unwrap()
    }

    #[test]
    fn single_model_closes_right_after_burn_in() {
        let config = EngineConfig {
            burn_in: 17,
            ..Default::default()
        };
        let mut engine = Engine::with_memory(CandidateSet::new(["solo"]).unwrap(), property(), config).unwrap();
        engine.run(&traces(60), &Always(0.0)).unwrap();
        let sizes: Vec<usize> = engine.windows().iter().map(|w| w.size).collect();
        assert_eq!(sizes, vec![18, 18, 18]);
        assert_eq!(engine.windows()[0].end, 17);
    }

    #[test]
    fn no_window_closes_during_burn_in() {
        let config = EngineConfig {
            burn_in: 40,
            ..Default::default()
        };
        let set = CandidateSet::new(["a", "b", "c"]).unwrap();
        let mut engine = Engine::with_memory(set, property(), config).unwrap();
        engine.run(&traces(500), &Always(0.0)).unwrap();
        assert!(engine.windows().iter().all(|w| w.size > 40));
        let total: usize = engine.all_windows().iter().map(|w| w.size).sum();
        assert_eq!(total, 500);
    }

    #[test]
    fn trace_indices_must_increase() {
        let mut engine =
            Engine::with_memory(CandidateSet::new(["a"]).unwrap(), property(), EngineConfig::default()).unwrap();
        let t = traces(1);
        engine.step(5, &t[0], &Always(0.0)).unwrap();
        let err = engine.step(5, &t[0], &Always(0.0)).unwrap_err();
        assert!(matches!(err, Error::AtTrace { index: 5, .. }));
    }

    #[test]
    fn scorer_errors_carry_trace_index() {
        struct Failing;
        impl Evaluator for Failing {
            fn score(&self, _: usize, _: &ExecutionTrace) -> Result<f64> {
                Err(Error::Usage("nope".into()))
            }
        }
        let mut engine =
            Engine::with_memory(CandidateSet::new(["a"]).unwrap(), property(), EngineConfig::default()).unwrap();
        let err = engine.run(&traces(3), &Failing).unwrap_err();
        assert!(matches!(err, Error::AtTrace { index: 0, .. }));
    }

    proptest! {
        #[test]
        fn regret_nonnegative(rows in prop::collection::vec(prop::collection::vec(1e-6f64..1.0, 7), 1..6), pick in 0usize..6) {
            let draws = DrawMatrix::from_rows(rows.clone()).unwrap();
            let best = pick % rows.len();
            prop_assert!(regret_samples(&draws, best).unwrap().iter().all(|r| *r >= 0.0));
        }

        #[test]
        fn integer_memory_preserves_order(counts in prop::collection::vec((1u32..40, 1u32..40), 2..6), k in 1u32..5) {
            // With δ = 1/k and counts multiples of k, δα and δβ are integers ≥ 1.
            let mut c = CandidateSet::with_states(
                (0..counts.len()).map(|i| format!("m{i}")).collect(),
                counts.iter().map(|&(a, b)| BetaState::new((a * k) as f64, (b * k) as f64).unwrap()).collect(),
            ).unwrap();
            let before = compute_ranking(&c, 0).order;
            close_window(&mut c, 1.0 / k as f64);
            for (s, &(a, b)) in c.states().iter().zip(&counts) {
                prop_assert_eq!((s.alpha, s.beta), (a as f64, b as f64));
            }
            prop_assert_eq!(compute_ranking(&c, 1).order, before);
        }
    }
}
