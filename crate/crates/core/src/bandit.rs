//! Beta-posterior arithmetic and Thompson sampling.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::domain::{ExecutionTrace, NonFunctionalProperty};
use crate::error::{Error, Result};
use crate::scoring::Evaluator;

/// Beta posterior over a model's success probability.
///
/// Counts are kept as reals; they only ever hold integers (unit increments
/// plus floored memory scaling) but stay `f64` to feed the samplers directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaState {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for BetaState {
    fn default() -> Self {
        Self::UNIFORM
    }
}

impl BetaState {
    pub const UNIFORM: BetaState = BetaState { alpha: 1.0, beta: 1.0 };

    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 1.0 && beta >= 1.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::Domain(format!("Beta({alpha}, {beta}) below the unit floor")));
        }
        Ok(Self { alpha, beta })
    }

    /// Posterior mean, which is also the ranking metric `α / (α + β)`.
    #[inline]
    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    #[inline]
    pub fn distribution(&self) -> Beta<f64> {
        Beta::new(self.alpha, self.beta).expect("BetaState parameters are always >= 1")
    }

    pub fn total(&self) -> f64 {
        self.alpha + self.beta
    }

    pub fn record(&mut self, success: bool) {
        if success {
            self.alpha += 1.0;
        } else {
            self.beta += 1.0;
        }
    }
}

/// Density of `Beta(alpha, beta)` at `x`.
pub fn beta_pdf(x: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("x = {x} outside [0, 1]")));
    }
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::Domain(format!(
            "Beta({alpha}, {beta}) needs positive parameters"
        )));
    }
    let log_norm = ln_beta(alpha, beta);
    if x == 0.0 || x == 1.0 {
        // powf keeps 0^0 = 1 where the log form would produce NaN.
        return Ok(x.powf(alpha - 1.0) * (1.0 - x).powf(beta - 1.0) * (-log_norm).exp());
    }
    Ok(((alpha - 1.0) * x.ln() + (beta - 1.0) * (1.0 - x).ln() - log_norm).exp())
}

/// One draw from the state's Beta distribution.
pub fn sample_beta<R: Rng + ?Sized>(state: &BetaState, rng: &mut R) -> f64 {
    state.distribution().sample(rng)
}

/// Index of the first maximal element. `values` must be non-empty.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Pool of candidate models with their posteriors and the model currently
/// in production.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    ids: Vec<String>,
    states: Vec<BetaState>,
    selected: usize,
}

impl CandidateSet {
    /// Fresh `Beta(1, 1)` posteriors; the first model is selected.
    pub fn new<I, S>(ids: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        if ids.is_empty() {
            return Err(Error::Usage("candidate set is empty".into()));
        }
        for (i, id) in ids.iter().enumerate() {
            if ids[..i].contains(id) {
                return Err(Error::Usage(format!("duplicate model id `{id}`")));
            }
        }
        let states = vec![BetaState::UNIFORM; ids.len()];
        Ok(Self {
            ids,
            states,
            selected: 0,
        })
    }

    pub fn with_states(ids: Vec<String>, states: Vec<BetaState>) -> Result<Self> {
        if ids.len() != states.len() {
            return Err(Error::Usage("ids and states differ in length".into()));
        }
        let mut set = Self::new(ids)?;
        set.states = states;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|m| m == id)
    }

    pub fn states(&self) -> &[BetaState] {
        &self.states
    }

    pub fn state(&self, index: usize) -> &BetaState {
        &self.states[index]
    }

    pub(crate) fn states_mut(&mut self) -> &mut [BetaState] {
        &mut self.states
    }

    pub fn selected(&self) -> usize {
        self.selected
    }

    pub fn selected_id(&self) -> &str {
        &self.ids[self.selected]
    }

    pub fn select(&mut self, index: usize) -> Result<()> {
        if index >= self.len() {
            return Err(Error::Usage(format!("no model at index {index}")));
        }
        self.selected = index;
        Ok(())
    }

    pub fn select_id(&mut self, id: &str) -> Result<()> {
        let index = self
            .index_of(id)
            .ok_or_else(|| Error::Usage(format!("unknown model `{id}`")))?;
        self.selected = index;
        Ok(())
    }

    /// Resets every posterior to `Beta(1, 1)`, keeping the selection.
    pub fn reset(&mut self) {
        self.states.fill(BetaState::UNIFORM);
    }
}

/// Samples every posterior once and returns the argmax (first on ties).
pub fn thompson_select<R: Rng + ?Sized>(candidates: &CandidateSet, rng: &mut R) -> usize {
    let mut best = 0;
    let mut best_draw = f64::NEG_INFINITY;
    for (i, state) in candidates.states().iter().enumerate() {
        let draw = sample_beta(state, rng);
        if draw > best_draw {
            best = i;
            best_draw = draw;
        }
    }
    best
}

/// Thresholds `score` against the property and updates the pulled model's
/// posterior: `α += 1` on success, `β += 1` otherwise.
pub fn apply_score(
    candidates: &mut CandidateSet,
    model: usize,
    score: f64,
    property: &NonFunctionalProperty,
) -> Result<bool> {
    if model >= candidates.len() {
        return Err(Error::Usage(format!("no model at index {model}")));
    }
    if !score.is_finite() {
        return Err(Error::Usage(format!("score {score} is not finite")));
    }
    let success = property.is_success(score);
    candidates.states_mut()[model].record(success);
    Ok(success)
}

/// Outcome of a development-time Thompson run over a fixed trace budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticSelection {
    /// Model with the most pulls (first on ties).
    pub optimum: usize,
    pub draws: Vec<u64>,
}

/// Static MAB: pull, score, update over every trace without windowing. The
/// winner becomes the candidate set's selected model.
pub fn static_select<R, E>(
    candidates: &mut CandidateSet,
    traces: &[ExecutionTrace],
    property: &NonFunctionalProperty,
    evaluator: &E,
    rng: &mut R,
) -> Result<StaticSelection>
where
    R: Rng + ?Sized,
    E: Evaluator + ?Sized,
{
    if traces.is_empty() {
        return Err(Error::Usage("static selection needs at least one trace".into()));
    }
    let mut draws = vec![0u64; candidates.len()];
    for (t, trace) in traces.iter().enumerate() {
        let pulled = thompson_select(candidates, rng);
        let score = evaluator.score(pulled, trace).map_err(|e| Error::at_trace(t, e))?;
        apply_score(candidates, pulled, score, property).map_err(|e| Error::at_trace(t, e))?;
        draws[pulled] += 1;
    }
    let mut optimum = 0;
    for (i, &n) in draws.iter().enumerate() {
        if n > draws[optimum] {
            optimum = i;
        }
    }
    candidates.select(optimum)?;
    Ok(StaticSelection { optimum, draws })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    /// Trapezoid integral of `f` over `[0, 1]` with `n` intervals.
    fn trapezoid(n: usize, f: impl Fn(f64) -> f64) -> f64 {
        let h = 1.0 / n as f64;
        let inner: f64 = (1..n).map(|i| f(i as f64 * h)).sum();
        h * (0.5 * f(0.0) + inner + 0.5 * f(1.0))
    }

    #[test]
    fn pdf_closed_cases() {
        assert!((beta_pdf(0.5, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((beta_pdf(0.5, 2.0, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((beta_pdf(0.0, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(beta_pdf(0.0, 2.0, 3.0).unwrap(), 0.0);
        assert!(matches!(beta_pdf(1.5, 1.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(beta_pdf(-0.1, 1.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn pdf_matches_quadrature_normalized_kernel() {
        // Oracle: normalize the raw kernel by its own numerical integral
        // (Simpson, fine grid), independent of the log-gamma route.
        let (a, b, x) = (110.0, 2.0, 0.9821);
        let kernel = |u: f64| u.powf(a - 1.0) * (1.0 - u).powf(b - 1.0);
        let n = 200_000;
        let h = 1.0 / n as f64;
        let mut simpson = kernel(0.0) + kernel(1.0);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            simpson += w * kernel(i as f64 * h);
        }
        let norm = simpson * h / 3.0;
        let oracle = kernel(x) / norm;
        let got = beta_pdf(x, a, b).unwrap();
        assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
    }

    #[test]
    fn pdf_integrates_to_one() {
        for a in 1..=5 {
            for b in 1..=5 {
                let total = trapezoid(100_000, |x| beta_pdf(x, a as f64, b as f64).unwrap());
                assert!((total - 1.0).abs() < 1e-6, "Beta({a},{b}) integrates to {total}");
            }
        }
    }

    #[test]
    fn sample_moments() {
        let mut rng = seeded(11);
        let uniform: f64 = (0..10_000)
            .map(|_| sample_beta(&BetaState::UNIFORM, &mut rng))
            .sum::<f64>()
            / 1e4;
        assert!((uniform - 0.5).abs() < 0.02, "{uniform}");
        let state = BetaState::new(110.0, 2.0).unwrap();
        let mean: f64 = (0..10_000).map(|_| sample_beta(&state, &mut rng)).sum::<f64>() / 1e4;
        assert!((mean - 110.0 / 112.0).abs() < 0.005, "{mean}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let state = BetaState::new(3.0, 7.0).unwrap();
        let a = sample_beta(&state, &mut seeded(5));
        let b = sample_beta(&state, &mut seeded(5));
        assert_eq!(a, b);
    }

    #[test]
    fn thompson_singleton_and_determinism() {
        let set = CandidateSet::new(["only"]).unwrap();
        assert_eq!(thompson_select(&set, &mut seeded(1)), 0);
        let set = CandidateSet::new(["a", "b", "c"]).unwrap();
        let run = |seed| {
            (0..50)
                .map(|_| thompson_select(&set, &mut seeded(seed)))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn thompson_prefers_dominant_posterior() {
        let set = CandidateSet::with_states(
            vec!["A".into(), "B".into()],
            vec![
                BetaState::new(1000.0, 1.0).unwrap(),
                BetaState::new(1.0, 1000.0).unwrap(),
            ],
        )
        .unwrap();
        let wins = (0..1000u64)
            .filter(|&seed| thompson_select(&set, &mut seeded(seed)) == 0)
            .count();
        assert!(wins >= 999, "{wins}");
    }

    #[test]
    fn empty_and_duplicate_sets_rejected() {
        assert!(CandidateSet::new(Vec::<String>::new()).is_err());
        assert!(CandidateSet::new(["a", "b", "a"]).is_err());
    }

    #[test]
    fn apply_score_updates_exactly_one_counter() {
        let property = NonFunctionalProperty::fairness(1.0).unwrap();
        let mut set = CandidateSet::new(["a", "b"]).unwrap();
        assert!(apply_score(&mut set, 0, 0.0, &property).unwrap());
        assert_eq!(*set.state(0), BetaState::new(2.0, 1.0).unwrap());
        assert!(!apply_score(&mut set, 1, 5.0, &property).unwrap());
        assert_eq!(*set.state(1), BetaState::new(1.0, 2.0).unwrap());
        // Equal to the threshold is a failure.
        assert!(!apply_score(&mut set, 1, 1.0, &property).unwrap());
        assert_eq!(*set.state(1), BetaState::new(1.0, 3.0).unwrap());
        assert!(matches!(apply_score(&mut set, 2, 0.0, &property), Err(Error::Usage(_))));
        assert!(apply_score(&mut set, 0, f64::NAN, &property).is_err());
    }

    struct Fixed(Vec<f64>);

    impl Evaluator for Fixed {
        fn score(&self, model: usize, _trace: &ExecutionTrace) -> Result<f64> {
            Ok(self.0[model])
        }
    }

    fn dummy_traces(n: usize) -> Vec<ExecutionTrace> {
        let mut dp = crate::domain::FeatureMap::new();
        dp.insert("x".into(), crate::domain::FeatureValue::Num(1.0));
        vec![ExecutionTrace::new(dp, 0.0).unwrap(); n]
    }

    #[test]
    fn static_select_singleton_and_errors() {
        let property = NonFunctionalProperty::fairness(1.0).unwrap();
        let mut set = CandidateSet::new(["solo"]).unwrap();
        let sel = static_select(
            &mut set,
            &dummy_traces(2000),
            &property,
            &Fixed(vec![0.0]),
            &mut seeded(3),
        )
        .unwrap();
        assert_eq!(sel.optimum, 0);
        assert_eq!(sel.draws, vec![2000]);
        let err = static_select(&mut set, &[], &property, &Fixed(vec![0.0]), &mut seeded(3));
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    #[test]
    fn static_select_picks_always_successful_model() {
        let property = NonFunctionalProperty::fairness(1.0).unwrap();
        let mut set = CandidateSet::new(["bad", "good", "worse"]).unwrap();
        let sel = static_select(
            &mut set,
            &dummy_traces(500),
            &property,
            &Fixed(vec![2.0, 0.0, 3.0]),
            &mut seeded(8),
        )
        .unwrap();
        assert_eq!(sel.optimum, 1);
        assert_eq!(set.selected_id(), "good");
        assert_eq!(sel.draws.iter().sum::<u64>(), 500);
        // Every pull added exactly one pseudo-count.
        let total: f64 = set.states().iter().map(|s| s.total() - 2.0).sum();
        assert_eq!(total, 500.0);
    }

    proptest! {
        #[test]
        fn argmax_stable_under_lower_appends(
            draws in prop::collection::vec(0.0f64..1.0, 1..8),
            extra in prop::collection::vec(0.0f64..1.0, 0..8),
        ) {
            let best = argmax_first(&draws);
            let top = draws[best];
            let mut extended = draws.clone();
            // Appended models draw strictly below the current maximum.
            extended.extend(extra.iter().map(|e| e * top * 0.999));
            prop_assert_eq!(argmax_first(&extended), best);
        }

        #[test]
        fn counts_track_applications(outcomes in prop::collection::vec((0usize..3, 0.0f64..2.0), 0..200)) {
            let property = NonFunctionalProperty::fairness(1.0).unwrap();
            let mut set = CandidateSet::new(["a", "b", "c"]).unwrap();
            let mut applied = [0usize; 3];
            for (m, s) in outcomes {
                apply_score(&mut set, m, s, &property).unwrap();
                applied[m] += 1;
            }
            for (m, state) in set.states().iter().enumerate() {
                prop_assert!(state.alpha >= 1.0 && state.beta >= 1.0);
                prop_assert_eq!(state.total(), 2.0 + applied[m] as f64);
            }
        }
    }
}
