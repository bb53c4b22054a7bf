//! Residual error between the memory variant and the no-memory baseline,
//! and classification of early substitutions.

use serde::{Deserialize, Serialize};

use crate::domain::{SubstitutionEvent, SubstitutionKind};
use crate::error::{Error, Result};
use crate::substitution::Ranking;
use crate::window::WindowRecord;

/// Sigmoid shape: `c1` is the slope, `c2` the inflection abscissa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyParams {
    pub c1: f64,
    pub c2: f64,
}

impl Default for PenaltyParams {
    fn default() -> Self {
        Self { c1: 10.0, c2: 0.5 }
    }
}

impl PenaltyParams {
    pub fn new(c1: f64, c2: f64) -> Result<Self> {
        let params = Self { c1, c2 };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c1.is_finite()) {
            return Err(Error::Config(format!(
                "penalty slope c1 = {} must be positive",
                self.c1
            )));
        }
        if !(0.0..=1.0).contains(&self.c2) {
            return Err(Error::Config(format!(
                "penalty inflection c2 = {} outside [0, 1]",
                self.c2
            )));
        }
        Ok(())
    }
}

/// `1 / (1 + e^{−c1 (x − c2)})` for `x ∈ [0, 1]`.
pub fn penalty(x: f64, params: &PenaltyParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("penalty argument {x} outside [0, 1]")));
    }
    Ok(1.0 / (1.0 + (-params.c1 * (x - params.c2)).exp()))
}

/// `ξ = penalty((R − 1)/(k − 1))`, where `R` is the 1-based position of
/// the variant's top model in the baseline ranking.
pub fn residual_error(baseline: &Ranking, variant_top: usize, k: usize, params: &PenaltyParams) -> Result<f64> {
    if k < 2 {
        return Err(Error::Usage(format!(
            "residual error needs at least two models, got {k}"
        )));
    }
    let r = baseline
        .position(variant_top)
        .ok_or_else(|| Error::Usage(format!("model {variant_top} absent from the baseline ranking")))?;
    penalty((r - 1) as f64 / (k - 1) as f64, params)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EarlyStats {
    pub total: usize,
    pub relevant: usize,
    pub success: usize,
}

/// Counts early substitutions that were relevant (the replaced model is not
/// top when the window ends) and successful (the replacement is that top).
///
/// Window rankings hold model indices into `ids`.
pub fn classify_early_substitutions(
    events: &[SubstitutionEvent],
    windows: &[WindowRecord],
    ids: &[String],
) -> Result<EarlyStats> {
    let mut stats = EarlyStats::default();
    for event in events.iter().filter(|e| e.kind == SubstitutionKind::Early) {
        let window = windows
            .iter()
            .find(|w| w.index == event.window && w.closed)
            .ok_or_else(|| {
                Error::Usage(format!(
                    "early event at trace {} in unclosed window {}",
                    event.trace, event.window
                ))
            })?;
        let top = window
            .ranking
            .first()
            .and_then(|&m| ids.get(m))
            .ok_or_else(|| Error::Usage(format!("window {} has no usable ranking", window.index)))?;
        stats.total += 1;
        if event.from != *top {
            stats.relevant += 1;
            if event.to == *top {
                stats.success += 1;
            }
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::BetaState;
    use proptest::prelude::*;

    fn ranking(order: &[usize]) -> Ranking {
        Ranking {
            window: 0,
            order: order.to_vec(),
            metrics: vec![0.5; order.len()],
        }
    }

    fn closed(index: usize, order: &[usize]) -> WindowRecord {
        WindowRecord {
            index,
            start: 0,
            end: 10,
            size: 11,
            closed: true,
            states: vec![BetaState::UNIFORM; order.len()],
            probabilities: vec![0.0; order.len()],
            ranking: order.to_vec(),
        }
    }

    fn ids(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("m{i}")).collect()
    }

    #[test]
    fn penalty_values() {
        let p = PenaltyParams::default();
        assert!((penalty(0.5, &p).unwrap() - 0.5).abs() < 1e-12);
        let oracle = 1.0 / (1.0 + (-5.0f64).exp());
        assert!((penalty(1.0, &p).unwrap() - oracle).abs() < 1e-15);
        assert!(penalty(0.0, &p).unwrap() < 0.01);
        assert!(penalty(1.0, &p).unwrap() > 0.99);
        assert!(matches!(penalty(1.5, &p), Err(Error::Domain(_))));
        assert!(penalty(-0.1, &p).is_err());
        assert!(PenaltyParams::new(0.0, 0.5).is_err());
        assert!(PenaltyParams::new(1.0, 1.5).is_err());
    }

    #[test]
    fn residual_error_positions() {
        let p = PenaltyParams::default();
        let base = ranking(&[2, 0, 4, 1, 3]);
        assert_eq!(residual_error(&base, 2, 5, &p).unwrap(), penalty(0.0, &p).unwrap());
        assert_eq!(residual_error(&base, 3, 5, &p).unwrap(), penalty(1.0, &p).unwrap());
        assert!((residual_error(&base, 4, 5, &p).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(residual_error(&base, 7, 5, &p), Err(Error::Usage(_))));
        assert!(residual_error(&ranking(&[0]), 0, 1, &p).is_err());
    }

    #[test]
    fn classification() {
        let ids = ids(3);
        assert_eq!(
            classify_early_substitutions(&[], &[], &ids).unwrap(),
            EarlyStats::default()
        );

        let swap = SubstitutionEvent::early(0, 5, "m3", "m2", 0.3).unwrap();
        let confirmed =
            classify_early_substitutions(std::slice::from_ref(&swap), &[closed(0, &[1, 2, 0])], &ids).unwrap();
        assert_eq!(
            confirmed,
            EarlyStats {
                total: 1,
                relevant: 1,
                success: 1
            }
        );

        let wrong = classify_early_substitutions(std::slice::from_ref(&swap), &[closed(0, &[2, 1, 0])], &ids).unwrap();
        assert_eq!(
            wrong,
            EarlyStats {
                total: 1,
                relevant: 0,
                success: 0
            }
        );

        let elsewhere =
            classify_early_substitutions(std::slice::from_ref(&swap), &[closed(0, &[0, 1, 2])], &ids).unwrap();
        assert_eq!(
            elsewhere,
            EarlyStats {
                total: 1,
                relevant: 1,
                success: 0
            }
        );

        let mut open = closed(0, &[1, 2, 0]);
        open.closed = false;
        assert!(matches!(
            classify_early_substitutions(&[swap], &[open], &ids),
            Err(Error::Usage(_))
        ));

        let eow = SubstitutionEvent::end_of_window(0, 10, "m1", "m2").unwrap();
        assert_eq!(
            classify_early_substitutions(&[eow], &[], &ids).unwrap(),
            EarlyStats::default()
        );
    }

    proptest! {
        #[test]
        fn penalty_strictly_increasing(a in 0.0f64..=1.0, b in 0.0f64..=1.0, c1 in 0.5f64..20.0, c2 in 0.0f64..=1.0) {
            prop_assume!((a - b).abs() > 1e-6);
            let p = PenaltyParams::new(c1, c2).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let (pl, ph) = (penalty(lo, &p).unwrap(), penalty(hi, &p).unwrap());
            prop_assert!(pl < ph);
            prop_assert!(pl > 0.0 && ph < 1.0);
        }

        #[test]
        fn classification_counts_nest(
            swaps in prop::collection::vec((0usize..4, 0usize..4, 0usize..3), 0..20),
            tops in prop::collection::vec(0usize..4, 3),
        ) {
            let ids = ids(4);
            let events: Vec<_> = swaps
                .iter()
                .filter(|(f, t, _)| f != t)
                .map(|&(f, t, w)| SubstitutionEvent::early(w, w * 10, &ids[f], &ids[t], 0.5).unwrap())
                .collect();
            let windows: Vec<_> = tops
                .iter()
                .enumerate()
                .map(|(w, &top)| {
                    let mut order = vec![top];
                    order.extend((0..4).filter(|&m| m != top));
                    closed(w, &order)
                })
                .collect();
            let s = classify_early_substitutions(&events, &windows, &ids).unwrap();
            prop_assert_eq!(s.total, events.len());
            prop_assert!(s.success <= s.relevant && s.relevant <= s.total);
        }
    }
}
