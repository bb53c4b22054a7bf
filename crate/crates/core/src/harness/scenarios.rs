//! Synthetic pools with injected drift.

use crate::error::{Error, Result};
use crate::models::{Drift, ModelSpec};

/// From trace `at` onwards, synthetic model `id` succeeds with probability `p`.
pub fn inject_drift(specs: &mut [ModelSpec], id: &str, at: usize, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("success probability {p} outside [0, 1]")));
    }
    let spec = specs
        .iter_mut()
        .find(|s| s.id() == id)
        .ok_or_else(|| Error::Usage(format!("no model `{id}` in the pool")))?;
    match spec {
        ModelSpec::Synthetic { drift, .. } => {
            drift.push(Drift { at, p });
            drift.sort_by_key(|d| d.at);
            Ok(())
        }
        ModelSpec::NaiveBayes { .. } => Err(Error::Usage(format!("model `{id}` is not synthetic"))),
    }
}

/// Two synthetic models `d0`, `d1` that swap success probabilities `hi` and
/// `lo` every `period` traces, followed by stationary models `c0, c1, …`.
pub fn alternating_pool(hi: f64, lo: f64, period: usize, traces: usize, stationary: &[f64]) -> Result<Vec<ModelSpec>> {
    if period == 0 {
        return Err(Error::Usage("drift period must be positive".into()));
    }
    let mut specs = vec![ModelSpec::synthetic("d0", hi), ModelSpec::synthetic("d1", lo)];
    for k in 1..traces.div_ceil(period) {
        let swapped = k % 2 == 1;
        inject_drift(&mut specs, "d0", k * period, if swapped { lo } else { hi })?;
        inject_drift(&mut specs, "d1", k * period, if swapped { hi } else { lo })?;
    }
    specs.extend(
        stationary
            .iter()
            .enumerate()
            .map(|(i, &p)| ModelSpec::synthetic(format!("c{i}"), p)),
    );
    Ok(specs)
}

/// Synthetic pool with ids `m1, m2, …` and the given success probabilities.
pub fn stationary_pool(ps: &[f64]) -> Vec<ModelSpec> {
    ps.iter()
        .enumerate()
        .map(|(i, &p)| ModelSpec::synthetic(format!("m{}", i + 1), p))
        .collect()
}
