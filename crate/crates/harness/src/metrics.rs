//! Truth/estimate pairing and RMSE accumulation.

use subnyq_core::estimator::Estimate;
use subnyq_core::{Scenario, SourceSpec};

/// True `(subband, φ)` of a source in a scenario's sampling and geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truth {
    pub subband: usize,
    pub phi: f64,
}

pub fn truths(scenario: &Scenario, pool: &[SourceSpec]) -> Vec<Truth> {
    let index = scenario_columns(scenario, pool);
    index
        .iter()
        .map(|&c| Truth {
            subband: scenario.subbands()[c],
            phi: scenario.phases()[c],
        })
        .collect()
}

/// Column of the (sorted) scenario holding each pool entry.
pub fn scenario_columns(scenario: &Scenario, pool: &[SourceSpec]) -> Vec<usize> {
    let mut used = vec![false; scenario.num_sources()];
    pool.iter()
        .map(|s| {
            let c = (0..scenario.num_sources())
                .find(|&c| !used[c] && scenario.sources()[c] == *s)
                .expect("pool entry is part of the scenario");
            used[c] = true;
            c
        })
        .collect()
}

/// Greedy nearest-φ matching inside each subband: the closest remaining
/// (truth, estimate) pair is taken first. Entry `i` of the result is the
/// estimate matched to truth `i`; estimates in subbands without a truth, or
/// beyond a subband's truth count, stay unmatched.
pub fn pair_estimates(truth: &[Truth], estimates: &[Estimate]) -> Vec<Option<usize>> {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, t) in truth.iter().enumerate() {
        for (j, e) in estimates.iter().enumerate() {
            if e.subband == t.subband {
                candidates.push(((e.phi - t.phi).abs(), i, j));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut truth_of = vec![None; truth.len()];
    let mut taken = vec![false; estimates.len()];
    for (_, i, j) in candidates {
        if truth_of[i].is_none() && !taken[j] {
            truth_of[i] = Some(j);
            taken[j] = true;
        }
    }
    truth_of
}

/// Running sum of squared errors.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SquaredError {
    pub sum: f64,
    pub count: usize,
}

impl SquaredError {
    pub fn add(&mut self, err: f64) {
        self.sum += err * err;
        self.count += 1;
    }

    pub fn merge(&mut self, other: &SquaredError) {
        self.sum += other.sum;
        self.count += other.count;
    }

    /// `None` when nothing was accumulated.
    pub fn rmse(&self) -> Option<f64> {
        (self.count > 0).then(|| (self.sum / self.count as f64).sqrt())
    }
}
