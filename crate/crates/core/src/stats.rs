//! Goodness-of-fit helpers.

use serde::Serialize;
use statrs::distribution::{ChiSquared as ChiSquaredDist, ContinuousCDF};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChiSquared {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson test of `observed` counts against category probabilities.
/// Categories with zero expected probability must have zero counts.
pub fn chi_squared_test(observed: &[u64], expected: &[f64]) -> ChiSquared {
    assert_eq!(observed.len(), expected.len());
    let total: u64 = observed.iter().sum();
    let mut statistic = 0.0;
    let mut cells = 0usize;
    for (&o, &p) in observed.iter().zip(expected) {
        if p <= 0.0 {
            if o > 0 {
                return ChiSquared { statistic: f64::INFINITY, dof: cells, p_value: 0.0 };
            }
            continue;
        }
        let e = p * total as f64;
        statistic += (o as f64 - e) * (o as f64 - e) / e;
        cells += 1;
    }
    let dof = cells.saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        ChiSquaredDist::new(dof as f64).map(|d| d.sf(statistic)).unwrap_or(0.0)
    };
    ChiSquared { statistic, dof, p_value }
}

/// Two-sided z statistic of an estimate against a target.
pub fn z_score(estimate: f64, target: f64, std_error: f64) -> f64 {
    if std_error == 0.0 {
        if estimate == target { 0.0 } else { f64::INFINITY }
    } else {
        (estimate - target) / std_error
    }
}
