//! Selection-quality criteria aggregated over Monte-Carlo replications:
//! squared estimation error, exact and containing support recovery, and
//! the proportion of true zeros estimated as zero.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};

/// Selection result of one replication against its generating truth.
#[derive(Debug, Clone)]
pub struct ReplicationOutcome {
    /// Estimated coefficients, zero outside the active set.
    pub beta_hat: DVector<f64>,
    pub active_set: Vec<bool>,
    pub true_active: Vec<bool>,
    /// True coefficients padded with zeros.
    pub beta_star_star: DVector<f64>,
}

impl ReplicationOutcome {
    fn validate(&self) -> Result<()> {
        let p = self.beta_hat.len();
        for (len, context) in [
            (self.active_set.len(), "active_set"),
            (self.true_active.len(), "true_active"),
            (self.beta_star_star.len(), "beta_star_star"),
        ] {
            if len != p {
                return Err(Error::DimensionMismatch {
                    context: context.to_string(),
                    expected: p,
                    found: len,
                });
            }
        }
        if self
            .beta_hat
            .iter()
            .zip(self.active_set.iter())
            .any(|(&b, &a)| !a && b != 0.0)
        {
            return Err(Error::InvalidArgument {
                name: "beta_hat",
                reason: "nonzero coefficient outside the active set".to_string(),
            });
        }
        Ok(())
    }
}

/// Table of criteria over a replication study. Where the source tables
/// print one central value, both mean and median (for the active-set size)
/// or mean and SD (elsewhere) are kept.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkSummary {
    pub n_replications: usize,
    /// Mean and SD of per-replication squared L2 estimation errors.
    pub mse_mean: f64,
    pub mse_sd: f64,
    pub active_size_mean: f64,
    pub active_size_median: f64,
    pub active_size_sd: f64,
    /// Fraction of replications selecting exactly the true support.
    pub tp_rate: f64,
    /// Fraction of replications whose selection contains the true support.
    pub tpc_rate: f64,
    pub zp_mean: f64,
    pub zp_sd: f64,
    /// Replication counts keyed by ZP rounded to two decimals; the keys
    /// ("0.98") sort numerically because every value lies in [0, 1].
    pub zp_histogram: BTreeMap<String, usize>,
}

/// Squared Euclidean distance between an estimate and the padded truth.
pub fn mse(beta_hat: &DVector<f64>, beta_star_star: &DVector<f64>) -> Result<f64> {
    if beta_hat.len() != beta_star_star.len() {
        return Err(Error::DimensionMismatch {
            context: "beta_star_star".to_string(),
            expected: beta_hat.len(),
            found: beta_star_star.len(),
        });
    }
    Ok((beta_hat - beta_star_star).norm_squared())
}

/// Support-recovery verdicts of one replication: exact match, containment,
/// and the fraction of true zeros estimated as zero. With no true zeros the
/// fraction is vacuously 1.
pub fn classify(outcome: &ReplicationOutcome) -> (bool, bool, f64) {
    let p = outcome.beta_hat.len();
    assert_eq!(outcome.active_set.len(), p, "active_set length");
    assert_eq!(outcome.true_active.len(), p, "true_active length");

    let is_tp = outcome.active_set == outcome.true_active;
    let is_tpc = outcome
        .active_set
        .iter()
        .zip(outcome.true_active.iter())
        .all(|(&sel, &truth)| !truth || sel);

    let mut true_zeros = 0usize;
    let mut estimated_zero = 0usize;
    for j in 0..p {
        if !outcome.true_active[j] {
            true_zeros += 1;
            if outcome.beta_hat[j] == 0.0 {
                estimated_zero += 1;
            }
        }
    }
    let zp = if true_zeros == 0 {
        1.0
    } else {
        estimated_zero as f64 / true_zeros as f64
    };
    (is_tp, is_tpc, zp)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation; a singleton has none and scores zero.
fn sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite sizes"));
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    }
}

/// Aggregates replication outcomes into the benchmark table.
pub fn summarize(outcomes: &[ReplicationOutcome]) -> Result<BenchmarkSummary> {
    if outcomes.is_empty() {
        return Err(Error::InvalidArgument {
            name: "outcomes",
            reason: "no replications to summarize".to_string(),
        });
    }
    let reps = outcomes.len();
    let mut mses = Vec::with_capacity(reps);
    let mut sizes = Vec::with_capacity(reps);
    let mut zps = Vec::with_capacity(reps);
    let mut tp_count = 0usize;
    let mut tpc_count = 0usize;
    let mut zp_histogram: BTreeMap<String, usize> = BTreeMap::new();

    for outcome in outcomes {
        outcome.validate()?;
        mses.push(mse(&outcome.beta_hat, &outcome.beta_star_star)?);
        sizes.push(outcome.active_set.iter().filter(|&&a| a).count() as f64);
        let (is_tp, is_tpc, zp) = classify(outcome);
        tp_count += usize::from(is_tp);
        tpc_count += usize::from(is_tpc);
        zps.push(zp);
        *zp_histogram.entry(format!("{zp:.2}")).or_insert(0) += 1;
    }

    Ok(BenchmarkSummary {
        n_replications: reps,
        mse_mean: mean(&mses),
        mse_sd: sd(&mses),
        active_size_mean: mean(&sizes),
        active_size_median: median(&sizes),
        active_size_sd: sd(&sizes),
        tp_rate: tp_count as f64 / reps as f64,
        tpc_rate: tpc_count as f64 / reps as f64,
        zp_mean: mean(&zps),
        zp_sd: sd(&zps),
        zp_histogram,
    })
}
