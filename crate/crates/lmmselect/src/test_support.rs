//! Dataset builders shared by the unit tests of several modules.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::model::{build_dataset, group_indicator_matrix, CovarianceTemplate, LmmDataset};

/// Grouped dataset with a sparse signal: the first `signal.len()` columns
/// of X carry those coefficients, the rest are pure noise. Groups share a
/// random intercept with standard deviation `gamma_sd`.
pub(crate) fn sparse_instance(
    seed: u64,
    n_groups: usize,
    per_group: usize,
    p: usize,
    signal: &[f64],
    sigma: f64,
    gamma_sd: f64,
) -> (LmmDataset, CovarianceTemplate) {
    assert!(signal.len() <= p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_groups * per_group;
    let x = DMatrix::<f64>::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let gamma: Vec<f64> = (0..n_groups)
        .map(|_| gamma_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let labels: Vec<i64> = (0..n).map(|i| (i / per_group) as i64).collect();
    let y = DVector::<f64>::from_fn(n, |i, _| {
        let mut mean = gamma[i / per_group];
        for (j, b) in signal.iter().enumerate() {
            mean += x[(i, j)] * b;
        }
        mean + sigma * rng.sample::<f64, _>(StandardNormal)
    });
    let groups: Vec<usize> = labels.iter().map(|&g| g as usize + 1).collect();
    let z = group_indicator_matrix(&groups, n_groups).unwrap();
    let data = build_dataset(y, x, z, &labels).unwrap();
    let template = CovarianceTemplate::random_intercept(n_groups).unwrap();
    (data, template)
}
