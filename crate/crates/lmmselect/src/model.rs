//! Data containers for the linear mixed-effects model
//! y = X beta + Z gamma + eps and the theta -> Lambda_theta covariance
//! parameterization, where the random-effects covariance factors as
//! Gamma = sigma^2 Lambda_theta Lambda_theta^T.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A validated mixed-model dataset.
///
/// Rows of `y`, `x`, `z` and entries of `groups` are aligned; group labels
/// are normalized to `1..=n_groups` and every label occurs at least once.
/// Rows are kept in their original order; no operation in this crate needs
/// groups to be contiguous blocks because `z` is stored explicitly.
#[derive(Debug, Clone)]
pub struct LmmDataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    groups: Vec<usize>,
    n_groups: usize,
}

impl LmmDataset {
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    /// Number of fixed-effects columns p.
    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    /// Random-effects dimension q.
    pub fn q(&self) -> usize {
        self.z.ncols()
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    /// Normalized group labels, one per observation, each in `1..=n_groups`.
    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    /// Same dataset with the fixed-effects design replaced (used for refits
    /// restricted to an active set). The replacement must keep the row count.
    pub(crate) fn with_x(&self, x: DMatrix<f64>) -> LmmDataset {
        assert_eq!(x.nrows(), self.n_obs());
        LmmDataset {
            y: self.y.clone(),
            x,
            z: self.z.clone(),
            groups: self.groups.clone(),
            n_groups: self.n_groups,
        }
    }
}

fn check_finite_vector(v: &DVector<f64>, context: &str) -> Result<()> {
    for (index, value) in v.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                context: context.to_string(),
                index,
            });
        }
    }
    Ok(())
}

fn check_finite_matrix(m: &DMatrix<f64>, context: &str) -> Result<()> {
    // Column-major linear index, matching nalgebra's storage order.
    for (index, value) in m.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                context: context.to_string(),
                index,
            });
        }
    }
    Ok(())
}

/// Validates the pieces of a mixed-model dataset and normalizes group labels.
///
/// Labels may be arbitrary integers; they are relabeled to `1..=n_groups` by
/// rank of the distinct values, so the function is idempotent on its own
/// output. Row order is preserved.
pub fn build_dataset(
    y: DVector<f64>,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    groups: &[i64],
) -> Result<LmmDataset> {
    let n = y.len();
    if n == 0 {
        return Err(Error::InvalidArgument {
            name: "y",
            reason: "dataset is empty".to_string(),
        });
    }
    if x.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "X rows".to_string(),
            expected: n,
            found: x.nrows(),
        });
    }
    if z.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "Z rows".to_string(),
            expected: n,
            found: z.nrows(),
        });
    }
    if groups.len() != n {
        return Err(Error::DimensionMismatch {
            context: "group labels".to_string(),
            expected: n,
            found: groups.len(),
        });
    }
    check_finite_vector(&y, "y")?;
    check_finite_matrix(&x, "X")?;
    check_finite_matrix(&z, "Z")?;

    let distinct: std::collections::BTreeSet<i64> = groups.iter().copied().collect();
    let rank: std::collections::BTreeMap<i64, usize> = distinct
        .iter()
        .enumerate()
        .map(|(r, &label)| (label, r + 1))
        .collect();
    let normalized: Vec<usize> = groups.iter().map(|g| rank[g]).collect();

    Ok(LmmDataset {
        y,
        x,
        z,
        groups: normalized,
        n_groups: distinct.len(),
    })
}

/// Builds the n_obs x n_groups indicator matrix with a single 1 per row at
/// the observation's group column (the random-intercept design).
///
/// Labels must already be normalized to `1..=n_groups`; a declared group
/// with no observations is an error.
pub fn group_indicator_matrix(groups: &[usize], n_groups: usize) -> Result<DMatrix<f64>> {
    let mut counts = vec![0usize; n_groups];
    for (index, &g) in groups.iter().enumerate() {
        if g < 1 || g > n_groups {
            return Err(Error::InvalidArgument {
                name: "groups",
                reason: format!("label {g} at index {index} outside 1..={n_groups}"),
            });
        }
        counts[g - 1] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyGroup { label: empty + 1 });
    }
    let mut z = DMatrix::zeros(groups.len(), n_groups);
    for (i, &g) in groups.iter().enumerate() {
        z[(i, g - 1)] = 1.0;
    }
    Ok(z)
}

/// Pattern mapping the variance-component vector theta to the relative
/// covariance factor Lambda_theta: one lower-triangular `block_dim` x
/// `block_dim` block, filled from theta in column-major order, repeated
/// along the diagonal `n_blocks` times. Diagonal positions are
/// variance-like and constrained nonnegative; strict lower positions are
/// unconstrained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CovarianceTemplate {
    block_dim: usize,
    n_blocks: usize,
}

impl CovarianceTemplate {
    /// General repeated-block template.
    pub fn repeated_block(block_dim: usize, n_blocks: usize) -> Result<CovarianceTemplate> {
        if block_dim < 1 {
            return Err(Error::InvalidArgument {
                name: "block_dim",
                reason: "must be at least 1".to_string(),
            });
        }
        if n_blocks < 1 {
            return Err(Error::InvalidArgument {
                name: "n_blocks",
                reason: "must be at least 1".to_string(),
            });
        }
        Ok(CovarianceTemplate {
            block_dim,
            n_blocks,
        })
    }

    /// Template for one random intercept per group: Lambda_theta = theta_1 * I.
    pub fn random_intercept(n_groups: usize) -> Result<CovarianceTemplate> {
        if n_groups < 1 {
            return Err(Error::InvalidArgument {
                name: "n_groups",
                reason: "must be at least 1".to_string(),
            });
        }
        CovarianceTemplate::repeated_block(1, n_groups)
    }

    /// Random-effects dimension q of the materialized factor.
    pub fn q(&self) -> usize {
        self.block_dim * self.n_blocks
    }

    pub fn theta_dim(&self) -> usize {
        self.block_dim * (self.block_dim + 1) / 2
    }

    /// True at theta positions that sit on the block diagonal.
    pub fn variance_mask(&self) -> Vec<bool> {
        let d = self.block_dim;
        let mut mask = Vec::with_capacity(self.theta_dim());
        for j in 0..d {
            for i in j..d {
                mask.push(i == j);
            }
        }
        mask
    }

    /// Whether Lambda_theta = theta_1 * I (lets the likelihood engine skip
    /// general triangular products).
    pub(crate) fn is_scaled_identity(&self) -> bool {
        self.block_dim == 1
    }

    /// Validates theta against the template and returns Lambda_theta.
    ///
    /// Singular factors (for example theta = 0) are accepted: the model only
    /// needs sigma^2 Lambda Lambda^T to be positive semidefinite.
    pub fn materialize(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_theta(theta)?;
        Ok(self.materialize_unchecked(theta))
    }

    /// Dimension and bound validation for theta.
    pub fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.theta_dim() {
            return Err(Error::DimensionMismatch {
                context: "theta".to_string(),
                expected: self.theta_dim(),
                found: theta.len(),
            });
        }
        check_finite_vector(theta, "theta")?;
        for (index, (&t, mask)) in theta.iter().zip(self.variance_mask()).enumerate() {
            if mask && t < 0.0 {
                return Err(Error::InvalidArgument {
                    name: "theta",
                    reason: format!("variance component at index {index} is negative ({t})"),
                });
            }
        }
        Ok(())
    }

    /// Assembles Lambda_theta without bound checks. sigma^2 Lambda Lambda^T
    /// is positive semidefinite for any finite theta, so finite-difference
    /// probes slightly past the theta >= 0 boundary remain well defined.
    pub(crate) fn materialize_unchecked(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let d = self.block_dim;
        let q = self.q();
        let mut lambda = DMatrix::zeros(q, q);
        for b in 0..self.n_blocks {
            let base = b * d;
            let mut idx = 0;
            for j in 0..d {
                for i in j..d {
                    lambda[(base + i, base + j)] = theta[idx];
                    idx += 1;
                }
            }
        }
        lambda
    }

    /// The §3.2-style default start: variance-like components 1, others 0.
    pub fn default_theta(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.theta_dim(),
            self.variance_mask()
                .into_iter()
                .map(|m| if m { 1.0 } else { 0.0 }),
        )
    }
}

/// A complete parameter point (beta, theta, sigma^2) of the model.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub beta: DVector<f64>,
    pub theta: DVector<f64>,
    pub sigma2: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_dataset() -> LmmDataset {
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, 1.0, -0.5, 0.0, 2.0, 1.0, 1.0]);
        let z = group_indicator_matrix(&[1, 1, 2, 2], 2).unwrap();
        build_dataset(y, x, z, &[7, 7, -3, -3]).unwrap()
    }

    #[test]
    fn build_normalizes_labels_by_rank() {
        let data = small_dataset();
        // Distinct labels {-3, 7} map to {1, 2} in sorted order.
        assert_eq!(data.groups(), &[2, 2, 1, 1]);
        assert_eq!(data.n_groups(), 2);
        assert_eq!(data.n_obs(), 4);
        assert_eq!(data.n_features(), 2);
        assert_eq!(data.q(), 2);
    }

    #[test]
    fn build_is_idempotent_on_own_output() {
        let data = small_dataset();
        let labels: Vec<i64> = data.groups().iter().map(|&g| g as i64).collect();
        let again = build_dataset(
            data.y().clone(),
            data.x().clone(),
            data.z().clone(),
            &labels,
        )
        .unwrap();
        assert_eq!(again.groups(), data.groups());
        assert_eq!(again.y(), data.y());
    }

    #[test]
    fn build_accepts_minimal_instance() {
        let data = build_dataset(
            DVector::from_vec(vec![1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            &[1],
        )
        .unwrap();
        assert_eq!(data.n_obs(), 1);
        assert_eq!(data.n_groups(), 1);
    }

    #[test]
    fn build_rejects_row_mismatch() {
        let err = build_dataset(
            DVector::from_vec(vec![0.0; 10]),
            DMatrix::zeros(9, 2),
            DMatrix::zeros(10, 1),
            &[1; 10],
        )
        .unwrap_err();
        match err {
            Error::DimensionMismatch {
                expected, found, ..
            } => {
                assert_eq!((expected, found), (10, 9));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn build_rejects_non_finite_with_index() {
        let mut y = DVector::from_vec(vec![0.0; 3]);
        y[2] = f64::NAN;
        let err = build_dataset(y, DMatrix::zeros(3, 1), DMatrix::zeros(3, 1), &[1, 1, 2])
            .unwrap_err();
        match err {
            Error::NonFinite { context, index } => {
                assert_eq!(context, "y");
                assert_eq!(index, 2);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn indicator_matrix_has_one_hot_rows() {
        let z = group_indicator_matrix(&[1, 2, 2, 3], 3).unwrap();
        for i in 0..4 {
            let row_sum: f64 = z.row(i).iter().sum();
            assert_eq!(row_sum, 1.0);
        }
        assert_eq!(z[(0, 0)], 1.0);
        assert_eq!(z[(3, 2)], 1.0);
    }

    #[test]
    fn indicator_matrix_rejects_empty_group() {
        let err = group_indicator_matrix(&[1, 1, 3], 3).unwrap_err();
        match err {
            Error::EmptyGroup { label } => assert_eq!(label, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn random_intercept_materializes_scaled_identity() {
        let template = CovarianceTemplate::random_intercept(3).unwrap();
        assert_eq!(template.q(), 3);
        assert_eq!(template.theta_dim(), 1);
        assert_eq!(template.variance_mask(), vec![true]);

        let identity = template.materialize(&DVector::from_vec(vec![1.0])).unwrap();
        assert_eq!(identity, DMatrix::identity(3, 3));

        // theta = 0 gives a singular factor, which is allowed.
        let zero = template.materialize(&DVector::from_vec(vec![0.0])).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));

        let err = template
            .materialize(&DVector::from_vec(vec![-0.5]))
            .unwrap_err();
        assert!(matches!(err, Error::InvalidArgument { name: "theta", .. }));
    }

    #[test]
    fn repeated_block_fills_lower_triangle_column_major() {
        let template = CovarianceTemplate::repeated_block(2, 2).unwrap();
        assert_eq!(template.theta_dim(), 3);
        assert_eq!(template.variance_mask(), vec![true, false, true]);
        let theta = DVector::from_vec(vec![1.5, 0.25, 2.0]);
        let lambda = template.materialize(&theta).unwrap();
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.5, 0.0, 0.0, 0.0, //
                0.25, 2.0, 0.0, 0.0, //
                0.0, 0.0, 1.5, 0.0, //
                0.0, 0.0, 0.25, 2.0,
            ],
        );
        assert_eq!(lambda, expected);
    }

    #[test]
    fn scaled_covariance_is_positive_semidefinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let block_dim = rng.random_range(1..=3);
            let n_blocks = rng.random_range(1..=3);
            let template = CovarianceTemplate::repeated_block(block_dim, n_blocks).unwrap();
            let mask = template.variance_mask();
            let theta = DVector::from_iterator(
                template.theta_dim(),
                mask.iter().map(|&is_var| {
                    let v: f64 = rng.random_range(-2.0..2.0);
                    if is_var {
                        v.abs()
                    } else {
                        v
                    }
                }),
            );
            let sigma2: f64 = rng.random_range(0.1..3.0);
            let lambda = template.materialize(&theta).unwrap();
            let cov = (&lambda * lambda.transpose()).scale(sigma2);
            let eigen = cov.symmetric_eigenvalues();
            assert!(
                eigen.iter().all(|&e| e >= -1e-10),
                "eigenvalue below tolerance: {eigen:?}"
            );
        }
    }

    #[test]
    fn default_theta_sets_variances_to_one() {
        let template = CovarianceTemplate::repeated_block(2, 1).unwrap();
        assert_eq!(
            template.default_theta(),
            DVector::from_vec(vec![1.0, 0.0, 1.0])
        );
    }
}
