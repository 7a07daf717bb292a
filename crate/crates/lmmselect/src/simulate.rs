//! Seeded generation of grouped datasets with known sparse truth.
//!
//! The generating model is y = X1 beta_true + Z gamma + eps with a scalar
//! random intercept per group: gamma_g ~ N(0, gamma_var) and
//! eps_i ~ N(0, sigma^2). Noise covariates enter X but never y.
//!
//! Determinism contract: all draws come from one ChaCha8 stream seeded by
//! `Scenario::seed`, in a fixed order: X column by column (column 0 first),
//! then the group intercepts, then the observation noise. ChaCha8 produces
//! the same stream on every platform, so equal scenarios give bit-identical
//! datasets anywhere.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_dataset, group_indicator_matrix, LmmDataset};

/// Marginal distribution of one covariate column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateDistribution {
    /// Exactly floor(N/2) zeros and the rest ones, in a seeded random
    /// order (an odd leftover observation gets a one).
    BalancedBinary,
    Uniform { lo: f64, hi: f64 },
    StandardNormal,
}

/// Name and distribution of one covariate column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub distribution: CovariateDistribution,
}

/// Complete description of a simulated study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n_groups: usize,
    /// Observation count per group, length `n_groups`.
    pub obs_per_group: Vec<usize>,
    /// Number of leading covariates carrying signal.
    pub p_true: usize,
    pub p_total: usize,
    /// Nonzero true coefficients of the first `p_true` covariates.
    pub beta_true: Vec<f64>,
    /// Residual standard deviation; zero means a noiseless response.
    pub sigma: f64,
    /// Variance of the random intercepts; zero disables them.
    pub gamma_var: f64,
    /// One spec per column, length `p_total`.
    pub covariate_specs: Vec<CovariateSpec>,
    pub seed: u64,
}

/// A realized dataset along with the truth that generated it.
#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    pub dataset: LmmDataset,
    /// True coefficients padded with zeros to length `p_total`.
    pub beta_star_star: DVector<f64>,
    /// Realized random intercepts, one per group.
    pub gamma: DVector<f64>,
    /// True in exactly the first `p_true` positions.
    pub true_active: Vec<bool>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.n_groups == 0 {
            return Err(Error::InvalidArgument {
                name: "n_groups",
                reason: "need at least one group".to_string(),
            });
        }
        if self.obs_per_group.len() != self.n_groups {
            return Err(Error::DimensionMismatch {
                context: "obs_per_group".to_string(),
                expected: self.n_groups,
                found: self.obs_per_group.len(),
            });
        }
        if let Some(g) = self.obs_per_group.iter().position(|&n| n == 0) {
            return Err(Error::EmptyGroup { label: g + 1 });
        }
        if self.p_true > self.p_total {
            return Err(Error::InvalidArgument {
                name: "p_true",
                reason: format!(
                    "signal columns ({}) exceed total columns ({})",
                    self.p_true, self.p_total
                ),
            });
        }
        if self.beta_true.len() != self.p_true {
            return Err(Error::DimensionMismatch {
                context: "beta_true".to_string(),
                expected: self.p_true,
                found: self.beta_true.len(),
            });
        }
        if self.beta_true.iter().any(|b| !b.is_finite() || *b == 0.0) {
            return Err(Error::InvalidArgument {
                name: "beta_true",
                reason: "true coefficients must be finite and nonzero; drop \
                         a column instead of zeroing it"
                    .to_string(),
            });
        }
        for (name, value) in [("sigma", self.sigma), ("gamma_var", self.gamma_var)] {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::InvalidArgument {
                    name,
                    reason: format!("must be finite and nonnegative, got {value}"),
                });
            }
        }
        if self.covariate_specs.len() != self.p_total {
            return Err(Error::DimensionMismatch {
                context: "covariate_specs".to_string(),
                expected: self.p_total,
                found: self.covariate_specs.len(),
            });
        }
        for (j, spec) in self.covariate_specs.iter().enumerate() {
            if spec.name.is_empty()
                || spec
                    .name
                    .contains(|c: char| c == ',' || c == '"' || c.is_whitespace())
            {
                return Err(Error::InvalidArgument {
                    name: "covariate_specs",
                    reason: format!(
                        "column {j} name {:?} must be nonempty without commas, \
                         quotes, or whitespace",
                        spec.name
                    ),
                });
            }
            if let CovariateDistribution::Uniform { lo, hi } = spec.distribution {
                if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                    return Err(Error::InvalidArgument {
                        name: "covariate_specs",
                        reason: format!("column {j} uniform range [{lo}, {hi}] is empty"),
                    });
                }
            }
        }
        let mut names: Vec<&str> = self.covariate_specs.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument {
                name: "covariate_specs",
                reason: "column names must be unique".to_string(),
            });
        }
        Ok(())
    }

    pub fn n_obs(&self) -> usize {
        self.obs_per_group.iter().sum()
    }
}

/// Group sizes as equal as possible: the first `n_obs % n_groups` groups
/// take one extra observation.
pub fn even_group_sizes(n_obs: usize, n_groups: usize) -> Vec<usize> {
    assert!(n_groups > 0, "need at least one group");
    let base = n_obs / n_groups;
    let extra = n_obs % n_groups;
    (0..n_groups)
        .map(|g| if g < extra { base + 1 } else { base })
        .collect()
}

/// The study's covariate battery truncated or extended to `p_total`
/// columns: sex, age, nscore, a standard-normal x4, then numbered
/// standard-normal noise columns.
pub fn preset_covariates(p_total: usize) -> Vec<CovariateSpec> {
    let named = [
        CovariateSpec {
            name: "sex".to_string(),
            distribution: CovariateDistribution::BalancedBinary,
        },
        CovariateSpec {
            name: "age".to_string(),
            distribution: CovariateDistribution::Uniform { lo: 18.0, hi: 37.0 },
        },
        CovariateSpec {
            name: "nscore".to_string(),
            distribution: CovariateDistribution::Uniform { lo: 20.0, hi: 50.0 },
        },
        CovariateSpec {
            name: "x4".to_string(),
            distribution: CovariateDistribution::StandardNormal,
        },
    ];
    let mut specs: Vec<CovariateSpec> = named.into_iter().take(p_total).collect();
    for j in specs.len() + 1..=p_total {
        specs.push(CovariateSpec {
            name: format!("noise{j:02}"),
            distribution: CovariateDistribution::StandardNormal,
        });
    }
    specs
}

/// The benchmark study: 300 observations in 90 groups (30 groups of 4,
/// then 60 groups of 3), 4 signal covariates with coefficients
/// (1, -1, -1, 1), 50 standard-normal noise covariates, unit residual and
/// intercept variances.
pub fn default_scenario(seed: u64) -> Scenario {
    Scenario {
        n_groups: 90,
        obs_per_group: even_group_sizes(300, 90),
        p_true: 4,
        p_total: 54,
        beta_true: vec![1.0, -1.0, -1.0, 1.0],
        sigma: 1.0,
        gamma_var: 1.0,
        covariate_specs: preset_covariates(54),
        seed,
    }
}

/// Sub-seed for one replication of a Monte-Carlo study, so replications
/// can generate independently in any order.
///
/// This is member `replication` of the splitmix64 sequence started at the
/// master seed: mix(master + (replication + 1) * 0x9E3779B97F4A7C15) with
/// the standard splitmix64 finalizer.
pub fn replication_seed(master_seed: u64, replication: usize) -> u64 {
    let mut z = master_seed
        .wrapping_add((replication as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws one dataset under the scenario's generating model.
pub fn simulate_dataset(scenario: &Scenario) -> Result<SimulatedDataset> {
    scenario.validate()?;
    let n = scenario.n_obs();
    let p = scenario.p_total;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);

    let mut x = DMatrix::<f64>::zeros(n, p);
    for (j, spec) in scenario.covariate_specs.iter().enumerate() {
        match spec.distribution {
            CovariateDistribution::BalancedBinary => {
                let mut column: Vec<f64> =
                    (0..n).map(|i| if i < n / 2 { 0.0 } else { 1.0 }).collect();
                column.shuffle(&mut rng);
                for (i, v) in column.into_iter().enumerate() {
                    x[(i, j)] = v;
                }
            }
            CovariateDistribution::Uniform { lo, hi } => {
                for i in 0..n {
                    x[(i, j)] = rng.random_range(lo..hi);
                }
            }
            CovariateDistribution::StandardNormal => {
                for i in 0..n {
                    x[(i, j)] = rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
    }

    let gamma_sd = scenario.gamma_var.sqrt();
    let gamma = DVector::<f64>::from_fn(scenario.n_groups, |_, _| {
        gamma_sd * rng.sample::<f64, _>(StandardNormal)
    });

    let mut labels = Vec::with_capacity(n);
    for (g, &size) in scenario.obs_per_group.iter().enumerate() {
        labels.extend(std::iter::repeat_n(g as i64 + 1, size));
    }

    let y = DVector::<f64>::from_fn(n, |i, _| {
        let mut mean = gamma[(labels[i] - 1) as usize];
        for (j, b) in scenario.beta_true.iter().enumerate() {
            mean += x[(i, j)] * b;
        }
        mean + scenario.sigma * rng.sample::<f64, _>(StandardNormal)
    });

    let groups: Vec<usize> = labels.iter().map(|&g| g as usize).collect();
    let z = group_indicator_matrix(&groups, scenario.n_groups)?;
    let dataset = build_dataset(y, x, z, &labels)?;

    let mut beta_star_star = DVector::zeros(p);
    for (j, &b) in scenario.beta_true.iter().enumerate() {
        beta_star_star[j] = b;
    }
    let true_active: Vec<bool> = (0..p).map(|j| j < scenario.p_true).collect();

    Ok(SimulatedDataset {
        dataset,
        beta_star_star,
        gamma,
        true_active,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_scenario() -> Scenario {
        Scenario {
            n_groups: 4,
            obs_per_group: vec![3, 3, 2, 2],
            p_true: 2,
            p_total: 5,
            beta_true: vec![1.5, -2.0],
            sigma: 0.7,
            gamma_var: 0.25,
            covariate_specs: (1..=5)
                .map(|j| CovariateSpec {
                    name: format!("x{j}"),
                    distribution: CovariateDistribution::StandardNormal,
                })
                .collect(),
            seed: 11,
        }
    }

    #[test]
    fn default_scenario_matches_the_study_shape() {
        let scenario = default_scenario(3);
        assert_eq!(scenario.n_groups, 90);
        assert_eq!(scenario.n_obs(), 300);
        assert_eq!(scenario.obs_per_group.len(), 90);
        assert!(scenario.obs_per_group[..30].iter().all(|&n| n == 4));
        assert!(scenario.obs_per_group[30..].iter().all(|&n| n == 3));
        assert_eq!(scenario.p_true, 4);
        assert_eq!(scenario.p_total, 54);
        assert_eq!(scenario.beta_true, vec![1.0, -1.0, -1.0, 1.0]);
        assert_eq!(scenario.sigma, 1.0);
        assert_eq!(scenario.gamma_var, 1.0);
        assert_eq!(scenario.seed, 3);
        assert_eq!(scenario.covariate_specs.len(), 54);
        assert_eq!(scenario.covariate_specs[0].name, "sex");
        assert_eq!(
            scenario.covariate_specs[0].distribution,
            CovariateDistribution::BalancedBinary
        );
        assert_eq!(
            scenario.covariate_specs[1].distribution,
            CovariateDistribution::Uniform { lo: 18.0, hi: 37.0 }
        );
        assert_eq!(
            scenario.covariate_specs[2].distribution,
            CovariateDistribution::Uniform { lo: 20.0, hi: 50.0 }
        );
        assert_eq!(scenario.covariate_specs[4].name, "noise05");
        assert_eq!(scenario.covariate_specs[53].name, "noise54");
        scenario.validate().unwrap();
    }

    #[test]
    fn even_sizes_sum_and_differ_by_at_most_one() {
        for (n_obs, n_groups) in [(300, 90), (10, 3), (7, 7), (5, 9)] {
            let sizes = even_group_sizes(n_obs, n_groups);
            assert_eq!(sizes.len(), n_groups);
            assert_eq!(sizes.iter().sum::<usize>(), n_obs);
            let lo = *sizes.iter().min().unwrap();
            let hi = *sizes.iter().max().unwrap();
            assert!(hi - lo <= 1);
            // Larger groups come first.
            let mut sorted = sizes.clone();
            sorted.sort_unstable_by(|a, b| b.cmp(a));
            assert_eq!(sizes, sorted);
        }
    }

    #[test]
    fn noiseless_limit_reproduces_the_linear_predictor() {
        let mut scenario = tiny_scenario();
        scenario.sigma = 0.0;
        scenario.gamma_var = 0.0;
        let sim = simulate_dataset(&scenario).unwrap();
        assert!(sim.gamma.iter().all(|&g| g == 0.0));
        let x1 = sim.dataset.x().columns(0, scenario.p_true).into_owned();
        let beta = DVector::from_vec(scenario.beta_true.clone());
        let predicted = &x1 * &beta;
        for i in 0..scenario.n_obs() {
            assert!((sim.dataset.y()[i] - predicted[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_reproduces_bit_for_bit() {
        let scenario = default_scenario(3);
        let a = simulate_dataset(&scenario).unwrap();
        let b = simulate_dataset(&scenario).unwrap();
        assert_eq!(a.dataset.y(), b.dataset.y());
        assert_eq!(a.dataset.x(), b.dataset.x());
        assert_eq!(a.gamma, b.gamma);

        let other = simulate_dataset(&default_scenario(4)).unwrap();
        assert_ne!(a.dataset.y(), other.dataset.y());
    }

    #[test]
    fn shape_and_truth_of_the_default_draw() {
        let sim = simulate_dataset(&default_scenario(3)).unwrap();
        assert_eq!(sim.dataset.n_obs(), 300);
        assert_eq!(sim.dataset.n_features(), 54);
        assert_eq!(sim.dataset.n_groups(), 90);
        assert_eq!(sim.beta_star_star.len(), 54);
        let nonzeros: Vec<usize> = sim
            .beta_star_star
            .iter()
            .enumerate()
            .filter_map(|(j, &b)| (b != 0.0).then_some(j))
            .collect();
        assert_eq!(nonzeros, vec![0, 1, 2, 3]);
        assert_eq!(sim.true_active.iter().filter(|&&a| a).count(), 4);
        assert!(sim.true_active[..4].iter().all(|&a| a));

        // Each observation indicates exactly one group.
        for i in 0..300 {
            let row_sum: f64 = sim.dataset.z().row(i).iter().sum();
            assert_eq!(row_sum, 1.0);
        }

        // The sex column is exactly half zeros and half ones.
        let ones: f64 = sim.dataset.x().column(0).iter().sum();
        assert_eq!(ones, 150.0);
        let ages = sim.dataset.x().column(1);
        assert!(ages.iter().all(|&a| (18.0..37.0).contains(&a)));
    }

    #[test]
    fn realized_variances_land_in_their_confidence_bands() {
        let sim = simulate_dataset(&default_scenario(3)).unwrap();

        // Sample variance of 90 intercepts: chi-square band on 89 df.
        let g_mean = sim.gamma.mean();
        let g_var = sim.gamma.iter().map(|g| (g - g_mean).powi(2)).sum::<f64>() / 89.0;
        assert!((0.6..=1.5).contains(&g_var), "gamma variance {g_var}");

        // Residuals recovered from the truth: chi-square band on 300 draws.
        let x1 = sim.dataset.x().columns(0, 4).into_owned();
        let beta = DVector::from_vec(vec![1.0, -1.0, -1.0, 1.0]);
        let residual = sim.dataset.y() - &x1 * &beta - sim.dataset.z() * &sim.gamma;
        let r_mean = residual.mean();
        let r_var = residual.iter().map(|r| (r - r_mean).powi(2)).sum::<f64>() / 299.0;
        assert!((0.85..=1.18).contains(&r_var), "residual variance {r_var}");
    }

    #[test]
    fn replication_seeds_follow_the_published_splitmix_sequence() {
        // First two outputs of splitmix64 from state 0, a widely published
        // reference vector.
        assert_eq!(replication_seed(0, 0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(replication_seed(0, 1), 0x6E78_9E6A_A1B9_65F4);

        let a: Vec<u64> = (0..50).map(|r| replication_seed(3, r)).collect();
        let b: Vec<u64> = (0..50).map(|r| replication_seed(3, r)).collect();
        assert_eq!(a, b);
        let mut unique = a.clone();
        unique.sort_unstable();
        unique.dedup();
        assert_eq!(unique.len(), a.len());
        assert_ne!(replication_seed(3, 0), replication_seed(4, 0));
    }

    #[test]
    fn scenario_round_trips_through_json() {
        let scenario = default_scenario(3);
        let text = serde_json::to_string_pretty(&scenario).unwrap();
        let back: Scenario = serde_json::from_str(&text).unwrap();
        assert_eq!(back, scenario);
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        let mut s = tiny_scenario();
        s.p_true = 6;
        assert!(s.validate().is_err());

        let mut s = tiny_scenario();
        s.beta_true = vec![1.0];
        assert!(s.validate().is_err());

        let mut s = tiny_scenario();
        s.beta_true = vec![1.0, 0.0];
        assert!(s.validate().is_err());

        let mut s = tiny_scenario();
        s.obs_per_group = vec![3, 3, 2];
        assert!(s.validate().is_err());

        let mut s = tiny_scenario();
        s.obs_per_group[1] = 0;
        assert!(s.validate().is_err());

        let mut s = tiny_scenario();
        s.sigma = -1.0;
        assert!(s.validate().is_err());

        let mut s = tiny_scenario();
        s.gamma_var = f64::NAN;
        assert!(s.validate().is_err());

        let mut s = tiny_scenario();
        s.covariate_specs[0].name = "x2".to_string();
        assert!(s.validate().is_err());

        let mut s = tiny_scenario();
        s.covariate_specs[0].name = "bad name".to_string();
        assert!(s.validate().is_err());

        let mut s = tiny_scenario();
        s.covariate_specs[2].distribution = CovariateDistribution::Uniform { lo: 2.0, hi: 2.0 };
        assert!(s.validate().is_err());
    }
}
