//! Lambda grids, post-selection refits, BIC scoring, and the
//! regularization path.
//!
//! The path walks a descending lambda grid, warm-starting each reweighted
//! fit from the previous one. Every visited active set is refit without a
//! penalty and scored by BIC on that refit; the retained lambda minimizes
//! BIC, with ties resolved toward the larger (sparser) lambda.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::adaptive_ridge::{default_beta_init, iwr_fit, IwrResult, PenaltyConfig};
use crate::error::{Error, Result};
use crate::model::{CovarianceTemplate, LmmDataset, ModelParams};

/// Unpenalized maximum-likelihood fit restricted to an active set.
#[derive(Debug, Clone)]
pub struct RefitResult {
    /// Full-length coefficient vector; entries outside the active set are
    /// exactly zero.
    pub params: ModelParams,
    /// Log-likelihood at the refitted parameters.
    pub loglik: f64,
    pub converged: bool,
}

/// One sweep over a lambda grid with per-lambda fits and BIC scores.
#[derive(Debug, Clone)]
pub struct PathResult {
    /// Strictly decreasing, as traversed.
    pub lambdas: Vec<f64>,
    pub fits: Vec<IwrResult>,
    pub active_sets: Vec<Vec<bool>>,
    /// BIC of the refit on each lambda's active set.
    pub bics: Vec<f64>,
    /// Index minimizing `bics` among converged fits; ties go to the
    /// smaller index, hence the larger lambda.
    pub chosen_index: usize,
    pub chosen_fit: RefitResult,
}

/// Summary of the model retained from a path.
#[derive(Debug, Clone)]
pub struct ChosenModel {
    pub lambda: f64,
    pub active_set: Vec<bool>,
    pub params: ModelParams,
    pub loglik: f64,
    pub bic: f64,
    pub n_active: usize,
}

/// `count` log-equispaced values from `hi` down to `lo`, endpoints exact.
pub fn lambda_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !lo.is_finite() || !hi.is_finite() || lo <= 0.0 || lo >= hi {
        return Err(Error::InvalidArgument {
            name: "lambda bounds",
            reason: format!("need 0 < lo < hi and both finite, got lo={lo}, hi={hi}"),
        });
    }
    if count < 2 {
        return Err(Error::InvalidArgument {
            name: "count",
            reason: format!("need at least 2 grid points, got {count}"),
        });
    }
    let (log_lo, log_hi) = (lo.ln(), hi.ln());
    let m = (count - 1) as f64;
    Ok((0..count)
        .map(|k| {
            if k == 0 {
                hi
            } else if k == count - 1 {
                lo
            } else {
                (log_hi + (log_lo - log_hi) * k as f64 / m).exp()
            }
        })
        .collect())
}

/// Bayesian information criterion with one variance parameter per theta
/// component plus one for sigma^2:
/// -2 loglik + log(n) * (n_active + theta_dim + 1).
pub fn bic(loglik: f64, n_obs: usize, n_active: usize, theta_dim: usize) -> f64 {
    assert!(n_obs >= 1, "BIC needs at least one observation");
    -2.0 * loglik + (n_obs as f64).ln() * (n_active + theta_dim + 1) as f64
}

/// Maximum-likelihood refit with X restricted to the columns flagged in
/// `active_set`. Excluded coefficients are reported as exactly zero. An
/// all-false set fits the variance components alone.
pub fn refit_selected(
    data: &LmmDataset,
    template: &CovarianceTemplate,
    active_set: &[bool],
) -> Result<RefitResult> {
    if active_set.len() != data.n_features() {
        return Err(Error::DimensionMismatch {
            context: "active_set".to_string(),
            expected: data.n_features(),
            found: active_set.len(),
        });
    }
    let indices: Vec<usize> = active_set
        .iter()
        .enumerate()
        .filter_map(|(j, &keep)| keep.then_some(j))
        .collect();
    let restricted = data.with_x(data.x().select_columns(indices.iter()));
    let fit = iwr_fit(
        &restricted,
        template,
        &PenaltyConfig::default(),
        &default_beta_init(indices.len()),
        &template.default_theta(),
    )?;

    let mut beta = DVector::zeros(data.n_features());
    for (slot, &j) in indices.iter().enumerate() {
        beta[j] = fit.beta[slot];
    }
    Ok(RefitResult {
        params: ModelParams {
            beta,
            theta: fit.theta,
            sigma2: fit.sigma2,
        },
        // At the profiled sigma^2 the full log-likelihood coincides with
        // the profiled one.
        loglik: -0.5 * fit.minus2_profiled_loglik,
        converged: fit.converged,
    })
}

/// Runs the reweighted fit for each lambda in descending order, each
/// warm-started from the previous solution, then scores and chooses by BIC.
///
/// Per-lambda non-convergence is recorded in the fit and the sweep keeps
/// going; such lambdas are just never chosen. The error is reserved for a
/// path with no converged fit at all.
pub fn regularization_path(
    data: &LmmDataset,
    template: &CovarianceTemplate,
    grid: &[f64],
    config: &PenaltyConfig,
) -> Result<PathResult> {
    check_grid(grid)?;
    let mut fits = Vec::with_capacity(grid.len());
    let mut beta = default_beta_init(data.n_features());
    let mut theta = template.default_theta();
    for &lambda in grid {
        let per_lambda = PenaltyConfig {
            lambda,
            ..config.clone()
        };
        let fit = iwr_fit(data, template, &per_lambda, &beta, &theta)?;
        beta = fit.beta.clone();
        theta = fit.theta.clone();
        fits.push(fit);
    }
    score_and_choose(data, template, grid, fits)
}

/// Same sweep without the warm-start dependency: every lambda is fit from
/// the cold start, in parallel. Chooses by the same BIC rule.
pub fn regularization_path_cold_parallel(
    data: &LmmDataset,
    template: &CovarianceTemplate,
    grid: &[f64],
    config: &PenaltyConfig,
) -> Result<PathResult> {
    check_grid(grid)?;
    let fits = grid
        .par_iter()
        .map(|&lambda| {
            let per_lambda = PenaltyConfig {
                lambda,
                ..config.clone()
            };
            iwr_fit(
                data,
                template,
                &per_lambda,
                &default_beta_init(data.n_features()),
                &template.default_theta(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    score_and_choose(data, template, grid, fits)
}

/// Reads the retained model off a finished path.
pub fn select_model(path: &PathResult) -> Result<ChosenModel> {
    let i = path.chosen_index;
    if i >= path.lambdas.len() || !path.fits[i].converged || !path.chosen_fit.converged {
        return Err(Error::NoConvergedFit);
    }
    let active_set = path.active_sets[i].clone();
    let n_active = active_set.iter().filter(|&&a| a).count();
    Ok(ChosenModel {
        lambda: path.lambdas[i],
        active_set,
        params: path.chosen_fit.params.clone(),
        loglik: path.chosen_fit.loglik,
        bic: path.bics[i],
        n_active,
    })
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument {
            name: "grid",
            reason: "lambda grid is empty".to_string(),
        });
    }
    for (k, &lambda) in grid.iter().enumerate() {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(Error::InvalidArgument {
                name: "grid",
                reason: format!("lambda[{k}] = {lambda} is not positive and finite"),
            });
        }
        if k > 0 && lambda >= grid[k - 1] {
            return Err(Error::InvalidArgument {
                name: "grid",
                reason: format!("grid must be strictly decreasing, violated at index {k}"),
            });
        }
    }
    Ok(())
}

/// Refits every distinct active set once, scores all lambdas by BIC, and
/// picks the winner among lambdas whose selection fit and refit both
/// converged.
fn score_and_choose(
    data: &LmmDataset,
    template: &CovarianceTemplate,
    grid: &[f64],
    fits: Vec<IwrResult>,
) -> Result<PathResult> {
    // Refit failures are kept as None so one bad lambda cannot sink the
    // sweep; those entries score +inf and are ineligible.
    let mut cache: BTreeMap<Vec<bool>, Option<RefitResult>> = BTreeMap::new();
    let mut active_sets = Vec::with_capacity(fits.len());
    let mut bics = Vec::with_capacity(fits.len());
    let mut eligible = Vec::with_capacity(fits.len());
    for fit in &fits {
        let active = fit.active_set.clone();
        let refit = cache
            .entry(active.clone())
            .or_insert_with(|| refit_selected(data, template, &active).ok());
        match refit {
            Some(r) => {
                let n_active = active.iter().filter(|&&a| a).count();
                bics.push(bic(r.loglik, data.n_obs(), n_active, template.theta_dim()));
                eligible.push(fit.converged && r.converged);
            }
            None => {
                bics.push(f64::INFINITY);
                eligible.push(false);
            }
        }
        active_sets.push(active);
    }
    let chosen_index = choose_index(&bics, &eligible).ok_or(Error::NoConvergedFit)?;
    let chosen_fit = cache[&active_sets[chosen_index]]
        .clone()
        .expect("an eligible lambda always has a refit");
    Ok(PathResult {
        lambdas: grid.to_vec(),
        fits,
        active_sets,
        bics,
        chosen_index,
        chosen_fit,
    })
}

/// Index of the smallest eligible score; the strict comparison keeps the
/// first (largest-lambda) member of a tie.
pub(crate) fn choose_index(bics: &[f64], eligible: &[bool]) -> Option<usize> {
    assert_eq!(bics.len(), eligible.len());
    let mut best: Option<usize> = None;
    for (i, &score) in bics.iter().enumerate() {
        if !eligible[i] {
            continue;
        }
        match best {
            Some(b) if bics[b] <= score => {}
            _ => best = Some(i),
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_dataset;
    use crate::test_support::sparse_instance;
    use approx::assert_relative_eq;

    #[test]
    fn grid_is_descending_log_spaced_with_exact_endpoints() {
        let grid = lambda_grid(1e-2, 1e2, 100).unwrap();
        assert_eq!(grid.len(), 100);
        assert_eq!(grid[0], 1e2);
        assert_eq!(grid[99], 1e-2);
        let ratio = grid[1] / grid[0];
        for pair in grid.windows(2) {
            assert!(pair[1] < pair[0]);
            assert_relative_eq!(pair[1] / pair[0], ratio, max_relative = 1e-10);
        }
    }

    #[test]
    fn grid_with_two_points_is_the_endpoint_pair() {
        assert_eq!(lambda_grid(0.01, 100.0, 2).unwrap(), vec![100.0, 0.01]);
    }

    #[test]
    fn grid_rejects_bad_bounds_and_counts() {
        assert!(lambda_grid(1.0, 1.0, 10).is_err());
        assert!(lambda_grid(2.0, 1.0, 10).is_err());
        assert!(lambda_grid(0.0, 1.0, 10).is_err());
        assert!(lambda_grid(-1.0, 1.0, 10).is_err());
        assert!(lambda_grid(1.0, f64::INFINITY, 10).is_err());
        assert!(lambda_grid(1.0, f64::NAN, 10).is_err());
        assert!(lambda_grid(1.0, 2.0, 1).is_err());
        assert!(lambda_grid(1.0, 2.0, 0).is_err());
    }

    #[test]
    fn bic_matches_hand_arithmetic() {
        let expected = 200.0 + 6.0 * (300.0f64).ln();
        assert!((bic(-100.0, 300, 4, 1) - expected).abs() < 1e-12);
        // An empty active set still pays for theta and sigma^2.
        assert_eq!(bic(0.0, 300, 0, 1), 2.0 * (300.0f64).ln());
    }

    #[test]
    fn bic_prefers_sparser_models_at_equal_likelihood() {
        assert!(bic(-50.0, 120, 3, 1) < bic(-50.0, 120, 4, 1));
    }

    #[test]
    fn refit_on_all_columns_is_the_unpenalized_fit() {
        let (data, template) = sparse_instance(7, 15, 4, 6, &[1.5, -2.0], 0.5, 0.8);
        let refit = refit_selected(&data, &template, &[true; 6]).unwrap();
        assert!(refit.converged);

        let direct = iwr_fit(
            &data,
            &template,
            &PenaltyConfig::default(),
            &default_beta_init(6),
            &template.default_theta(),
        )
        .unwrap();
        // Identical subproblem and starting point, so the runs agree
        // bit for bit.
        assert_eq!(refit.params.beta, direct.beta);
        assert_eq!(refit.params.theta, direct.theta);
        assert_eq!(refit.params.sigma2, direct.sigma2);
        assert_eq!(refit.loglik, -0.5 * direct.minus2_profiled_loglik);
    }

    #[test]
    fn refit_matches_a_hand_subsetted_dataset() {
        let (data, template) = sparse_instance(11, 15, 4, 6, &[1.5, -2.0], 0.5, 0.8);
        let active = [true, false, true, false, false, true];
        let refit = refit_selected(&data, &template, &active).unwrap();

        let x_sub = data.x().select_columns([0usize, 2, 5].iter());
        let labels: Vec<i64> = data.groups().iter().map(|&g| g as i64).collect();
        let sub = build_dataset(data.y().clone(), x_sub, data.z().clone(), &labels).unwrap();
        let direct = iwr_fit(
            &sub,
            &template,
            &PenaltyConfig::default(),
            &default_beta_init(3),
            &template.default_theta(),
        )
        .unwrap();

        assert_eq!(refit.params.beta[0], direct.beta[0]);
        assert_eq!(refit.params.beta[2], direct.beta[1]);
        assert_eq!(refit.params.beta[5], direct.beta[2]);
        for j in [1usize, 3, 4] {
            assert_eq!(refit.params.beta[j], 0.0);
        }
        assert_eq!(refit.params.theta, direct.theta);
        assert_eq!(refit.loglik, -0.5 * direct.minus2_profiled_loglik);
    }

    #[test]
    fn empty_active_set_fits_variance_components_only() {
        let (data, template) = sparse_instance(13, 15, 4, 6, &[1.5, -2.0], 0.5, 0.8);
        let none = refit_selected(&data, &template, &[false; 6]).unwrap();
        assert!(none.converged);
        assert!(none.params.beta.iter().all(|&b| b == 0.0));
        assert!(none.loglik.is_finite());
        assert!(none.params.sigma2 > 0.0);

        // Dropping real signal costs likelihood.
        let full = refit_selected(&data, &template, &[true; 6]).unwrap();
        assert!(none.loglik < full.loglik);
    }

    #[test]
    fn refit_rejects_a_wrong_length_active_set() {
        let (data, template) = sparse_instance(13, 15, 4, 6, &[1.5, -2.0], 0.5, 0.8);
        let err = refit_selected(&data, &template, &[true; 5]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn tie_breaking_prefers_the_larger_lambda() {
        // Index 1 is the larger-lambda member of the BIC tie.
        assert_eq!(choose_index(&[10.0, 5.0, 5.0], &[true, true, true]), Some(1));
        assert_eq!(choose_index(&[1.0, 0.5], &[false, true]), Some(1));
        assert_eq!(choose_index(&[1.0, 0.5], &[false, false]), None);
        assert_eq!(choose_index(&[], &[]), None);
    }

    #[test]
    fn path_rejects_malformed_grids() {
        let (data, template) = sparse_instance(21, 6, 4, 3, &[1.0], 0.5, 0.5);
        let config = PenaltyConfig::default();
        assert!(regularization_path(&data, &template, &[], &config).is_err());
        assert!(regularization_path(&data, &template, &[1.0, 2.0], &config).is_err());
        assert!(regularization_path(&data, &template, &[1.0, 1.0], &config).is_err());
        assert!(regularization_path(&data, &template, &[1.0, 0.0], &config).is_err());
        assert!(regularization_path(&data, &template, &[f64::NAN], &config).is_err());
    }

    #[test]
    fn path_recovers_the_support_and_is_deterministic() {
        let (data, template) = sparse_instance(33, 15, 4, 6, &[1.5, -2.0], 0.5, 0.8);
        let grid = lambda_grid(0.01, 100.0, 12).unwrap();
        let config = PenaltyConfig::default();
        let path = regularization_path(&data, &template, &grid, &config).unwrap();

        assert_eq!(path.lambdas, grid);
        assert_eq!(path.fits.len(), grid.len());
        assert_eq!(path.active_sets.len(), grid.len());
        assert_eq!(path.bics.len(), grid.len());

        // BIC lands on the true support.
        let chosen_active = &path.active_sets[path.chosen_index];
        assert_eq!(chosen_active, &vec![true, true, false, false, false, false]);
        assert!(path.chosen_fit.converged);

        // Heavy shrinkage start, permissive end covering the truth.
        assert!(path.active_sets[0].iter().filter(|&&a| a).count() <= 1);
        let loosest = path.active_sets.last().unwrap();
        assert!(loosest[0] && loosest[1]);

        // The winner minimizes BIC among converged fits.
        for (i, fit) in path.fits.iter().enumerate() {
            if fit.converged {
                assert!(path.bics[path.chosen_index] <= path.bics[i]);
            }
        }

        // Stored scores match a recomputation from their parts.
        for i in 0..grid.len() {
            let refit = refit_selected(&data, &template, &path.active_sets[i]).unwrap();
            let n_active = path.active_sets[i].iter().filter(|&&a| a).count();
            let expected = bic(refit.loglik, data.n_obs(), n_active, template.theta_dim());
            assert_eq!(path.bics[i], expected);
        }

        // Same inputs, same path, bit for bit.
        let again = regularization_path(&data, &template, &grid, &config).unwrap();
        assert_eq!(again.chosen_index, path.chosen_index);
        assert_eq!(again.active_sets, path.active_sets);
        assert_eq!(again.bics, path.bics);
        assert_eq!(again.chosen_fit.params.beta, path.chosen_fit.params.beta);
    }

    #[test]
    fn parallel_cold_path_agrees_on_the_chosen_model() {
        let (data, template) = sparse_instance(33, 15, 4, 6, &[1.5, -2.0], 0.5, 0.8);
        let grid = lambda_grid(0.01, 100.0, 12).unwrap();
        let config = PenaltyConfig::default();
        let warm = regularization_path(&data, &template, &grid, &config).unwrap();
        let cold = regularization_path_cold_parallel(&data, &template, &grid, &config).unwrap();
        assert_eq!(cold.lambdas, warm.lambdas);
        assert_eq!(
            cold.active_sets[cold.chosen_index],
            warm.active_sets[warm.chosen_index]
        );
        // Refits of the same active set are bitwise reproducible.
        assert_eq!(cold.chosen_fit.params.beta, warm.chosen_fit.params.beta);
    }

    #[test]
    fn single_lambda_path_chooses_that_lambda() {
        let (data, template) = sparse_instance(21, 15, 4, 6, &[1.5, -2.0], 0.5, 0.8);
        let config = PenaltyConfig::default();
        let path = regularization_path(&data, &template, &[5.0], &config).unwrap();
        assert_eq!(path.chosen_index, 0);

        let chosen = select_model(&path).unwrap();
        assert_eq!(chosen.lambda, 5.0);
        assert_eq!(chosen.bic, path.bics[0]);
        assert_eq!(chosen.active_set, path.active_sets[0]);
        assert_eq!(
            chosen.n_active,
            chosen.active_set.iter().filter(|&&a| a).count()
        );
        assert_eq!(chosen.params.beta, path.chosen_fit.params.beta);
        assert_eq!(chosen.loglik, path.chosen_fit.loglik);
    }
}
