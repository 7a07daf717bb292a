//! Python bindings for the selection library: grouped datasets, penalized
//! fits, the BIC-chosen regularization path, seeded simulation scenarios,
//! and the selection-quality metrics.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use lmmselect::adaptive_ridge::{default_beta_init, iwr_fit, PenaltyConfig};
use lmmselect::cli::{resolve_scenario, Preset, ScenarioArgs};
use lmmselect::metrics::{classify, ReplicationOutcome};
use lmmselect::model::{build_dataset, group_indicator_matrix, CovarianceTemplate, LmmDataset};
use lmmselect::selection::{lambda_grid, regularization_path, select_model};
use lmmselect::simulate::{replication_seed, simulate_dataset, Scenario as RustScenario};

fn to_py_err(err: lmmselect::Error) -> PyErr {
    use lmmselect::Error;
    match &err {
        Error::InvalidArgument { .. } | Error::DimensionMismatch { .. } | Error::Parse { .. } => {
            PyValueError::new_err(err.to_string())
        }
        _ => PyRuntimeError::new_err(err.to_string()),
    }
}

/// A grouped dataset with a random intercept per group.
#[pyclass(frozen)]
struct Dataset {
    data: LmmDataset,
    template: CovarianceTemplate,
    names: Vec<String>,
}

impl Dataset {
    fn from_parts(data: LmmDataset, names: Vec<String>) -> PyResult<Dataset> {
        let template = CovarianceTemplate::random_intercept(data.n_groups()).map_err(to_py_err)?;
        Ok(Dataset {
            data,
            template,
            names,
        })
    }
}

#[pymethods]
impl Dataset {
    /// Builds a dataset from a response, covariate rows, and group labels.
    /// Labels can be any integers; they are normalized by rank.
    #[new]
    #[pyo3(signature = (y, x, groups, names=None))]
    fn new(
        y: Vec<f64>,
        x: Vec<Vec<f64>>,
        groups: Vec<i64>,
        names: Option<Vec<String>>,
    ) -> PyResult<Dataset> {
        let n = y.len();
        if x.len() != n {
            return Err(PyValueError::new_err(format!(
                "x has {} rows but y has {} entries",
                x.len(),
                n
            )));
        }
        if groups.len() != n {
            return Err(PyValueError::new_err(format!(
                "groups has {} entries but y has {}",
                groups.len(),
                n
            )));
        }
        if n == 0 {
            return Err(PyValueError::new_err("the dataset must not be empty"));
        }
        let p = x[0].len();
        for (i, row) in x.iter().enumerate() {
            if row.len() != p {
                return Err(PyValueError::new_err(format!(
                    "x row {i} has {} entries, expected {p}",
                    row.len()
                )));
            }
        }
        let names = match names {
            Some(names) => {
                if names.len() != p {
                    return Err(PyValueError::new_err(format!(
                        "{} names for {p} covariate columns",
                        names.len()
                    )));
                }
                names
            }
            None => (1..=p).map(|j| format!("x{j}")).collect(),
        };

        let mut distinct = groups.clone();
        distinct.sort_unstable();
        distinct.dedup();
        // The indicator builder wants labels already normalized to
        // 1..=n_groups, by rank of the distinct values.
        let ranks: Vec<usize> = groups
            .iter()
            .map(|g| distinct.binary_search(g).expect("label drawn from groups") + 1)
            .collect();
        let z = group_indicator_matrix(&ranks, distinct.len()).map_err(to_py_err)?;
        let x = DMatrix::from_fn(n, p, |i, j| x[i][j]);
        let data = build_dataset(DVector::from_vec(y), x, z, &groups).map_err(to_py_err)?;
        Dataset::from_parts(data, names)
    }

    #[getter]
    fn n_obs(&self) -> usize {
        self.data.n_obs()
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.data.n_features()
    }

    #[getter]
    fn n_groups(&self) -> usize {
        self.data.n_groups()
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n_obs={}, n_features={}, n_groups={})",
            self.data.n_obs(),
            self.data.n_features(),
            self.data.n_groups()
        )
    }
}

/// One penalized fit at a fixed regularization strength.
#[pyclass(frozen, get_all)]
struct FitResult {
    beta: Vec<f64>,
    theta: Vec<f64>,
    sigma2: f64,
    selection_indicator: Vec<f64>,
    active: Vec<bool>,
    active_names: Vec<String>,
    converged: bool,
    outer_iters: usize,
    minus2_profiled_loglik: f64,
    inner_failure: Option<String>,
}

#[pymethods]
impl FitResult {
    fn __repr__(&self) -> String {
        format!(
            "FitResult(n_active={}, converged={}, minus2_profiled_loglik={:.6})",
            self.active.iter().filter(|&&a| a).count(),
            self.converged,
            self.minus2_profiled_loglik
        )
    }
}

/// The BIC-retained model of a regularization path.
#[pyclass(frozen, get_all)]
struct Chosen {
    lambda_: f64,
    beta: Vec<f64>,
    theta: Vec<f64>,
    sigma2: f64,
    loglik: f64,
    bic: f64,
    n_active: usize,
    active: Vec<bool>,
    active_names: Vec<String>,
}

#[pymethods]
impl Chosen {
    fn __repr__(&self) -> String {
        format!(
            "Chosen(lambda={:.6}, n_active={}, bic={:.4})",
            self.lambda_, self.n_active, self.bic
        )
    }
}

/// A full regularization path with per-lambda fits and the chosen model.
#[pyclass(frozen, get_all)]
struct Path {
    lambdas: Vec<f64>,
    betas: Vec<Vec<f64>>,
    n_active: Vec<usize>,
    bics: Vec<f64>,
    converged: Vec<bool>,
    chosen_index: usize,
    chosen: Py<Chosen>,
}

#[pymethods]
impl Path {
    fn __repr__(&self, py: Python<'_>) -> String {
        format!(
            "Path(n_lambdas={}, chosen_index={}, chosen={})",
            self.lambdas.len(),
            self.chosen_index,
            self.chosen.borrow(py).__repr__()
        )
    }
}

fn active_names(names: &[String], active: &[bool]) -> Vec<String> {
    names
        .iter()
        .zip(active.iter())
        .filter(|(_, &keep)| keep)
        .map(|(name, _)| name.clone())
        .collect()
}

fn penalty_config(
    lambda: f64,
    penalty_power: f64,
    delta: f64,
    tau: f64,
    threshold: f64,
    max_outer: usize,
) -> PenaltyConfig {
    PenaltyConfig {
        delta,
        penalty_power,
        tau,
        threshold,
        max_outer_iters: max_outer,
        ..PenaltyConfig::new(lambda)
    }
}

/// Penalized fit at one lambda. Convergence is reported on the result, not
/// raised, so a stalled fit still exposes its best iterate.
#[pyfunction]
#[pyo3(signature = (dataset, lambda_, penalty_power=0.0, delta=1e-5, tau=2.0, threshold=0.5, max_outer=100))]
#[allow(clippy::too_many_arguments)]
fn fit(
    dataset: &Dataset,
    lambda_: f64,
    penalty_power: f64,
    delta: f64,
    tau: f64,
    threshold: f64,
    max_outer: usize,
) -> PyResult<FitResult> {
    let config = penalty_config(lambda_, penalty_power, delta, tau, threshold, max_outer);
    let result = iwr_fit(
        &dataset.data,
        &dataset.template,
        &config,
        &default_beta_init(dataset.data.n_features()),
        &dataset.template.default_theta(),
    )
    .map_err(to_py_err)?;
    Ok(FitResult {
        beta: result.beta.iter().copied().collect(),
        theta: result.theta.iter().copied().collect(),
        sigma2: result.sigma2,
        selection_indicator: result.selection_indicator.iter().copied().collect(),
        active_names: active_names(&dataset.names, &result.active_set),
        active: result.active_set,
        converged: result.converged,
        outer_iters: result.outer_iters,
        minus2_profiled_loglik: result.minus2_profiled_loglik,
        inner_failure: result.inner_failure,
    })
}

/// Sweeps a lambda grid largest-first, refits each active set without the
/// penalty, scores by BIC, and returns the whole path plus the chosen model.
#[pyfunction]
#[pyo3(signature = (dataset, lambdas=None, lambda_min=0.01, lambda_max=100.0, lambda_count=25,
                    penalty_power=0.0, delta=1e-5, tau=2.0, threshold=0.5, max_outer=100))]
#[allow(clippy::too_many_arguments)]
fn path(
    py: Python<'_>,
    dataset: &Dataset,
    lambdas: Option<Vec<f64>>,
    lambda_min: f64,
    lambda_max: f64,
    lambda_count: usize,
    penalty_power: f64,
    delta: f64,
    tau: f64,
    threshold: f64,
    max_outer: usize,
) -> PyResult<Path> {
    let grid = match lambdas {
        Some(grid) => grid,
        None => lambda_grid(lambda_min, lambda_max, lambda_count).map_err(to_py_err)?,
    };
    let config = penalty_config(0.0, penalty_power, delta, tau, threshold, max_outer);
    let result =
        regularization_path(&dataset.data, &dataset.template, &grid, &config).map_err(to_py_err)?;
    let chosen = select_model(&result).map_err(to_py_err)?;
    let chosen = Chosen {
        lambda_: chosen.lambda,
        beta: chosen.params.beta.iter().copied().collect(),
        theta: chosen.params.theta.iter().copied().collect(),
        sigma2: chosen.params.sigma2,
        loglik: chosen.loglik,
        bic: chosen.bic,
        n_active: chosen.n_active,
        active_names: active_names(&dataset.names, &chosen.active_set),
        active: chosen.active_set,
    };
    Ok(Path {
        lambdas: result.lambdas.clone(),
        betas: result
            .fits
            .iter()
            .map(|f| f.beta.iter().copied().collect())
            .collect(),
        n_active: result
            .active_sets
            .iter()
            .map(|a| a.iter().filter(|&&v| v).count())
            .collect(),
        bics: result.bics.clone(),
        converged: result.fits.iter().map(|f| f.converged).collect(),
        chosen_index: result.chosen_index,
        chosen: Py::new(py, chosen)?,
    })
}

/// A simulation draw: the dataset plus the truth behind it.
#[pyclass(frozen, get_all)]
struct Simulated {
    dataset: Py<Dataset>,
    beta_true: Vec<f64>,
    true_active: Vec<bool>,
    gamma: Vec<f64>,
}

/// A seeded longitudinal scenario with known ground truth.
#[pyclass(frozen)]
struct Scenario {
    inner: RustScenario,
}

#[pymethods]
impl Scenario {
    /// The benchmark scenario: 90 groups, 300 observations, 54 covariates
    /// with 4 true signals. Every argument overrides one dial of it.
    #[staticmethod]
    #[pyo3(signature = (seed=1, groups=None, obs=None, p_total=None, p_true=None, beta=None,
                        sigma=None, gamma_var=None))]
    #[allow(clippy::too_many_arguments)]
    fn paper(
        seed: u64,
        groups: Option<usize>,
        obs: Option<usize>,
        p_total: Option<usize>,
        p_true: Option<usize>,
        beta: Option<Vec<f64>>,
        sigma: Option<f64>,
        gamma_var: Option<f64>,
    ) -> PyResult<Scenario> {
        let args = ScenarioArgs {
            preset: Preset::Paper,
            seed,
            groups,
            obs,
            p_total,
            p_true,
            beta,
            sigma,
            gamma_var,
        };
        let inner = resolve_scenario(&args).map_err(to_py_err)?;
        Ok(Scenario { inner })
    }

    /// Sub-seed for one benchmark replication, derived from a master seed.
    #[staticmethod]
    fn replication_seed(master_seed: u64, replication: usize) -> u64 {
        replication_seed(master_seed, replication)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn n_groups(&self) -> usize {
        self.inner.n_groups
    }

    #[getter]
    fn n_obs(&self) -> usize {
        self.inner.n_obs()
    }

    #[getter]
    fn p_total(&self) -> usize {
        self.inner.p_total
    }

    #[getter]
    fn p_true(&self) -> usize {
        self.inner.p_true
    }

    #[getter]
    fn beta_true(&self) -> Vec<f64> {
        self.inner.beta_true.clone()
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma
    }

    #[getter]
    fn gamma_var(&self) -> f64 {
        self.inner.gamma_var
    }

    #[getter]
    fn covariate_names(&self) -> Vec<String> {
        self.inner
            .covariate_specs
            .iter()
            .map(|spec| spec.name.clone())
            .collect()
    }

    /// Draws the dataset and truth for this scenario, deterministically in
    /// the seed.
    fn simulate(&self, py: Python<'_>) -> PyResult<Simulated> {
        let draw = simulate_dataset(&self.inner).map_err(to_py_err)?;
        let names = self.covariate_names();
        let dataset = Dataset::from_parts(draw.dataset, names)?;
        Ok(Simulated {
            dataset: Py::new(py, dataset)?,
            beta_true: draw.beta_star_star.iter().copied().collect(),
            true_active: draw.true_active,
            gamma: draw.gamma.iter().copied().collect(),
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(seed={}, n_groups={}, n_obs={}, p_total={}, p_true={})",
            self.inner.seed,
            self.inner.n_groups,
            self.inner.n_obs(),
            self.inner.p_total,
            self.inner.p_true
        )
    }
}

/// Log-spaced grid of lambdas, inclusive of both endpoints.
#[pyfunction]
#[pyo3(name = "lambda_grid")]
fn lambda_grid_py(lo: f64, hi: f64, count: usize) -> PyResult<Vec<f64>> {
    lambda_grid(lo, hi, count).map_err(to_py_err)
}

/// BIC of a fitted model: -2 loglik + log(n) * (n_active + theta_dim + 1).
#[pyfunction]
#[pyo3(name = "bic")]
fn bic_py(loglik: f64, n_obs: usize, n_active: usize, theta_dim: usize) -> f64 {
    lmmselect::selection::bic(loglik, n_obs, n_active, theta_dim)
}

/// Squared distance between an estimate and the true coefficients.
#[pyfunction]
#[pyo3(name = "mse")]
fn mse_py(beta_hat: Vec<f64>, beta_true: Vec<f64>) -> PyResult<f64> {
    lmmselect::metrics::mse(
        &DVector::from_vec(beta_hat),
        &DVector::from_vec(beta_true),
    )
    .map_err(to_py_err)
}

/// Scores one selection against the truth: (exact recovery, contains the
/// truth, fraction of true zeros estimated as exactly zero).
#[pyfunction]
fn score_selection(
    beta_hat: Vec<f64>,
    active: Vec<bool>,
    true_active: Vec<bool>,
    beta_true: Vec<f64>,
) -> PyResult<(bool, bool, f64)> {
    let outcome = ReplicationOutcome {
        beta_hat: DVector::from_vec(beta_hat),
        active_set: active,
        true_active,
        beta_star_star: DVector::from_vec(beta_true),
    };
    // summarize() validates per outcome; classify asserts, so check the
    // shape the same way by scoring through a one-element summary first.
    lmmselect::metrics::summarize(std::slice::from_ref(&outcome)).map_err(to_py_err)?;
    Ok(classify(&outcome))
}

#[pymodule]
fn lmmselect_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<FitResult>()?;
    m.add_class::<Path>()?;
    m.add_class::<Chosen>()?;
    m.add_class::<Scenario>()?;
    m.add_class::<Simulated>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(path, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_grid_py, m)?)?;
    m.add_function(wrap_pyfunction!(bic_py, m)?)?;
    m.add_function(wrap_pyfunction!(mse_py, m)?)?;
    m.add_function(wrap_pyfunction!(score_selection, m)?)?;
    Ok(())
}
