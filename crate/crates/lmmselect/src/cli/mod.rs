//! Command-line front end: simulate grouped data, fit one penalized model,
//! sweep a regularization path with a BIC pick and an SVG plot, and run a
//! Monte-Carlo benchmark of selection quality.
//!
//! Every artifact embeds the resolved [`RunConfig`], so a run can be
//! reproduced from any of its outputs. Given the same configuration the
//! numeric fields of every file are byte-identical across re-runs and
//! thread counts. Process exit codes: 0 on success, 2 for input problems,
//! 3 for numerical failures (see [`crate::Error::exit_code`]).

pub mod io;
pub mod plot;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive_ridge::{default_beta_init, iwr_fit, PenaltyConfig};
use crate::error::{Error, Result};
use crate::metrics::{classify, mse, summarize, ReplicationOutcome};
use crate::model::{build_dataset, group_indicator_matrix, CovarianceTemplate, LmmDataset};
use crate::selection::{lambda_grid, regularization_path, select_model, ChosenModel};
use crate::simulate::{
    default_scenario, even_group_sizes, preset_covariates, replication_seed, simulate_dataset,
    Scenario, SimulatedDataset,
};
use io::{CsvData, MethodSummary, PathRow, ReplicationRow};

/// Environment fallback for the benchmark worker count; a `--threads` flag
/// takes precedence, absence of both leaves the pool at its default size.
pub const THREADS_ENV: &str = "LMMSELECT_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "lmmselect",
    version,
    about = "Sparse fixed-effects selection in linear mixed models via an iteratively reweighted ridge penalty"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic grouped dataset; writes data.csv, truth.json,
    /// scenario.json.
    Simulate(SimulateArgs),
    /// Fit one penalized model at a fixed lambda; writes fit.json.
    Fit(FitArgs),
    /// Sweep a lambda grid and pick a model by BIC; writes path.csv,
    /// path.svg, chosen.json.
    Path(PathArgs),
    /// Monte-Carlo selection study; writes benchmark_summary.csv,
    /// zp_histogram.csv, replications.csv.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 300 observations in 90 groups, 4 signal covariates among 54, unit
    /// residual and intercept variances.
    Paper,
}

/// Selection method of a benchmark run, fixing the penalty-norm exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Iterated reweighted ridge targeting a coefficient count.
    Iwr,
    /// The same machinery with the exponent pinned at 1, an L1 analogue.
    L1,
}

impl Method {
    pub fn penalty_power(self) -> f64 {
        match self {
            Method::Iwr => 0.0,
            Method::L1 => 1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Iwr => "iwr",
            Method::L1 => "l1",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// Named scenario the other options modify.
    #[arg(long, value_enum, default_value_t = Preset::Paper)]
    pub preset: Preset,
    /// RNG seed; the benchmark derives one sub-seed per replication from it.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Number of groups.
    #[arg(long)]
    pub groups: Option<usize>,
    /// Observations per group; the preset total is spread evenly when absent.
    #[arg(long)]
    pub obs: Option<usize>,
    /// Total number of covariate columns.
    #[arg(long)]
    pub p_total: Option<usize>,
    /// Number of leading signal covariates.
    #[arg(long)]
    pub p_true: Option<usize>,
    /// Comma-separated true nonzero coefficients; implies --p-true.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub beta: Option<Vec<f64>>,
    /// Residual standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Variance of the random intercepts.
    #[arg(long)]
    pub gamma_var: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct PenaltyArgs {
    /// Penalty norm exponent in [0, 2]: 0 counts coefficients, 1 mimics the
    /// lasso, 2 is plain ridge.
    #[arg(long, default_value_t = PenaltyConfig::default().penalty_power)]
    pub penalty_power: f64,
    /// Coefficient magnitude below which a covariate counts as excluded.
    #[arg(long, default_value_t = PenaltyConfig::default().delta)]
    pub delta: f64,
    /// Approximation exponent of the weight formula.
    #[arg(long, default_value_t = PenaltyConfig::default().tau)]
    pub tau: f64,
    /// Selection-indicator cutoff for the reported active set.
    #[arg(long, default_value_t = PenaltyConfig::default().threshold)]
    pub threshold: f64,
    /// Outer-iteration budget of the reweighting loop.
    #[arg(long, default_value_t = PenaltyConfig::default().max_outer_iters)]
    pub max_outer: usize,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Smallest lambda on the grid.
    #[arg(long, default_value_t = GridSpec::default().lambda_min)]
    pub lambda_min: f64,
    /// Largest lambda on the grid.
    #[arg(long, default_value_t = GridSpec::default().lambda_max)]
    pub lambda_max: f64,
    /// Number of grid points, log-equispaced.
    #[arg(long, default_value_t = GridSpec::default().count)]
    pub lambda_count: usize,
}

#[derive(Debug, Parser)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Existing directory receiving the artifacts.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Parser)]
pub struct FitArgs {
    /// Input table with columns group, y, then covariates.
    #[arg(long)]
    pub data: PathBuf,
    /// Regularization strength.
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[command(flatten)]
    pub penalty: PenaltyArgs,
    /// Z-score the covariates before fitting; coefficients are reported on
    /// the original scale. The centering offset is not modeled, so fits
    /// differ from raw ones.
    #[arg(long)]
    pub standardize: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Parser)]
pub struct PathArgs {
    /// Input table with columns group, y, then covariates.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub penalty: PenaltyArgs,
    /// Z-score the covariates before fitting; coefficients are reported on
    /// the original scale.
    #[arg(long)]
    pub standardize: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Parser)]
pub struct BenchmarkArgs {
    /// Number of Monte-Carlo replications.
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Selection methods to compare.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Method::Iwr, Method::L1])]
    pub methods: Vec<Method>,
    /// Coefficient magnitude below which a covariate counts as excluded.
    #[arg(long, default_value_t = PenaltyConfig::default().delta)]
    pub delta: f64,
    /// Approximation exponent of the weight formula.
    #[arg(long, default_value_t = PenaltyConfig::default().tau)]
    pub tau: f64,
    /// Selection-indicator cutoff for the reported active set.
    #[arg(long, default_value_t = PenaltyConfig::default().threshold)]
    pub threshold: f64,
    /// Outer-iteration budget of the reweighting loop.
    #[arg(long, default_value_t = PenaltyConfig::default().max_outer_iters)]
    pub max_outer: usize,
    /// Worker threads; 0 or absent picks the machine default, the
    /// LMMSELECT_THREADS variable fills in when the flag is absent.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Z-score the covariates of each replication before fitting.
    #[arg(long)]
    pub standardize: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Log-equispaced lambda grid specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub count: usize,
}

impl Default for GridSpec {
    fn default() -> GridSpec {
        GridSpec {
            lambda_min: 0.01,
            lambda_max: 100.0,
            count: 25,
        }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<Vec<f64>> {
        lambda_grid(self.lambda_min, self.lambda_max, self.count)
    }
}

/// The penalty knobs exposed on the command line; remaining
/// [`PenaltyConfig`] fields keep their library defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyLevers {
    pub penalty_power: f64,
    pub delta: f64,
    pub tau: f64,
    pub threshold: f64,
    pub max_outer_iters: usize,
}

impl PenaltyLevers {
    pub fn to_config(&self, lambda: f64) -> PenaltyConfig {
        PenaltyConfig {
            lambda,
            delta: self.delta,
            penalty_power: self.penalty_power,
            tau: self.tau,
            threshold: self.threshold,
            max_outer_iters: self.max_outer_iters,
            ..PenaltyConfig::default()
        }
    }
}

impl From<&PenaltyArgs> for PenaltyLevers {
    fn from(args: &PenaltyArgs) -> PenaltyLevers {
        PenaltyLevers {
            penalty_power: args.penalty_power,
            delta: args.delta,
            tau: args.tau,
            threshold: args.threshold,
            max_outer_iters: args.max_outer,
        }
    }
}

/// Resolved configuration of one run, embedded into every artifact. The
/// output directory is deliberately not part of it: moving artifacts must
/// not change their provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum RunConfig {
    Simulate(SimulateConfig),
    Fit(FitConfig),
    Path(PathConfig),
    Benchmark(BenchmarkConfig),
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            RunConfig::Simulate(c) => c.validate(),
            RunConfig::Fit(c) => c.validate(),
            RunConfig::Path(c) => c.validate(),
            RunConfig::Benchmark(c) => c.validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub scenario: Scenario,
}

impl SimulateConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub data: PathBuf,
    pub lambda: f64,
    pub penalty: PenaltyLevers,
    pub standardize: bool,
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.penalty.to_config(self.lambda).validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    pub data: PathBuf,
    pub grid: GridSpec,
    pub penalty: PenaltyLevers,
    pub standardize: bool,
}

impl PathConfig {
    pub fn validate(&self) -> Result<()> {
        self.penalty.to_config(0.0).validate()?;
        self.grid.build().map(drop)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    /// Replication template; its `seed` field records the master seed and is
    /// replaced by a derived sub-seed for each replication.
    pub scenario: Scenario,
    pub master_seed: u64,
    pub replications: usize,
    pub grid: GridSpec,
    pub methods: Vec<Method>,
    /// Shared penalty knobs; `penalty_power` is overridden per method.
    pub penalty: PenaltyLevers,
    pub standardize: bool,
    /// Worker count; 0 means the machine default.
    pub threads: usize,
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.grid.build()?;
        self.penalty.to_config(0.0).validate()?;
        if self.replications == 0 {
            return Err(Error::InvalidArgument {
                name: "replications",
                reason: "at least one replication is required".to_string(),
            });
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument {
                name: "methods",
                reason: "no methods selected".to_string(),
            });
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(Error::InvalidArgument {
                    name: "methods",
                    reason: format!("method '{}' listed twice", m.label()),
                });
            }
        }
        Ok(())
    }
}

/// Applies the override flags to the preset scenario.
pub fn resolve_scenario(args: &ScenarioArgs) -> Result<Scenario> {
    let mut scenario = match args.preset {
        Preset::Paper => default_scenario(args.seed),
    };
    let preset_total = scenario.n_obs();
    if let Some(groups) = args.groups {
        if groups == 0 {
            return Err(Error::InvalidArgument {
                name: "groups",
                reason: "at least one group is required".to_string(),
            });
        }
        scenario.n_groups = groups;
    }
    scenario.obs_per_group = match args.obs {
        Some(per_group) => vec![per_group; scenario.n_groups],
        None => even_group_sizes(preset_total, scenario.n_groups),
    };
    if let Some(p_total) = args.p_total {
        scenario.p_total = p_total;
        scenario.covariate_specs = preset_covariates(p_total);
        if scenario.p_true > p_total {
            scenario.p_true = p_total;
            scenario.beta_true.truncate(p_total);
        }
    }
    if let Some(beta) = &args.beta {
        if let Some(p_true) = args.p_true {
            if p_true != beta.len() {
                return Err(Error::InvalidArgument {
                    name: "p_true",
                    reason: format!(
                        "--p-true {} conflicts with {} --beta values",
                        p_true,
                        beta.len()
                    ),
                });
            }
        }
        scenario.beta_true = beta.clone();
        scenario.p_true = beta.len();
    } else if let Some(p_true) = args.p_true {
        if p_true > scenario.beta_true.len() {
            return Err(Error::InvalidArgument {
                name: "p_true",
                reason: format!(
                    "the preset provides {} coefficients; pass --beta for {}",
                    scenario.beta_true.len(),
                    p_true
                ),
            });
        }
        scenario.p_true = p_true;
        scenario.beta_true.truncate(p_true);
    }
    if let Some(sigma) = args.sigma {
        scenario.sigma = sigma;
    }
    if let Some(gamma_var) = args.gamma_var {
        scenario.gamma_var = gamma_var;
    }
    scenario.validate()?;
    Ok(scenario)
}

fn resolve_threads(flag: Option<usize>) -> Result<usize> {
    if let Some(threads) = flag {
        return Ok(threads);
    }
    match std::env::var(THREADS_ENV) {
        Ok(raw) => raw.trim().parse::<usize>().map_err(|_| Error::InvalidArgument {
            name: "threads",
            reason: format!("{THREADS_ENV}='{raw}' is not a thread count"),
        }),
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(std::env::VarError::NotUnicode(_)) => Err(Error::InvalidArgument {
            name: "threads",
            reason: format!("{THREADS_ENV} is not valid unicode"),
        }),
    }
}

/// Parses the resolved CLI into a config and executes it.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => {
            let config = SimulateConfig {
                scenario: resolve_scenario(&args.scenario)?,
            };
            cmd_simulate(&config, &args.out)
        }
        Command::Fit(args) => {
            let config = FitConfig {
                data: args.data,
                lambda: args.lambda,
                penalty: PenaltyLevers::from(&args.penalty),
                standardize: args.standardize,
            };
            cmd_fit(&config, &args.out)
        }
        Command::Path(args) => {
            let config = PathConfig {
                data: args.data,
                grid: GridSpec {
                    lambda_min: args.grid.lambda_min,
                    lambda_max: args.grid.lambda_max,
                    count: args.grid.lambda_count,
                },
                penalty: PenaltyLevers::from(&args.penalty),
                standardize: args.standardize,
            };
            cmd_path(&config, &args.out)
        }
        Command::Benchmark(args) => {
            let config = BenchmarkConfig {
                scenario: resolve_scenario(&args.scenario)?,
                master_seed: args.scenario.seed,
                replications: args.reps,
                grid: GridSpec {
                    lambda_min: args.grid.lambda_min,
                    lambda_max: args.grid.lambda_max,
                    count: args.grid.lambda_count,
                },
                methods: args.methods,
                penalty: PenaltyLevers {
                    penalty_power: Method::Iwr.penalty_power(),
                    delta: args.delta,
                    tau: args.tau,
                    threshold: args.threshold,
                    max_outer_iters: args.max_outer,
                },
                standardize: args.standardize,
                threads: resolve_threads(args.threads)?,
            };
            cmd_benchmark(&config, &args.out)
        }
    }
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        return Ok(());
    }
    Err(Error::Io {
        path: dir.to_path_buf(),
        source: std::io::Error::new(
            std::io::ErrorKind::NotFound,
            "output directory does not exist",
        ),
    })
}

/// Ground truth accompanying a simulated dataset.
#[derive(Debug, Serialize, Deserialize)]
pub struct TruthReport {
    pub config: RunConfig,
    pub beta_star_star: Vec<f64>,
    pub true_active: Vec<bool>,
    /// Realized random intercepts, one per group.
    pub gamma: Vec<f64>,
}

pub fn cmd_simulate(config: &SimulateConfig, out_dir: &Path) -> Result<()> {
    config.validate()?;
    ensure_out_dir(out_dir)?;
    let run_config = RunConfig::Simulate(config.clone());
    let sim = simulate_dataset(&config.scenario)?;

    let names: Vec<String> = config
        .scenario
        .covariate_specs
        .iter()
        .map(|spec| spec.name.clone())
        .collect();
    let data_path = out_dir.join("data.csv");
    io::write_data_csv(
        &data_path,
        &run_config,
        &names,
        sim.dataset.groups(),
        sim.dataset.y(),
        sim.dataset.x(),
    )?;

    let truth = TruthReport {
        config: run_config,
        beta_star_star: sim.beta_star_star.iter().copied().collect(),
        true_active: sim.true_active.clone(),
        gamma: sim.gamma.iter().copied().collect(),
    };
    io::write_json(&out_dir.join("truth.json"), &truth)?;
    io::write_json(&out_dir.join("scenario.json"), &config.scenario)?;

    println!(
        "wrote {} ({} rows, {} covariates, {} groups), truth.json, scenario.json",
        data_path.display(),
        sim.dataset.n_obs(),
        sim.dataset.n_features(),
        sim.dataset.n_groups(),
    );
    Ok(())
}

/// Column scales removed by `--standardize`; slopes divide by `sd` on the
/// way back to the original scale.
#[derive(Debug)]
struct Standardization {
    sds: Vec<f64>,
}

fn standardize_columns(x: &DMatrix<f64>, names: &[String]) -> Result<(DMatrix<f64>, Standardization)> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument {
            name: "standardize",
            reason: "standardization needs at least two rows".to_string(),
        });
    }
    let mut out = x.clone();
    let mut sds = Vec::with_capacity(x.ncols());
    for j in 0..x.ncols() {
        let mean = x.column(j).sum() / n as f64;
        let ss: f64 = x.column(j).iter().map(|v| (v - mean).powi(2)).sum();
        let sd = (ss / (n - 1) as f64).sqrt();
        if sd == 0.0 {
            return Err(Error::InvalidArgument {
                name: "standardize",
                reason: format!("column '{}' is constant", names[j]),
            });
        }
        // Scale only, no centering: the model carries no fixed intercept,
        // so a shifted column mean cannot be absorbed elsewhere.
        for i in 0..n {
            out[(i, j)] = x[(i, j)] / sd;
        }
        sds.push(sd);
    }
    Ok((out, Standardization { sds }))
}

fn original_scale(beta: &DVector<f64>, scales: Option<&Standardization>) -> DVector<f64> {
    match scales {
        Some(s) => DVector::from_fn(beta.len(), |j, _| beta[j] / s.sds[j]),
        None => beta.clone(),
    }
}

/// Loaded and optionally standardized inputs shared by fit and path.
struct PreparedData {
    names: Vec<String>,
    data: LmmDataset,
    template: CovarianceTemplate,
    scales: Option<Standardization>,
}

fn prepare(csv: &CsvData, standardize: bool) -> Result<PreparedData> {
    let mut distinct: Vec<i64> = csv.groups.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let ranks: Vec<usize> = csv
        .groups
        .iter()
        .map(|g| distinct.binary_search(g).expect("member of its own set") + 1)
        .collect();
    let z = group_indicator_matrix(&ranks, distinct.len())?;
    let (x, scales) = if standardize {
        let (x, scales) = standardize_columns(&csv.x, &csv.names)?;
        (x, Some(scales))
    } else {
        (csv.x.clone(), None)
    };
    let data = build_dataset(csv.y.clone(), x, z, &csv.groups)?;
    let template = CovarianceTemplate::random_intercept(distinct.len())?;
    Ok(PreparedData {
        names: csv.names.clone(),
        data,
        template,
        scales,
    })
}

fn active_names(names: &[String], active: &[bool]) -> Vec<String> {
    names
        .iter()
        .zip(active.iter())
        .filter(|(_, &keep)| keep)
        .map(|(name, _)| name.clone())
        .collect()
}

/// Single-fit report; coefficients are on the original covariate scale
/// even when the fit standardized.
#[derive(Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub config: RunConfig,
    pub covariates: Vec<String>,
    pub beta: Vec<f64>,
    pub theta: Vec<f64>,
    pub sigma2: f64,
    pub selection_indicator: Vec<f64>,
    pub active_set: Vec<bool>,
    pub active_covariates: Vec<String>,
    pub minus2_profiled_loglik: f64,
    pub converged: bool,
    pub outer_iters: usize,
    pub objective_trace: Vec<f64>,
    pub retried_cold_start: bool,
    pub inner_failure: Option<String>,
}

pub fn cmd_fit(config: &FitConfig, out_dir: &Path) -> Result<()> {
    config.validate()?;
    ensure_out_dir(out_dir)?;
    let csv = io::read_data_csv(&config.data)?;
    let prepared = prepare(&csv, config.standardize)?;

    let fit = iwr_fit(
        &prepared.data,
        &prepared.template,
        &config.penalty.to_config(config.lambda),
        &default_beta_init(prepared.data.n_features()),
        &prepared.template.default_theta(),
    )?;

    let beta = original_scale(&fit.beta, prepared.scales.as_ref());
    let report = FitReport {
        config: RunConfig::Fit(config.clone()),
        covariates: prepared.names.clone(),
        beta: beta.iter().copied().collect(),
        theta: fit.theta.iter().copied().collect(),
        sigma2: fit.sigma2,
        selection_indicator: fit.selection_indicator.iter().copied().collect(),
        active_set: fit.active_set.clone(),
        active_covariates: active_names(&prepared.names, &fit.active_set),
        minus2_profiled_loglik: fit.minus2_profiled_loglik,
        converged: fit.converged,
        outer_iters: fit.outer_iters,
        objective_trace: fit.objective_trace.clone(),
        retried_cold_start: fit.retried_cold_start,
        inner_failure: fit.inner_failure.clone(),
    };
    let path = out_dir.join("fit.json");
    io::write_json(&path, &report)?;
    println!(
        "wrote {}: {} of {} covariates active, -2 profiled loglik {:.6}",
        path.display(),
        report.active_covariates.len(),
        report.covariates.len(),
        report.minus2_profiled_loglik,
    );

    if !fit.converged {
        let detail = fit
            .inner_failure
            .unwrap_or_else(|| "outer loop exhausted its iteration budget".to_string());
        return Err(Error::Optimization(format!(
            "fit did not converge ({detail}); report written anyway"
        )));
    }
    Ok(())
}

/// BIC-chosen model off a regularization path, on the original scale.
#[derive(Debug, Serialize, Deserialize)]
pub struct ChosenReport {
    pub config: RunConfig,
    pub covariates: Vec<String>,
    pub lambda: f64,
    pub active_set: Vec<bool>,
    pub active_covariates: Vec<String>,
    pub beta: Vec<f64>,
    pub theta: Vec<f64>,
    pub sigma2: f64,
    pub loglik: f64,
    pub bic: f64,
    pub n_active: usize,
}

fn chosen_report(
    config: RunConfig,
    names: &[String],
    chosen: &ChosenModel,
    scales: Option<&Standardization>,
) -> ChosenReport {
    let beta = original_scale(&chosen.params.beta, scales);
    ChosenReport {
        config,
        covariates: names.to_vec(),
        lambda: chosen.lambda,
        active_set: chosen.active_set.clone(),
        active_covariates: active_names(names, &chosen.active_set),
        beta: beta.iter().copied().collect(),
        theta: chosen.params.theta.iter().copied().collect(),
        sigma2: chosen.params.sigma2,
        loglik: chosen.loglik,
        bic: chosen.bic,
        n_active: chosen.n_active,
    }
}

pub fn cmd_path(config: &PathConfig, out_dir: &Path) -> Result<()> {
    config.validate()?;
    ensure_out_dir(out_dir)?;
    let csv = io::read_data_csv(&config.data)?;
    let prepared = prepare(&csv, config.standardize)?;
    let grid = config.grid.build()?;

    let path = regularization_path(
        &prepared.data,
        &prepared.template,
        &grid,
        &config.penalty.to_config(0.0),
    )?;
    let chosen = select_model(&path)?;

    let run_config = RunConfig::Path(config.clone());
    let scales = prepared.scales.as_ref();
    let betas: Vec<DVector<f64>> = path
        .fits
        .iter()
        .map(|fit| original_scale(&fit.beta, scales))
        .collect();

    let rows: Vec<PathRow> = (0..grid.len())
        .map(|i| PathRow {
            lambda: path.lambdas[i],
            beta: betas[i].clone(),
            n_active: path.active_sets[i].iter().filter(|&&a| a).count(),
            bic: path.bics[i],
            converged: path.fits[i].converged,
        })
        .collect();
    io::write_path_csv(&out_dir.join("path.csv"), &run_config, &prepared.names, &rows)?;

    let svg = plot::path_svg(
        &path.lambdas,
        &betas,
        &prepared.names,
        path.chosen_index,
        &chosen.active_set,
    );
    io::write_file(&out_dir.join("path.svg"), &svg)?;

    let report = chosen_report(run_config, &prepared.names, &chosen, scales);
    io::write_json(&out_dir.join("chosen.json"), &report)?;

    println!(
        "wrote path.csv, path.svg, chosen.json in {}: lambda {:.6}, {} active ({}), BIC {:.4}",
        out_dir.display(),
        chosen.lambda,
        chosen.n_active,
        report.active_covariates.join(" "),
        chosen.bic,
    );
    Ok(())
}

/// One method's outcome on one replication.
struct MethodHit {
    lambda: f64,
    n_active: usize,
    bic: f64,
    loglik: f64,
    mse: f64,
    exact_recovery: bool,
    contains_truth: bool,
    zp: f64,
    outcome: ReplicationOutcome,
}

struct RepRun {
    replication: usize,
    seed: u64,
    /// Parallel to the configured method list.
    results: Vec<std::result::Result<MethodHit, String>>,
}

fn run_method(
    sim: &SimulatedDataset,
    data: &LmmDataset,
    template: &CovarianceTemplate,
    grid: &[f64],
    config: &PenaltyConfig,
    scales: Option<&Standardization>,
) -> Result<MethodHit> {
    let path = regularization_path(data, template, grid, config)?;
    let chosen = select_model(&path)?;
    let outcome = ReplicationOutcome {
        beta_hat: original_scale(&chosen.params.beta, scales),
        active_set: chosen.active_set.clone(),
        true_active: sim.true_active.clone(),
        beta_star_star: sim.beta_star_star.clone(),
    };
    let mse = mse(&outcome.beta_hat, &outcome.beta_star_star)?;
    let (exact_recovery, contains_truth, zp) = classify(&outcome);
    Ok(MethodHit {
        lambda: chosen.lambda,
        n_active: chosen.n_active,
        bic: chosen.bic,
        loglik: chosen.loglik,
        mse,
        exact_recovery,
        contains_truth,
        zp,
        outcome,
    })
}

fn run_replication(config: &BenchmarkConfig, grid: &[f64], replication: usize) -> RepRun {
    let seed = replication_seed(config.master_seed, replication);
    let scenario = Scenario {
        seed,
        ..config.scenario.clone()
    };
    let names: Vec<String> = scenario
        .covariate_specs
        .iter()
        .map(|spec| spec.name.clone())
        .collect();

    let prepared = simulate_dataset(&scenario).and_then(|sim| {
        let (data, scales) = if config.standardize {
            let (x, scales) = standardize_columns(sim.dataset.x(), &names)?;
            (sim.dataset.with_x(x), Some(scales))
        } else {
            (sim.dataset.clone(), None)
        };
        let template = CovarianceTemplate::random_intercept(sim.dataset.n_groups())?;
        Ok((sim, data, template, scales))
    });

    let results = match &prepared {
        Err(e) => config.methods.iter().map(|_| Err(e.to_string())).collect(),
        Ok((sim, data, template, scales)) => config
            .methods
            .iter()
            .map(|&method| {
                let mut penalty = config.penalty.clone();
                penalty.penalty_power = method.penalty_power();
                run_method(sim, data, template, grid, &penalty.to_config(0.0), scales.as_ref())
                    .map_err(|e| e.to_string())
            })
            .collect(),
    };
    RepRun {
        replication,
        seed,
        results,
    }
}

pub fn cmd_benchmark(config: &BenchmarkConfig, out_dir: &Path) -> Result<()> {
    config.validate()?;
    ensure_out_dir(out_dir)?;
    let grid = config.grid.build()?;
    let run_config = RunConfig::Benchmark(config.clone());

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::InvalidArgument {
            name: "threads",
            reason: e.to_string(),
        })?;
    let runs: Vec<RepRun> = pool.install(|| {
        (0..config.replications)
            .into_par_iter()
            .map(|r| run_replication(config, &grid, r))
            .collect()
    });

    let mut rows: Vec<ReplicationRow> = Vec::new();
    let mut entries: Vec<MethodSummary> = Vec::new();
    for (m, &method) in config.methods.iter().enumerate() {
        let mut outcomes: Vec<ReplicationOutcome> = Vec::new();
        for run in &runs {
            let row = match &run.results[m] {
                Ok(hit) => {
                    outcomes.push(hit.outcome.clone());
                    ReplicationRow {
                        method: method.label(),
                        replication: run.replication,
                        seed: run.seed,
                        status: "ok".to_string(),
                        lambda: Some(hit.lambda),
                        n_active: Some(hit.n_active),
                        bic: Some(hit.bic),
                        loglik: Some(hit.loglik),
                        mse: Some(hit.mse),
                        exact_recovery: Some(hit.exact_recovery),
                        contains_truth: Some(hit.contains_truth),
                        zp: Some(hit.zp),
                        active_bits: Some(
                            hit.outcome
                                .active_set
                                .iter()
                                .map(|&a| if a { '1' } else { '0' })
                                .collect(),
                        ),
                    }
                }
                Err(message) => ReplicationRow {
                    method: method.label(),
                    replication: run.replication,
                    seed: run.seed,
                    status: format!("error: {message}"),
                    lambda: None,
                    n_active: None,
                    bic: None,
                    loglik: None,
                    mse: None,
                    exact_recovery: None,
                    contains_truth: None,
                    zp: None,
                    active_bits: None,
                },
            };
            rows.push(row);
        }
        let summary = if outcomes.is_empty() {
            None
        } else {
            Some(summarize(&outcomes)?)
        };
        entries.push(MethodSummary {
            method: method.label(),
            n_requested: config.replications,
            n_effective: outcomes.len(),
            summary,
        });
    }

    io::write_replications_csv(&out_dir.join("replications.csv"), &run_config, &rows)?;
    io::write_summary_csv(&out_dir.join("benchmark_summary.csv"), &run_config, &entries)?;
    io::write_zp_histogram_csv(&out_dir.join("zp_histogram.csv"), &run_config, &entries)?;

    println!(
        "wrote benchmark_summary.csv, zp_histogram.csv, replications.csv in {}",
        out_dir.display()
    );
    print!("{}", io::summary_text_table(&entries));
    println!();
    print!("{}", io::histogram_text_table(&entries));

    if entries.iter().all(|e| e.n_effective == 0) {
        return Err(Error::NoConvergedFit);
    }
    Ok(())
}
