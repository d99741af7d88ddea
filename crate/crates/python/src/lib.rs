//! Python bindings: synthetic scenarios, the four estimators, scoring, identity
//! suites and geodesy helpers.

use std::path::PathBuf;

use horizon_core::cli::{self, InputSource, RunConfig};
use horizon_core::ekf::{ekf_step, EkfState};
use horizon_core::gnss::{ProcessNoiseConfig, P0_DIAG};
use horizon_core::metrics::{self, Geodetic, RunReport};
use horizon_core::mhe::{mhe_step, ConstantNoise, EstimatorState, Variant};
use horizon_core::pipeline::{self, EstimatorConfig, EstimatorKind};
use horizon_core::simulate::{self, ScenarioConfig, Trajectory};
use horizon_core::system_model::LinearModel;
use horizon_core::verify::{self, Suite};
use nalgebra::{DMatrix, DVector, Vector3};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

create_exception!(horizon_est, HorizonError, PyException);

fn err(e: horizon_core::Error) -> PyErr {
    match e {
        horizon_core::Error::Usage(msg) => PyValueError::new_err(msg),
        other => HorizonError::new_err(other.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err(format!("{what} must be a non-empty rectangular list of rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn rows(m: &DVector<f64>) -> Vec<f64> {
    m.iter().copied().collect()
}

/// Synthetic scenario settings; unspecified fields take the library defaults.
#[pyclass(get_all, set_all)]
struct ScenarioSettings {
    n_epochs: usize,
    n_sats: usize,
    sigma_pr: f64,
    sigma_prr: f64,
    seed: u64,
    trajectory: String,
}

#[pymethods]
impl ScenarioSettings {
    #[new]
    #[pyo3(signature = (n_epochs=100, n_sats=8, sigma_pr=3.0, sigma_prr=0.3, seed=1, trajectory="constant_velocity".to_string()))]
    fn new(n_epochs: usize, n_sats: usize, sigma_pr: f64, sigma_prr: f64, seed: u64, trajectory: String) -> Self {
        Self { n_epochs, n_sats, sigma_pr, sigma_prr, seed, trajectory }
    }

    fn __repr__(&self) -> String {
        format!(
            "ScenarioSettings(n_epochs={}, n_sats={}, sigma_pr={}, sigma_prr={}, seed={}, trajectory='{}')",
            self.n_epochs, self.n_sats, self.sigma_pr, self.sigma_prr, self.seed, self.trajectory
        )
    }
}

impl ScenarioSettings {
    fn to_config(&self) -> PyResult<ScenarioConfig> {
        let trajectory: Trajectory = self.trajectory.parse().map_err(err)?;
        Ok(ScenarioConfig {
            n_epochs: self.n_epochs,
            n_sats: self.n_sats,
            sigma_pr: self.sigma_pr,
            sigma_prr: self.sigma_prr,
            seed: self.seed,
            trajectory,
            ..Default::default()
        })
    }
}

/// Summary of one scored run.
#[pyclass(get_all, frozen)]
struct Report {
    estimator: String,
    horizon: Option<usize>,
    n_epochs: usize,
    n_unmatched: usize,
    horizontal_mean_m: f64,
    vertical_rmse_m: f64,
    /// `(t_ms, horizontal error, vertical error)` per matched epoch.
    per_epoch: Vec<(i64, f64, f64)>,
}

#[pymethods]
impl Report {
    fn __repr__(&self) -> String {
        format!(
            "Report(estimator='{}', horizon={}, n_epochs={}, horizontal_mean_m={:.6}, vertical_rmse_m={:.6})",
            self.estimator,
            self.horizon.map_or("None".to_string(), |h| h.to_string()),
            self.n_epochs, self.horizontal_mean_m, self.vertical_rmse_m
        )
    }
}

impl From<RunReport> for Report {
    fn from(r: RunReport) -> Self {
        Self {
            per_epoch: r.per_epoch.iter().map(|e| (e.t_ms, e.horizontal_error_m, e.vertical_error_m)).collect(),
            estimator: r.summary.estimator_name,
            horizon: r.summary.horizon,
            n_epochs: r.summary.n_epochs,
            n_unmatched: r.summary.n_unmatched,
            horizontal_mean_m: r.summary.horizontal_mean_m,
            vertical_rmse_m: r.summary.vertical_rmse_m,
        }
    }
}

fn estimator_config(estimator: &str, horizon: usize, sp: f64, sf: f64, sg: f64, p0: f64) -> PyResult<EstimatorConfig> {
    Ok(EstimatorConfig {
        kind: estimator.parse::<EstimatorKind>().map_err(err)?,
        horizon,
        process_noise: ProcessNoiseConfig { s_p: sp, s_f: sf, s_g: sg },
        p0_diag: p0,
    })
}

/// Simulates a scenario and returns `(truth, epoch_times)` with truth rows
/// `[x, vx, y, vy, z, vz, clock_bias, clock_drift]`.
#[pyfunction]
fn simulate_scenario(settings: &ScenarioSettings) -> PyResult<(Vec<Vec<f64>>, Vec<i64>)> {
    let s = simulate::generate_scenario(&settings.to_config()?).map_err(err)?;
    let truth = s.truth.iter().map(|t| t.0.to_vec()).collect();
    let times = s.epochs.iter().map(|e| e.t_ms).collect();
    Ok((truth, times))
}

/// Writes `epochs.csv` and `truth.csv` for the scenario into `out_dir`.
#[pyfunction]
fn write_scenario(settings: &ScenarioSettings, out_dir: PathBuf) -> PyResult<()> {
    cli::simulate_to(&settings.to_config()?, &out_dir).map_err(err)
}

/// Runs an estimator on a synthetic scenario and scores it against the truth.
#[pyfunction]
#[pyo3(signature = (settings, estimator="mhe", horizon=10, sp=1.0, sf=1.0, sg=0.1, p0=P0_DIAG))]
#[allow(clippy::too_many_arguments)]
fn run_synthetic(
    py: Python<'_>,
    settings: &ScenarioSettings,
    estimator: &str,
    horizon: usize,
    sp: f64,
    sf: f64,
    sg: f64,
    p0: f64,
) -> PyResult<Report> {
    let cfg = estimator_config(estimator, horizon, sp, sf, sg, p0)?;
    let scenario = settings.to_config()?;
    py.detach(|| {
        let s = simulate::generate_scenario(&scenario)?;
        let trace = pipeline::run_estimator(&s.epochs, &cfg)?;
        let horizon = cfg.kind.uses_horizon().then_some(cfg.horizon);
        metrics::score_run(&trace.positions(), &s.truth_fixes()?, cfg.kind.as_str(), horizon)
    })
    .map(Report::from)
    .map_err(err)
}

/// Runs an estimator on epoch and truth CSV files and writes the report files into `out_dir`.
#[pyfunction]
#[pyo3(signature = (epochs, truth, out_dir, estimator="mhe", horizon=10, sp=1.0, sf=1.0, sg=0.1, p0=P0_DIAG))]
#[allow(clippy::too_many_arguments)]
fn run_files(
    py: Python<'_>,
    epochs: PathBuf,
    truth: PathBuf,
    out_dir: PathBuf,
    estimator: &str,
    horizon: usize,
    sp: f64,
    sf: f64,
    sg: f64,
    p0: f64,
) -> PyResult<Report> {
    let cfg = estimator_config(estimator, horizon, sp, sf, sg, p0)?;
    let config = RunConfig {
        estimator: cfg.kind,
        horizon: cfg.horizon,
        input: InputSource::Files { epochs, truth },
        process_noise: cfg.process_noise,
        p0_diag: cfg.p0_diag,
        out_dir,
    };
    py.detach(|| cli::run(&config)).map(Report::from).map_err(err)
}

/// Largest EKF-versus-MHE position difference in meters, per horizon.
#[pyfunction]
#[pyo3(signature = (settings, horizons=vec![0, 1, 2, 5, 10]))]
fn gnss_equivalence(py: Python<'_>, settings: &ScenarioSettings, horizons: Vec<usize>) -> PyResult<Vec<(usize, f64)>> {
    let scenario = settings.to_config()?;
    py.detach(|| verify::gnss_equivalence(&scenario, &EstimatorConfig::default(), &horizons))
        .map(|eq| eq.max_by_horizon)
        .map_err(err)
}

/// Runs an identity suite; returns `(passed, max_residual, tolerance)`.
#[pyfunction]
#[pyo3(signature = (suite, seed=1, trials=None))]
fn verify_suite(py: Python<'_>, suite: &str, seed: u64, trials: Option<usize>) -> PyResult<(bool, f64, f64)> {
    let suite: Suite = suite.parse().map_err(err)?;
    let trials = trials.unwrap_or_else(|| suite.default_trials());
    let r = py.detach(|| verify::run_suite(suite, seed, trials));
    Ok((r.passed, r.max_residual, r.tolerance))
}

/// Filters `ys` through `x_{k+1} = A x_k + w`, `y_k = C x_k + v`; returns the predictions `x̂_{k+1|k}`.
///
/// `estimator` is `"ekf"`, `"mhe"` or `"fgo"`.
#[pyfunction]
#[pyo3(signature = (a, c, q, r, x0, p0, ys, estimator="mhe", horizon=5))]
#[allow(clippy::too_many_arguments)]
fn linear_filter(
    a: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    x0: Vec<f64>,
    p0: Vec<Vec<f64>>,
    ys: Vec<Vec<f64>>,
    estimator: &str,
    horizon: usize,
) -> PyResult<Vec<Vec<f64>>> {
    let model = LinearModel { a: matrix(&a, "a")?, c: matrix(&c, "c")? };
    let noise = ConstantNoise { q: matrix(&q, "q")?, r: matrix(&r, "r")? };
    let (x0, p0) = (DVector::from_vec(x0), matrix(&p0, "p0")?);
    let ys: Vec<DVector<f64>> = ys.into_iter().map(DVector::from_vec).collect();
    let mut out = Vec::with_capacity(ys.len());
    match estimator.parse::<EstimatorKind>().map_err(err)? {
        EstimatorKind::Ekf => {
            let mut s = EkfState::new(x0, p0).map_err(err)?;
            for y in &ys {
                s = ekf_step(s, y, &model, &noise.q, &noise.r).map_err(err)?;
                out.push(rows(&s.x_pred));
            }
        }
        kind @ (EstimatorKind::Mhe | EstimatorKind::Fgo) => {
            let variant = if kind == EstimatorKind::Mhe { Variant::MheWithArrivalCost } else { Variant::FgoNoArrivalCost };
            let mut s = EstimatorState::new(variant, horizon, x0, p0).map_err(err)?;
            for y in &ys {
                s = mhe_step(s, y, &model, &noise).map_err(err)?;
                out.push(rows(&s.x_pred));
            }
        }
        EstimatorKind::Wls => return Err(PyValueError::new_err("wls is not a recursive filter")),
    }
    Ok(out)
}

#[pyfunction]
fn geodetic_to_ecef(lat_deg: f64, lon_deg: f64, alt_m: f64) -> (f64, f64, f64) {
    let p = metrics::geodetic_to_ecef(&Geodetic { lat_deg, lon_deg, alt_m });
    (p.x, p.y, p.z)
}

#[pyfunction]
fn ecef_to_geodetic(x: f64, y: f64, z: f64) -> PyResult<(f64, f64, f64)> {
    let g = metrics::ecef_to_geodetic(&Vector3::new(x, y, z)).map_err(err)?;
    Ok((g.lat_deg, g.lon_deg, g.alt_m))
}

/// Ellipsoidal distance in meters between two `(lat, lon)` points in degrees.
#[pyfunction]
fn vincenty_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    metrics::vincenty_distance(a, b)
}

#[pymodule]
pub fn horizon_est(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("HorizonError", m.py().get_type::<HorizonError>())?;
    m.add_class::<ScenarioSettings>()?;
    m.add_class::<Report>()?;
    m.add_function(wrap_pyfunction!(simulate_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(write_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(run_files, m)?)?;
    m.add_function(wrap_pyfunction!(gnss_equivalence, m)?)?;
    m.add_function(wrap_pyfunction!(verify_suite, m)?)?;
    m.add_function(wrap_pyfunction!(linear_filter, m)?)?;
    m.add_function(wrap_pyfunction!(geodetic_to_ecef, m)?)?;
    m.add_function(wrap_pyfunction!(ecef_to_geodetic, m)?)?;
    m.add_function(wrap_pyfunction!(vincenty_distance, m)?)?;
    Ok(())
}
