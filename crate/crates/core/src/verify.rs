//! Seeded numerical suites checking the estimator identities.
//!
//! Each suite draws its systems from one [`SampleStream`] seeded by the caller,
//! reports the largest residual seen, and passes when that residual stays
//! below the suite's tolerance.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::batch::batch_least_squares;
use crate::ekf::{ekf_step_scheduled, EkfState};
use crate::error::{Error, Result};
use crate::linalg::rel_frobenius;
use crate::mhe::{
    assemble_horizon, corollary21_identity_check, cost_gradient, horizon_gain, lemma3_gain_decomposition,
    mhe_cost, mhe_step, riccati_chain, riccati_update, riccati_via_horizon, solve_noise_estimates,
    states_from_noise, ArrivalCost, EstimatorState, HorizonWindow, Variant,
};
use crate::pipeline::{run_estimator, EstimatorConfig, EstimatorKind};
use crate::simulate::{generate_scenario, SampleStream, ScenarioConfig};
use crate::system_model::NltvModel;
use crate::systems::{random_spd, random_system, random_vector, simulate_measurements, RandomSystem, SystemShape};

pub const THEOREM1_TOLERANCE: f64 = 1e-8;
pub const THEOREM1_HORIZONS: [usize; 5] = [0, 1, 2, 5, 10];
pub const THEOREM1_STEPS: usize = 200;
pub const IDENTITY_TOLERANCE: f64 = 1e-9;
pub const BLS_TOLERANCE: f64 = 1e-9;
pub const GRADIENT_TOLERANCE: f64 = 1e-8;
pub const PERTURBATIONS: usize = 1000;
pub const PERTURBATION_SCALE: f64 = 1e-3;
/// Position agreement required between EKF and MHE on GNSS scenarios, meters.
pub const GNSS_TOLERANCE_M: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Theorem1,
    Lemma2,
    Lemma3,
    Corollary21,
    Bls,
    Optimality,
    Gnss,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Theorem1,
        Suite::Lemma2,
        Suite::Lemma3,
        Suite::Corollary21,
        Suite::Bls,
        Suite::Optimality,
        Suite::Gnss,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Theorem1 => "theorem1",
            Suite::Lemma2 => "lemma2",
            Suite::Lemma3 => "lemma3",
            Suite::Corollary21 => "corollary21",
            Suite::Bls => "bls",
            Suite::Optimality => "optimality",
            Suite::Gnss => "gnss",
        }
    }

    pub fn default_trials(self) -> usize {
        match self {
            Suite::Theorem1 => 10,
            Suite::Lemma2 | Suite::Lemma3 | Suite::Corollary21 => 50,
            Suite::Bls | Suite::Optimality => 20,
            Suite::Gnss => 1,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.as_str() == s)
            .ok_or_else(|| Error::Usage(format!("unknown suite '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub trials: usize,
    pub max_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Trial failures that prevented a residual from being computed.
    pub errors: Vec<String>,
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: trials={} max_residual={:.3e} tolerance={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite,
            self.trials,
            self.max_residual,
            self.tolerance
        )?;
        for e in &self.errors {
            write!(f, "\n  error: {e}")?;
        }
        Ok(())
    }
}

struct Tally {
    max: f64,
    errors: Vec<String>,
}

impl Tally {
    fn new() -> Self {
        Self { max: 0.0, errors: Vec::new() }
    }

    fn record(&mut self, trial: usize, r: Result<f64>) {
        match r {
            Ok(v) if v.is_nan() => self.errors.push(format!("trial {trial}: residual is NaN")),
            Ok(v) => self.max = self.max.max(v),
            Err(e) => self.errors.push(format!("trial {trial}: {e}")),
        }
    }

    fn finish(self, suite: Suite, trials: usize, tolerance: f64) -> SuiteReport {
        SuiteReport {
            suite,
            trials,
            passed: self.errors.is_empty() && self.max < tolerance,
            max_residual: self.max,
            tolerance,
            errors: self.errors,
        }
    }
}

fn pick(rng: &mut SampleStream, lo: usize, hi: usize) -> usize {
    lo + ((rng.uniform() * (hi - lo + 1) as f64) as usize).min(hi - lo)
}

fn relative(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

/// Window over epochs `start ..= end` of a random system, with its prior taken
/// from the Riccati chain started at `p0`.
fn chained_window(
    rng: &mut SampleStream,
    sys: &RandomSystem,
    p0: &DMatrix<f64>,
    start: usize,
    end: usize,
) -> Result<HorizonWindow> {
    let n = sys.state_dim();
    let mut p = p0.clone();
    for j in 0..start {
        p = riccati_update(&p, &sys.a[j], &sys.c[j], &sys.q[j], &sys.r[j])?;
    }
    let len = end - start + 1;
    let ys: Vec<_> = (start..=end).map(|j| random_vector(rng, sys.meas_dim(j), 1.0)).collect();
    let pred: Vec<_> = (0..len).map(|_| random_vector(rng, n, 1.0)).collect();
    let filt: Vec<_> = (0..len).map(|_| random_vector(rng, n, 1.0)).collect();
    HorizonWindow::linearize(sys, sys, start, random_vector(rng, n, 1.0), p, &ys, &pred, &filt)
}

fn ltv_family(rng: &mut SampleStream, min_horizon: usize) -> (RandomSystem, DMatrix<f64>, usize, usize) {
    let n = pick(rng, 1, 5);
    let horizon = pick(rng, min_horizon, 6);
    let k = pick(rng, horizon + 1, 30);
    let sys = random_system(
        rng,
        SystemShape { state_dim: n, meas_dim: (1, n + 1), steps: k + 1, alpha: 0.0, beta: 0.0 },
    );
    let p0 = random_spd(rng, n, 0.5, 0.1);
    (sys, p0, horizon, k)
}

/// Horizon-form Riccati matrix against the chained update.
pub fn lemma2_suite(seed: u64, trials: usize) -> SuiteReport {
    let mut rng = SampleStream::new(seed);
    let mut tally = Tally::new();
    for t in 0..trials {
        let (sys, p0, horizon, k) = ltv_family(&mut rng, 0);
        let r = chained_window(&mut rng, &sys, &p0, k - horizon - 1, k - 1).and_then(|w| {
            let chained = riccati_chain(&w)?.pop().expect("chain is non-empty");
            let via = riccati_via_horizon(&w, &assemble_horizon(&w, ArrivalCost::Include)?)?;
            Ok(rel_frobenius(&via, &chained))
        });
        tally.record(t, r);
    }
    tally.finish(Suite::Lemma2, trials, IDENTITY_TOLERANCE)
}

/// Block gain decomposition against the direct horizon gain.
pub fn lemma3_suite(seed: u64, trials: usize) -> SuiteReport {
    let mut rng = SampleStream::new(seed);
    let mut tally = Tally::new();
    for t in 0..trials {
        let (sys, p0, horizon, k) = ltv_family(&mut rng, 1);
        let r = chained_window(&mut rng, &sys, &p0, k - horizon, k).and_then(|w| {
            let direct = horizon_gain(&assemble_horizon(&w, ArrivalCost::Include)?)?;
            Ok(rel_frobenius(&lemma3_gain_decomposition(&w)?, &direct))
        });
        tally.record(t, r);
    }
    tally.finish(Suite::Lemma3, trials, IDENTITY_TOLERANCE)
}

/// Filtered-covariance identity built from the previous horizon.
pub fn corollary21_suite(seed: u64, trials: usize) -> SuiteReport {
    let mut rng = SampleStream::new(seed);
    let mut tally = Tally::new();
    for t in 0..trials {
        let (sys, p0, horizon, k) = ltv_family(&mut rng, 0);
        let r = chained_window(&mut rng, &sys, &p0, k - horizon - 1, k - 1).and_then(|w| {
            let p_k = riccati_chain(&w)?.pop().expect("chain is non-empty");
            corollary21_identity_check(&p_k, &sys.c[k], &sys.r[k], &w)
        });
        tally.record(t, r);
    }
    tally.finish(Suite::Corollary21, trials, IDENTITY_TOLERANCE)
}

/// Recursive estimator with a full-history horizon against the one-shot batch solve.
///
/// Both variants are checked: the arrival-cost estimator against the batch
/// solve with the prior term, the factor-graph variant against the batch solve
/// without it.
pub fn bls_suite(seed: u64, trials: usize) -> SuiteReport {
    let mut rng = SampleStream::new(seed);
    let mut tally = Tally::new();
    for t in 0..trials {
        let n = pick(&mut rng, 1, 4);
        let steps = pick(&mut rng, 1, 50);
        let sys = random_system(
            &mut rng,
            SystemShape { state_dim: n, meas_dim: (n, n + 1), steps, alpha: 0.0, beta: 0.0 },
        );
        let p0 = random_spd(&mut rng, n, 0.5, 0.1);
        let x0 = random_vector(&mut rng, n, 1.0);
        let start = random_vector(&mut rng, n, 1.0);
        let ys = simulate_measurements(&mut rng, &sys, &sys, &start, steps);
        tally.record(t, bls_trial(&sys, &x0, &p0, &ys));
    }
    tally.finish(Suite::Bls, trials, BLS_TOLERANCE)
}

fn bls_trial(sys: &RandomSystem, x0: &DVector<f64>, p0: &DMatrix<f64>, ys: &[DVector<f64>]) -> Result<f64> {
    let n = sys.state_dim();
    let steps = ys.len();
    let mut worst: f64 = 0.0;
    for (variant, arrival) in [
        (Variant::MheWithArrivalCost, ArrivalCost::Include),
        (Variant::FgoNoArrivalCost, ArrivalCost::Omit),
    ] {
        let mut state = EstimatorState::new(variant, steps, x0.clone(), p0.clone())?;
        for k in 0..steps {
            state = mhe_step(state, &ys[k], sys, sys)?;
            let zeros = vec![DVector::zeros(n); k + 1];
            let window = HorizonWindow::linearize(sys, sys, 0, x0.clone(), p0.clone(), &ys[..=k], &zeros, &zeros)?;
            let batch = batch_least_squares(&window, arrival)?;
            let filt = state.x_filt.as_ref().expect("set by step");
            worst = worst.max(relative(filt, &batch.states[k])).max(relative(&state.x_pred, &batch.prediction));
        }
    }
    Ok(worst)
}

/// Stationarity of the horizon cost at the closed-form solution, and no random
/// perturbation of the noise estimates lowering the cost.
pub fn optimality_suite(seed: u64, trials: usize) -> SuiteReport {
    let mut rng = SampleStream::new(seed);
    let mut tally = Tally::new();
    for t in 0..trials {
        let n = pick(&mut rng, 1, 5);
        let horizon = pick(&mut rng, 0, 6);
        let sys = random_system(
            &mut rng,
            SystemShape { state_dim: n, meas_dim: (1, n + 1), steps: horizon + 1, alpha: 0.1, beta: 0.1 },
        );
        let p0 = random_spd(&mut rng, n, 0.5, 0.1);
        let r = chained_window(&mut rng, &sys, &p0, 0, horizon).and_then(|w| optimality_trial(&mut rng, &w));
        tally.record(t, r);
    }
    tally.finish(Suite::Optimality, trials, GRADIENT_TOLERANCE)
}

/// Returns the normalized gradient norm, or an error if a perturbation lowered the cost.
fn optimality_trial(rng: &mut SampleStream, window: &HorizonWindow) -> Result<f64> {
    let sys = assemble_horizon(window, ArrivalCost::Include)?;
    let omega = solve_noise_estimates(&sys)?.omega;
    let gradient = cost_gradient(&sys, &omega).norm() / (1.0 + sys.b.norm());
    let best = mhe_cost(window, &states_from_noise(window, &omega)?, ArrivalCost::Include)?;
    for i in 0..PERTURBATIONS {
        let candidate = &omega + random_vector(rng, omega.len(), PERTURBATION_SCALE);
        let cost = mhe_cost(window, &states_from_noise(window, &candidate)?, ArrivalCost::Include)?;
        if cost < best {
            return Err(Error::Validation(format!(
                "perturbation {i} lowered the cost from {best:e} to {cost:e}"
            )));
        }
    }
    Ok(gradient)
}

/// Per-step divergence between the EKF prediction and MHE predictions on random nonlinear systems.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DivergenceSample {
    pub trial: usize,
    pub horizon: usize,
    pub k: usize,
    pub relative_difference: f64,
}

/// Horizon estimator against the EKF on random nonlinear systems, every horizon of
/// [`THEOREM1_HORIZONS`], [`THEOREM1_STEPS`] steps each.
pub fn theorem1_suite(seed: u64, trials: usize) -> (SuiteReport, Vec<DivergenceSample>) {
    let mut rng = SampleStream::new(seed);
    let mut tally = Tally::new();
    let mut trace = Vec::new();
    for t in 0..trials {
        let n = pick(&mut rng, 2, 4);
        let sys = random_system(
            &mut rng,
            SystemShape { state_dim: n, meas_dim: (1, n), steps: THEOREM1_STEPS, alpha: 0.1, beta: 0.1 },
        );
        let p0 = random_spd(&mut rng, n, 0.5, 0.1);
        let x0 = random_vector(&mut rng, n, 1.0);
        let start = random_vector(&mut rng, n, 1.0);
        let ys = simulate_measurements(&mut rng, &sys, &sys, &start, THEOREM1_STEPS);
        let r = theorem1_trial(t, &sys, &x0, &p0, &ys, &mut trace);
        tally.record(t, r);
    }
    (tally.finish(Suite::Theorem1, trials, THEOREM1_TOLERANCE), trace)
}

fn theorem1_trial(
    trial: usize,
    sys: &RandomSystem,
    x0: &DVector<f64>,
    p0: &DMatrix<f64>,
    ys: &[DVector<f64>],
    trace: &mut Vec<DivergenceSample>,
) -> Result<f64> {
    let mut ekf = Vec::with_capacity(ys.len());
    let mut state = EkfState::new(x0.clone(), p0.clone())?;
    for y in ys {
        state = ekf_step_scheduled(state, y, sys, sys)?;
        ekf.push(state.x_pred.clone());
    }
    let mut worst: f64 = 0.0;
    for horizon in THEOREM1_HORIZONS {
        let mut state = EstimatorState::new(Variant::MheWithArrivalCost, horizon, x0.clone(), p0.clone())?;
        for (k, y) in ys.iter().enumerate() {
            state = mhe_step(state, y, sys, sys)?;
            let d = relative(&state.x_pred, &ekf[k]);
            worst = worst.max(d);
            trace.push(DivergenceSample { trial, horizon, k, relative_difference: d });
        }
    }
    Ok(worst)
}

/// Per-epoch position difference between the EKF and the horizon estimator on a GNSS run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GnssDivergence {
    pub t_ms: i64,
    pub horizon: usize,
    /// Distance between the filtered positions, meters.
    pub filtered_m: f64,
    /// Distance between the one-step predicted positions, meters.
    pub predicted_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GnssEquivalence {
    /// `(N, max difference in meters)` per horizon.
    pub max_by_horizon: Vec<(usize, f64)>,
    pub trace: Vec<GnssDivergence>,
}

impl GnssEquivalence {
    pub fn max_difference(&self) -> f64 {
        self.max_by_horizon.iter().map(|(_, d)| *d).fold(0.0, f64::max)
    }
}

/// Runs the EKF and the horizon estimator for each `N` on one simulated scenario.
pub fn gnss_equivalence(scenario: &ScenarioConfig, base: &EstimatorConfig, horizons: &[usize]) -> Result<GnssEquivalence> {
    let epochs = generate_scenario(scenario)?.epochs;
    let ekf = run_estimator(&epochs, &EstimatorConfig { kind: EstimatorKind::Ekf, ..base.clone() })?;
    let mut out = GnssEquivalence { max_by_horizon: Vec::new(), trace: Vec::new() };
    for &horizon in horizons {
        let mhe = run_estimator(&epochs, &EstimatorConfig { kind: EstimatorKind::Mhe, horizon, ..base.clone() })?;
        let mut worst: f64 = 0.0;
        for (a, b) in ekf.estimates.iter().zip(&mhe.estimates) {
            let filtered_m = (a.filtered.position() - b.filtered.position()).norm();
            let predicted_m = match (&a.predicted, &b.predicted) {
                (Some(pa), Some(pb)) => (pa.position() - pb.position()).norm(),
                _ => 0.0,
            };
            worst = worst.max(filtered_m).max(predicted_m);
            out.trace.push(GnssDivergence { t_ms: a.t_ms, horizon, filtered_m, predicted_m });
        }
        out.max_by_horizon.push((horizon, worst));
    }
    Ok(out)
}

/// GNSS equivalence packaged as a suite: `trials` scenarios of 200 epochs from consecutive seeds.
pub fn gnss_suite(seed: u64, trials: usize) -> (SuiteReport, Vec<GnssDivergence>) {
    let mut tally = Tally::new();
    let mut trace = Vec::new();
    for t in 0..trials {
        let scenario = ScenarioConfig { seed: seed.wrapping_add(t as u64), n_epochs: 200, ..Default::default() };
        let r = gnss_equivalence(&scenario, &EstimatorConfig::default(), &THEOREM1_HORIZONS).map(|eq| {
            trace.extend(eq.trace.iter().cloned());
            eq.max_difference()
        });
        tally.record(t, r);
    }
    (tally.finish(Suite::Gnss, trials, GNSS_TOLERANCE_M), trace)
}

/// Runs a suite, discarding any trace.
pub fn run_suite(suite: Suite, seed: u64, trials: usize) -> SuiteReport {
    match suite {
        Suite::Theorem1 => theorem1_suite(seed, trials).0,
        Suite::Lemma2 => lemma2_suite(seed, trials),
        Suite::Lemma3 => lemma3_suite(seed, trials),
        Suite::Corollary21 => corollary21_suite(seed, trials),
        Suite::Bls => bls_suite(seed, trials),
        Suite::Optimality => optimality_suite(seed, trials),
        Suite::Gnss => gnss_suite(seed, trials).0,
    }
}
