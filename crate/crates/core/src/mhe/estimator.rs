use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{check_spd, symmetrize};
use crate::system_model::{linearize_dynamics, linearize_measurement, NltvModel};

use super::horizon::{assemble_horizon, filtered_state, predict_state, solve_noise_estimates, ArrivalCost};
use super::riccati::{kalman_gain, riccati_update};
use super::window::{HorizonWindow, WindowEpoch};
use super::NoiseSchedule;

/// Which horizon cost the estimator minimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Moving horizon estimation with the Riccati-weighted arrival cost.
    MheWithArrivalCost,
    /// Filtering factor-graph optimization: the same horizon without a prior factor.
    FgoNoArrivalCost,
}

impl Variant {
    pub fn arrival_cost(self) -> ArrivalCost {
        match self {
            Variant::MheWithArrivalCost => ArrivalCost::Include,
            Variant::FgoNoArrivalCost => ArrivalCost::Omit,
        }
    }
}

/// Solver events worth reporting without aborting the run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    /// `(epoch, condition estimate)` for normal matrices above the warning threshold.
    pub ill_conditioned: Vec<(usize, f64)>,
    /// Epochs whose normal matrix needed diagonal jitter to factorize.
    pub jittered: Vec<usize>,
}

/// Recursive estimator state between epochs.
///
/// Before processing epoch `k` it holds `x̂_{k|k−1}`, the Riccati matrix `P_k`,
/// the last `N` linearized epochs, and the predictions and Riccati matrices
/// `(x̂_{j|j−1}, P_j)` for `j = max(0, k−N) ..= k`.
#[derive(Clone, Debug)]
pub struct EstimatorState {
    pub variant: Variant,
    pub horizon: usize,
    /// Index of the next epoch to process.
    pub k: usize,
    /// `x̂_{k|k−1}`.
    pub x_pred: DVector<f64>,
    /// `P_k`.
    pub p: DMatrix<f64>,
    /// `x̂_{k−1|k−1}` from the most recent step.
    pub x_filt: Option<DVector<f64>>,
    priors: VecDeque<(DVector<f64>, DMatrix<f64>)>,
    epochs: VecDeque<WindowEpoch>,
    pub diagnostics: Diagnostics,
}

impl EstimatorState {
    /// Starts at epoch 0 from the initial mean `x̄_0` and covariance `P_0`.
    pub fn new(variant: Variant, horizon: usize, x0: DVector<f64>, p0: DMatrix<f64>) -> Result<Self> {
        if p0.shape() != (x0.len(), x0.len()) {
            return Err(Error::contract(format!(
                "P0 has shape {:?}, state has length {}",
                p0.shape(),
                x0.len()
            )));
        }
        check_spd(&p0, "initial covariance P0")?;
        let p0 = symmetrize(&p0);
        Ok(Self {
            variant,
            horizon,
            k: 0,
            x_pred: x0.clone(),
            p: p0.clone(),
            x_filt: None,
            priors: VecDeque::from([(x0, p0)]),
            epochs: VecDeque::new(),
            diagnostics: Diagnostics::default(),
        })
    }

    /// Horizon actually used at the next epoch (truncated while `k < N`).
    pub fn effective_horizon(&self) -> usize {
        self.horizon.min(self.k)
    }

    /// Stored Riccati matrices `P_{k−N'}, …, P_k`.
    pub fn riccati_history(&self) -> impl Iterator<Item = &DMatrix<f64>> {
        self.priors.iter().map(|(_, p)| p)
    }
}

/// Linearization point of the dynamics at epoch `k`: `x̃_{k|k−1} + K (y_k − h_k(x̃_{k|k−1}))`.
pub fn theorem1_filter_point<M: NltvModel + ?Sized>(
    x_pred: &DVector<f64>,
    y: &DVector<f64>,
    gain: &DMatrix<f64>,
    model: &M,
    k: usize,
) -> Result<DVector<f64>> {
    if y.len() != model.meas_dim(k) || gain.shape() != (x_pred.len(), y.len()) {
        return Err(Error::contract(format!(
            "filter point inputs do not conform: x {}, y {}, K {:?}",
            x_pred.len(),
            y.len(),
            gain.shape()
        )));
    }
    Ok(x_pred + gain * (y - model.h(k, x_pred)))
}

/// Processes the measurement of epoch `state.k` and returns the state for epoch `k + 1`.
///
/// The measurement is linearized at `x̂_{k|k−1}`, the dynamics at
/// `x̂_{k|k−1} + K_k (y_k − h_k(x̂_{k|k−1}))`; the horizon of the last `N + 1`
/// epochs is then solved in closed form for `x̂_{k+1|k}`, the Riccati matrix is
/// advanced, and the window slides forward.
pub fn mhe_step<M, S>(state: EstimatorState, y: &DVector<f64>, model: &M, noise: &S) -> Result<EstimatorState>
where
    M: NltvModel + ?Sized,
    S: NoiseSchedule + ?Sized,
{
    let k = state.k;
    step_inner(state, y, model, noise).map_err(|e| e.at_epoch(k))
}

fn step_inner<M, S>(mut state: EstimatorState, y: &DVector<f64>, model: &M, noise: &S) -> Result<EstimatorState>
where
    M: NltvModel + ?Sized,
    S: NoiseSchedule + ?Sized,
{
    let k = state.k;
    let m = model.meas_dim(k);
    if y.len() != m {
        return Err(Error::contract(format!(
            "measurement has length {}, model expects {m}",
            y.len()
        )));
    }

    let meas = linearize_measurement(model, k, &state.x_pred)?;
    let r = noise.measurement(k);
    let q = noise.process(k);
    let gain = kalman_gain(&state.p, &meas.c, &r)?;
    let filter_point = &state.x_pred + &gain * (y - &meas.value);
    let dynamics = linearize_dynamics(model, k, &filter_point)?;
    let epoch = WindowEpoch {
        k,
        y: y.clone(),
        meas,
        dynamics,
        r,
        q,
    };

    let n_eff = state.effective_horizon();
    let (prior_state, prior_cov) = state.priors.front().cloned().expect("priors never empty");
    let mut epochs: Vec<WindowEpoch> = state.epochs.iter().cloned().collect();
    epochs.push(epoch.clone());
    debug_assert_eq!(epochs.len(), n_eff + 1);
    let window = HorizonWindow::new(prior_state, prior_cov, epochs)?;
    let sys = assemble_horizon(&window, state.variant.arrival_cost())?;
    let solution = solve_noise_estimates(&sys)?;
    if solution.ill_conditioned() {
        state.diagnostics.ill_conditioned.push((k, solution.condition));
    }
    if solution.jittered {
        state.diagnostics.jittered.push(k);
    }
    let x_next = predict_state(&sys, &solution.omega);
    let x_filt = filtered_state(&sys, &solution.omega);
    if !crate::linalg::is_finite_vector(&x_next) {
        return Err(Error::numeric("predicted state is not finite"));
    }

    let p_next = riccati_update(&state.p, &epoch.dynamics.a, &epoch.meas.c, &epoch.q, &epoch.r)?;

    state.epochs.push_back(epoch);
    state.priors.push_back((x_next.clone(), p_next.clone()));
    while state.epochs.len() > state.horizon {
        state.epochs.pop_front();
    }
    while state.priors.len() > state.horizon + 1 {
        state.priors.pop_front();
    }
    state.k = k + 1;
    state.x_pred = x_next;
    state.p = p_next;
    state.x_filt = Some(x_filt);
    Ok(state)
}
