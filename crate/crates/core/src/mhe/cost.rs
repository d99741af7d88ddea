//! The horizon cost written directly over a candidate state trajectory.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::spd_inverse;

use super::horizon::{ArrivalCost, HorizonSystem};
use super::window::HorizonWindow;

fn quad(v: &DVector<f64>, w: &DMatrix<f64>) -> f64 {
    (v.transpose() * w * v)[(0, 0)]
}

/// Arrival, state-transition and measurement costs of a candidate trajectory
/// `x_{k−N}, …, x_k` under the linearized constraints of `window`.
pub fn mhe_cost(window: &HorizonWindow, states: &[DVector<f64>], arrival: ArrivalCost) -> Result<f64> {
    if states.len() != window.epochs.len() {
        return Err(Error::contract(format!(
            "candidate trajectory has {} states, window has {} epochs",
            states.len(),
            window.epochs.len()
        )));
    }
    let n = window.state_dim();
    if let Some(bad) = states.iter().position(|x| x.len() != n) {
        return Err(Error::contract(format!("candidate state {bad} has wrong length")));
    }
    let mut cost = 0.0;
    if arrival == ArrivalCost::Include {
        let w0 = &states[0] - &window.prior_state;
        cost += quad(&w0, &spd_inverse(&window.prior_cov, "prior covariance P")?);
    }
    for (j, e) in window.epochs.iter().enumerate() {
        if j + 1 < states.len() {
            let w = &states[j + 1] - e.dynamics.apply(&states[j]);
            cost += quad(&w, &spd_inverse(&e.q, "process noise Q")?);
        }
        let v = e.meas.residual(&e.y, &states[j]);
        cost += quad(&v, &spd_inverse(&e.r, "measurement noise R")?);
    }
    Ok(cost)
}

/// Trajectory `x_{k−N|k}, …, x_{k|k}` generated by the prior and stacked noise `omega`
/// through forward recursion of the linearized dynamics.
pub fn states_from_noise(window: &HorizonWindow, omega: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
    let n = window.state_dim();
    if omega.len() != n * window.epochs.len() {
        return Err(Error::contract("noise vector length does not match window"));
    }
    let mut states = Vec::with_capacity(window.epochs.len());
    states.push(&window.prior_state + omega.rows(0, n));
    for i in 1..window.epochs.len() {
        let next = window.epochs[i - 1].dynamics.apply(&states[i - 1]) + omega.rows(i * n, n);
        states.push(next);
    }
    Ok(states)
}

/// Gradient of `Ωᵀ Q̃ Ω + (B − D Ω)ᵀ R̃ (B − D Ω)` with respect to `Ω`.
pub fn cost_gradient(sys: &HorizonSystem, omega: &DVector<f64>) -> DVector<f64> {
    let residual = &sys.b - &sys.d * omega;
    (&sys.q_tilde * omega - sys.g() * residual) * 2.0
}
