//! Recursive moving horizon estimation.
//!
//! The horizon problem over epochs `k−N ..= k` is linearized, stacked into a
//! single weighted least-squares problem in the noise estimates, and solved in
//! closed form. Linearizing the measurement at the estimator's own prediction
//! and the dynamics at the Kalman-updated point makes the result coincide with
//! the extended Kalman filter for every horizon size; omitting the arrival cost
//! turns it into a sliding-window factor-graph estimator.

mod cost;
mod estimator;
mod horizon;
mod riccati;
mod window;

use nalgebra::DMatrix;

pub use cost::{cost_gradient, mhe_cost, states_from_noise};
pub use estimator::{mhe_step, theorem1_filter_point, Diagnostics, EstimatorState, Variant};
pub use horizon::{
    assemble_horizon, chained_transition, filtered_state, horizon_gain, lemma1_state,
    predict_state, solve_noise_estimates, ArrivalCost, HorizonSystem, NoiseSolution,
};
pub use riccati::{
    corollary21_identity_check, information_recursive, kalman_gain, lemma3_gain_decomposition,
    riccati_chain, riccati_update, riccati_via_horizon,
};
pub use window::{HorizonWindow, WindowEpoch};

/// Process and measurement noise covariances per epoch.
///
/// `process(j)` is the covariance of the transition `j → j+1`; `measurement(j)`
/// must match `meas_dim(j)` of the model it is paired with.
pub trait NoiseSchedule {
    fn process(&self, j: usize) -> DMatrix<f64>;
    fn measurement(&self, j: usize) -> DMatrix<f64>;
}

impl<S: NoiseSchedule + ?Sized> NoiseSchedule for &S {
    fn process(&self, j: usize) -> DMatrix<f64> {
        (**self).process(j)
    }
    fn measurement(&self, j: usize) -> DMatrix<f64> {
        (**self).measurement(j)
    }
}

/// Time-invariant noise statistics.
#[derive(Clone, Debug)]
pub struct ConstantNoise {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl NoiseSchedule for ConstantNoise {
    fn process(&self, _j: usize) -> DMatrix<f64> {
        self.q.clone()
    }
    fn measurement(&self, _j: usize) -> DMatrix<f64> {
        self.r.clone()
    }
}
