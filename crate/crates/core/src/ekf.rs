//! Extended Kalman filter, written with the same information-form gain and
//! Riccati update as the horizon estimator.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{check_spd, symmetrize};
use crate::mhe::{kalman_gain, riccati_update, NoiseSchedule};
use crate::system_model::{linearize_dynamics, linearize_measurement, NltvModel};

#[derive(Clone, Debug)]
pub struct EkfState {
    /// `x̂_{k|k−1}`.
    pub x_pred: DVector<f64>,
    /// `P_k`.
    pub p: DMatrix<f64>,
    pub k: usize,
    /// `x̂_{k−1|k−1}` from the most recent step.
    pub x_filt: Option<DVector<f64>>,
}

impl EkfState {
    pub fn new(x0: DVector<f64>, p0: DMatrix<f64>) -> Result<Self> {
        if p0.shape() != (x0.len(), x0.len()) {
            return Err(Error::contract("P0 does not match state length"));
        }
        check_spd(&p0, "initial covariance P0")?;
        Ok(Self {
            x_pred: x0,
            p: symmetrize(&p0),
            k: 0,
            x_filt: None,
        })
    }
}

/// Update with `y_k`, then predict to `k + 1`.
pub fn ekf_step<M: NltvModel + ?Sized>(
    state: EkfState,
    y: &DVector<f64>,
    model: &M,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<EkfState> {
    let k = state.k;
    step_inner(state, y, model, q, r).map_err(|e| e.at_epoch(k))
}

/// [`ekf_step`] with covariances drawn from a schedule.
pub fn ekf_step_scheduled<M, S>(state: EkfState, y: &DVector<f64>, model: &M, noise: &S) -> Result<EkfState>
where
    M: NltvModel + ?Sized,
    S: NoiseSchedule + ?Sized,
{
    let k = state.k;
    ekf_step(state, y, model, &noise.process(k), &noise.measurement(k))
}

fn step_inner<M: NltvModel + ?Sized>(
    state: EkfState,
    y: &DVector<f64>,
    model: &M,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<EkfState> {
    let k = state.k;
    if y.len() != model.meas_dim(k) {
        return Err(Error::contract(format!(
            "measurement has length {}, model expects {}",
            y.len(),
            model.meas_dim(k)
        )));
    }
    let meas = linearize_measurement(model, k, &state.x_pred)?;
    let gain = kalman_gain(&state.p, &meas.c, r)?;
    let x_filt = &state.x_pred + &gain * (y - &meas.value);
    let dynamics = linearize_dynamics(model, k, &x_filt)?;
    let x_next = dynamics.value.clone();
    let p_next = riccati_update(&state.p, &dynamics.a, &meas.c, q, r)?;
    Ok(EkfState {
        x_pred: x_next,
        p: p_next,
        k: k + 1,
        x_filt: Some(x_filt),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system_model::LinearModel;

    #[test]
    fn hand_kalman_update() {
        let model = LinearModel {
            a: DMatrix::identity(1, 1),
            c: DMatrix::identity(1, 1),
        };
        let s = EkfState::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        let s = ekf_step(
            s,
            &DVector::from_element(1, 2.0),
            &model,
            &DMatrix::zeros(1, 1),
            &DMatrix::identity(1, 1),
        )
        .unwrap();
        assert!((s.x_pred[0] - 1.0).abs() < 1e-15);
        assert!((s.p[(0, 0)] - 0.5).abs() < 1e-15);
        assert_eq!(s.k, 1);
    }

    #[test]
    fn zero_innovation_propagates_prediction() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let model = LinearModel {
            a: a.clone(),
            c: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        };
        let x0 = DVector::from_vec(vec![2.0, -1.0]);
        let y = model.c.clone() * &x0;
        let s = EkfState::new(x0.clone(), DMatrix::identity(2, 2)).unwrap();
        let s = ekf_step(s, &y, &model, &(DMatrix::identity(2, 2) * 0.01), &DMatrix::identity(1, 1)).unwrap();
        assert!((s.x_pred - a * x0).amax() < 1e-15);
    }

    #[test]
    fn wrong_measurement_length_carries_epoch() {
        let model = LinearModel {
            a: DMatrix::identity(1, 1),
            c: DMatrix::identity(1, 1),
        };
        let s = EkfState::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        let err = ekf_step(s, &DVector::zeros(2), &model, &DMatrix::identity(1, 1), &DMatrix::identity(1, 1))
            .unwrap_err();
        assert!(matches!(err, Error::AtEpoch { epoch: 0, .. }));
    }
}
