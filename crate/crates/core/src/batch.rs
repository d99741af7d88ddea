//! One-shot batch least squares over a whole linearized trajectory.
//!
//! Unknowns are the states themselves (not the noise sequence), so this is an
//! independent route to the same optimum as the horizon solution when the
//! horizon covers the full history.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::spd_inverse;
use crate::mhe::{ArrivalCost, HorizonWindow};

/// Smoothed states `x_{j|k}` for every epoch of the window, plus the one-step prediction.
#[derive(Clone, Debug)]
pub struct BatchSolution {
    pub states: Vec<DVector<f64>>,
    /// `A_k x_{k|k} + u_k`.
    pub prediction: DVector<f64>,
}

/// Minimizes the prior, transition and measurement costs over `x_0, …, x_k` directly.
pub fn batch_least_squares(window: &HorizonWindow, prior: ArrivalCost) -> Result<BatchSolution> {
    window.validate()?;
    let n = window.state_dim();
    let count = window.epochs.len();
    let unknowns = n * count;
    let mut normal = DMatrix::<f64>::zeros(unknowns, unknowns);
    let mut rhs = DVector::<f64>::zeros(unknowns);

    // residual = z − J x, accumulate Jᵀ W J and Jᵀ W z.
    let mut add = |j: DMatrix<f64>, w: DMatrix<f64>, z: DVector<f64>| {
        let jt_w = j.transpose() * w;
        normal += &jt_w * j;
        rhs += jt_w * z;
    };

    if prior == ArrivalCost::Include {
        let mut j = DMatrix::zeros(n, unknowns);
        j.view_mut((0, 0), (n, n)).fill_with_identity();
        add(
            j,
            spd_inverse(&window.prior_cov, "prior covariance")?,
            window.prior_state.clone(),
        );
    }
    for (i, e) in window.epochs.iter().enumerate() {
        let m = e.y.len();
        let mut j = DMatrix::zeros(m, unknowns);
        j.view_mut((0, i * n), (m, n)).copy_from(&e.meas.c);
        add(j, spd_inverse(&e.r, "measurement noise")?, &e.y - &e.meas.d);

        if i + 1 < count {
            // x_{i+1} − A_i x_i = u_i
            let mut j = DMatrix::zeros(n, unknowns);
            j.view_mut((0, (i + 1) * n), (n, n)).fill_with_identity();
            j.view_mut((0, i * n), (n, n)).copy_from(&(-&e.dynamics.a));
            add(j, spd_inverse(&e.q, "process noise")?, e.dynamics.u.clone());
        }
    }

    let x = normal
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::numeric("batch normal equations are singular"))?;
    let states: Vec<DVector<f64>> = (0..count).map(|i| x.rows(i * n, n).into_owned()).collect();
    let last = window.last();
    let prediction = &last.dynamics.a * &states[count - 1] + &last.dynamics.u;
    Ok(BatchSolution { states, prediction })
}
