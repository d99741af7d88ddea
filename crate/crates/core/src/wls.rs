//! Snapshot weighted least squares: position, velocity and clock from one epoch.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gnss::{measurement_covariance, measurement_model, measurement_vector, Epoch, NavState, STATE_DIM};

pub const STEP_TOLERANCE_M: f64 = 1e-4;
pub const MAX_ITERATIONS: usize = 20;
const DIVERGENCE_STREAK: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct WlsSolution {
    pub state: NavState,
    pub iterations: usize,
    pub converged: bool,
    /// Weighted residual norm at the returned state, meters.
    pub residual_norm: f64,
}

fn weighted_residual_norm(residual: &DVector<f64>, weights: &DVector<f64>) -> f64 {
    residual
        .iter()
        .zip(weights.iter())
        .map(|(r, w)| r * r * w)
        .sum::<f64>()
        .sqrt()
}

/// Gauss–Newton on the stacked pseudorange and rate residuals of one epoch.
///
/// Starts from `initial` or the Earth's center with zero velocity and clock.
pub fn wls_solve(epoch: &Epoch, initial: Option<&NavState>) -> Result<WlsSolution> {
    let with_pr = epoch.sats.len();
    let with_rate = epoch.sats.iter().filter(|s| s.prr.is_some()).count();
    if with_pr < 4 {
        return Err(Error::UnderDetermined { kind: "pseudorange", available: with_pr, required: 4 });
    }
    if with_rate < 4 {
        return Err(Error::UnderDetermined { kind: "pseudorange rate", available: with_rate, required: 4 });
    }
    let y = measurement_vector(epoch);
    let weights = measurement_covariance(epoch)?.diagonal().map(|v| 1.0 / v);
    let w = DMatrix::from_diagonal(&weights);

    let mut x = initial.map(|s| s.to_dvector()).unwrap_or_else(|| DVector::zeros(STATE_DIM));
    let mut prev_norm = f64::INFINITY;
    let mut growth = 0;
    for iteration in 1..=MAX_ITERATIONS {
        let state = NavState::from_dvector(&x)?;
        let (h, c) = measurement_model(&state, epoch)?;
        let residual = &y - h;
        let norm = weighted_residual_norm(&residual, &weights);
        if norm > prev_norm {
            growth += 1;
            if growth >= DIVERGENCE_STREAK {
                return Err(Error::NonConvergence(format!(
                    "WLS residual grew for {DIVERGENCE_STREAK} consecutive iterations"
                )));
            }
        } else {
            growth = 0;
        }
        prev_norm = norm;

        let ct_w = c.transpose() * &w;
        let normal = &ct_w * &c;
        let step = normal
            .cholesky()
            .map(|ch| ch.solve(&(&ct_w * &residual)))
            .ok_or_else(|| Error::numeric("WLS normal matrix is singular (degenerate geometry)"))?;
        x += &step;
        if step.norm() < STEP_TOLERANCE_M {
            let state = NavState::from_dvector(&x)?;
            let (h, _) = measurement_model(&state, epoch)?;
            return Ok(WlsSolution {
                state,
                iterations: iteration,
                converged: true,
                residual_norm: weighted_residual_norm(&(&y - h), &weights),
            });
        }
    }
    let state = NavState::from_dvector(&x)?;
    let (h, _) = measurement_model(&state, epoch)?;
    Ok(WlsSolution {
        state,
        iterations: MAX_ITERATIONS,
        converged: false,
        residual_norm: weighted_residual_norm(&(&y - h), &weights),
    })
}
