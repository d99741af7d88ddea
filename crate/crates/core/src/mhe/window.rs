use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::check_spd;
use crate::system_model::{
    linearize_dynamics, linearize_measurement, LinearizedDynamics, LinearizedMeasurement,
    NltvModel,
};

use super::NoiseSchedule;

/// One epoch of a horizon: its measurement, the two linearizations and the noise statistics.
///
/// `meas` is anchored at the predicted point `x̃_{j|j−1}`, `dynamics` at the
/// filtered point `x̃_{j|j}`. `q` is the covariance of the transition `j → j+1`.
#[derive(Clone, Debug)]
pub struct WindowEpoch {
    pub k: usize,
    pub y: DVector<f64>,
    pub meas: LinearizedMeasurement,
    pub dynamics: LinearizedDynamics,
    pub r: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

impl WindowEpoch {
    pub fn lin_pred(&self) -> &DVector<f64> {
        &self.meas.anchor
    }

    pub fn lin_filt(&self) -> &DVector<f64> {
        &self.dynamics.anchor
    }

    pub fn meas_dim(&self) -> usize {
        self.y.len()
    }

    /// `y − h(x̃_{j|j−1})`.
    pub fn innovation(&self) -> DVector<f64> {
        &self.y - &self.meas.value
    }
}

/// The measurements and statistics of epochs `k−N ..= k` plus the prior entering the horizon.
#[derive(Clone, Debug)]
pub struct HorizonWindow {
    /// `x̂_{k−N|k−N−1}`.
    pub prior_state: DVector<f64>,
    /// `P_{k−N}`.
    pub prior_cov: DMatrix<f64>,
    pub epochs: Vec<WindowEpoch>,
}

impl HorizonWindow {
    pub fn new(
        prior_state: DVector<f64>,
        prior_cov: DMatrix<f64>,
        epochs: Vec<WindowEpoch>,
    ) -> Result<Self> {
        let w = Self {
            prior_state,
            prior_cov,
            epochs,
        };
        w.validate()?;
        Ok(w)
    }

    /// Builds a window by linearizing `model` at caller-chosen points.
    ///
    /// `lin_pred[i]` and `lin_filt[i]` anchor the measurement and dynamics of
    /// epoch `start + i`.
    #[allow(clippy::too_many_arguments)]
    pub fn linearize<M, S>(
        model: &M,
        noise: &S,
        start: usize,
        prior_state: DVector<f64>,
        prior_cov: DMatrix<f64>,
        ys: &[DVector<f64>],
        lin_pred: &[DVector<f64>],
        lin_filt: &[DVector<f64>],
    ) -> Result<Self>
    where
        M: NltvModel + ?Sized,
        S: NoiseSchedule + ?Sized,
    {
        if ys.len() != lin_pred.len() || ys.len() != lin_filt.len() {
            return Err(Error::contract(format!(
                "window sequences disagree in length: {} measurements, {} predicted points, {} filtered points",
                ys.len(),
                lin_pred.len(),
                lin_filt.len()
            )));
        }
        let epochs = ys
            .iter()
            .zip(lin_pred.iter().zip(lin_filt))
            .enumerate()
            .map(|(i, (y, (xp, xf)))| {
                let k = start + i;
                Ok(WindowEpoch {
                    k,
                    y: y.clone(),
                    meas: linearize_measurement(model, k, xp)?,
                    dynamics: linearize_dynamics(model, k, xf)?,
                    r: noise.measurement(k),
                    q: noise.process(k),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(prior_state, prior_cov, epochs)
    }

    /// Horizon size `N` (number of epochs minus one).
    pub fn horizon(&self) -> usize {
        self.epochs.len() - 1
    }

    /// Index of the current (last) epoch.
    pub fn k(&self) -> usize {
        self.epochs.last().map(|e| e.k).unwrap_or(0)
    }

    /// Index of the first epoch, `k − N`.
    pub fn start(&self) -> usize {
        self.epochs.first().map(|e| e.k).unwrap_or(0)
    }

    pub fn state_dim(&self) -> usize {
        self.prior_state.len()
    }

    pub fn last(&self) -> &WindowEpoch {
        self.epochs.last().expect("validated window is non-empty")
    }

    /// The window over the first `len` epochs, sharing the same prior.
    pub fn head(&self, len: usize) -> Result<Self> {
        if len == 0 || len > self.epochs.len() {
            return Err(Error::contract(format!(
                "cannot take {len} epochs from a window of {}",
                self.epochs.len()
            )));
        }
        Ok(Self {
            prior_state: self.prior_state.clone(),
            prior_cov: self.prior_cov.clone(),
            epochs: self.epochs[..len].to_vec(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs.is_empty() {
            return Err(Error::contract("horizon window has no epochs"));
        }
        let n = self.state_dim();
        if self.prior_cov.shape() != (n, n) {
            return Err(Error::contract(format!(
                "prior covariance has shape {:?}, expected ({n}, {n})",
                self.prior_cov.shape()
            )));
        }
        check_spd(&self.prior_cov, "prior covariance")?;
        for (i, e) in self.epochs.iter().enumerate() {
            if e.k != self.start() + i {
                return Err(Error::contract(format!(
                    "window epochs are not consecutive at position {i} (k={})",
                    e.k
                )));
            }
            let m = e.y.len();
            if m == 0 {
                return Err(Error::contract(format!("epoch {} has no measurements", e.k)));
            }
            if e.meas.c.shape() != (m, n) || e.r.shape() != (m, m) {
                return Err(Error::contract(format!(
                    "epoch {}: measurement of length {m} does not match C {:?} / R {:?}",
                    e.k,
                    e.meas.c.shape(),
                    e.r.shape()
                )));
            }
            if e.dynamics.a.shape() != (n, n) || e.q.shape() != (n, n) {
                return Err(Error::contract(format!(
                    "epoch {}: dynamics blocks must be {n}x{n}",
                    e.k
                )));
            }
        }
        Ok(())
    }
}
