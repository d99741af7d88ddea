//! GNSS positioning as a nonlinear time-variant system.
//!
//! State layout `[x, vx, y, vy, z, vz, δt, δf]` in ECEF meters and m/s, with
//! the receiver clock bias `δt` and drift `δf` expressed in range units
//! (meters and m/s). Dynamics are constant velocity per axis plus a two-state
//! clock; measurements are interleaved pseudorange / pseudorange-rate pairs.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{Error, Result};
use crate::mhe::NoiseSchedule;
use crate::system_model::NltvModel;

pub const STATE_DIM: usize = 8;

/// Diagonal value of the initial covariance `P_0`.
pub const P0_DIAG: f64 = 0.05;

pub const IDX_X: usize = 0;
pub const IDX_VX: usize = 1;
pub const IDX_Y: usize = 2;
pub const IDX_VY: usize = 3;
pub const IDX_Z: usize = 4;
pub const IDX_VZ: usize = 5;
pub const IDX_CLOCK_BIAS: usize = 6;
pub const IDX_CLOCK_DRIFT: usize = 7;

const POS_IDX: [usize; 3] = [IDX_X, IDX_Y, IDX_Z];
const VEL_IDX: [usize; 3] = [IDX_VX, IDX_VY, IDX_VZ];

/// Receiver navigation state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NavState(pub [f64; STATE_DIM]);

impl NavState {
    pub fn new(position: Vector3<f64>, velocity: Vector3<f64>, clock_bias: f64, clock_drift: f64) -> Self {
        let mut s = [0.0; STATE_DIM];
        for axis in 0..3 {
            s[POS_IDX[axis]] = position[axis];
            s[VEL_IDX[axis]] = velocity[axis];
        }
        s[IDX_CLOCK_BIAS] = clock_bias;
        s[IDX_CLOCK_DRIFT] = clock_drift;
        Self(s)
    }

    pub fn from_dvector(v: &DVector<f64>) -> Result<Self> {
        if v.len() != STATE_DIM {
            return Err(Error::contract(format!(
                "navigation state needs {STATE_DIM} entries, got {}",
                v.len()
            )));
        }
        let mut s = [0.0; STATE_DIM];
        s.copy_from_slice(v.as_slice());
        Ok(Self(s))
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.0[IDX_X], self.0[IDX_Y], self.0[IDX_Z])
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::new(self.0[IDX_VX], self.0[IDX_VY], self.0[IDX_VZ])
    }

    pub fn clock_bias(&self) -> f64 {
        self.0[IDX_CLOCK_BIAS]
    }

    pub fn clock_drift(&self) -> f64 {
        self.0[IDX_CLOCK_DRIFT]
    }

    /// Terrestrial sanity range for the position norm; diagnostic only.
    pub fn is_terrestrial(&self) -> bool {
        (6.2e6..=7.5e6).contains(&self.position().norm())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SatelliteObservation {
    pub sat_id: String,
    /// Corrected pseudorange, meters.
    pub pr: f64,
    /// Pseudorange rate, m/s; `None` when the receiver reported no rate.
    pub prr: Option<f64>,
    pub sat_pos: Vector3<f64>,
    pub sat_vel: Vector3<f64>,
    pub sigma_pr: f64,
    pub sigma_prr: f64,
}

impl SatelliteObservation {
    /// MEO/GEO orbit-radius sanity range; diagnostic only.
    pub fn has_plausible_orbit(&self) -> bool {
        (2.0e7..=4.5e7).contains(&self.sat_pos.norm())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Epoch {
    /// UTC milliseconds.
    pub t_ms: i64,
    /// Seconds since the previous epoch (0 for the first).
    pub ts: f64,
    pub sats: Vec<SatelliteObservation>,
}

/// Kind of a measurement row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RowKind {
    Pseudorange,
    Rate,
}

/// Row order of the stacked measurement vector: `(satellite index, kind)` per row.
///
/// Pairs are interleaved `[pr₁, prr₁, pr₂, prr₂, …]`; a satellite without a
/// rate contributes only its pseudorange row.
pub fn measurement_layout(epoch: &Epoch) -> Vec<(usize, RowKind)> {
    let mut rows = Vec::with_capacity(2 * epoch.sats.len());
    for (i, sat) in epoch.sats.iter().enumerate() {
        rows.push((i, RowKind::Pseudorange));
        if sat.prr.is_some() {
            rows.push((i, RowKind::Rate));
        }
    }
    rows
}

/// The measured values in layout order.
pub fn measurement_vector(epoch: &Epoch) -> DVector<f64> {
    let values: Vec<f64> = measurement_layout(epoch)
        .into_iter()
        .map(|(i, kind)| match kind {
            RowKind::Pseudorange => epoch.sats[i].pr,
            RowKind::Rate => epoch.sats[i].prr.unwrap_or(f64::NAN),
        })
        .collect();
    DVector::from_vec(values)
}

fn line_of_sight(state: &NavState, sat: &SatelliteObservation) -> Result<(f64, Vector3<f64>)> {
    let delta = state.position() - sat.sat_pos;
    let range = delta.norm();
    if !(range > 0.0) || !range.is_finite() {
        return Err(Error::numeric(format!(
            "receiver and satellite {} positions coincide",
            sat.sat_id
        )));
    }
    Ok((range, delta / range))
}

/// `‖p − p_sat‖ + δt`.
pub fn predict_pseudorange(state: &NavState, sat: &SatelliteObservation) -> Result<f64> {
    let (range, _) = line_of_sight(state, sat)?;
    Ok(range + state.clock_bias())
}

/// `(v − v_sat) · g + δf` with `g = (p − p_sat) / ‖p − p_sat‖`.
pub fn predict_rate(state: &NavState, sat: &SatelliteObservation) -> Result<f64> {
    let (_, g) = line_of_sight(state, sat)?;
    Ok((state.velocity() - sat.sat_vel).dot(&g) + state.clock_drift())
}

/// Predicted measurements and their Jacobian at `state`.
///
/// Rate rows carry only velocity and drift partials; the sensitivity of the
/// geometry vector to position is neglected.
pub fn measurement_model(state: &NavState, epoch: &Epoch) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if epoch.sats.is_empty() {
        return Err(Error::contract(format!("epoch {} has no satellites", epoch.t_ms)));
    }
    let layout = measurement_layout(epoch);
    let mut h = DVector::zeros(layout.len());
    let mut jac = DMatrix::zeros(layout.len(), STATE_DIM);
    for (row, (i, kind)) in layout.into_iter().enumerate() {
        let sat = &epoch.sats[i];
        let (range, g) = line_of_sight(state, sat)?;
        match kind {
            RowKind::Pseudorange => {
                h[row] = range + state.clock_bias();
                for axis in 0..3 {
                    jac[(row, POS_IDX[axis])] = g[axis];
                }
                jac[(row, IDX_CLOCK_BIAS)] = 1.0;
            }
            RowKind::Rate => {
                h[row] = (state.velocity() - sat.sat_vel).dot(&g) + state.clock_drift();
                for axis in 0..3 {
                    jac[(row, VEL_IDX[axis])] = g[axis];
                }
                jac[(row, IDX_CLOCK_DRIFT)] = 1.0;
            }
        }
    }
    Ok((h, jac))
}

/// White-noise spectral densities of the process model.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProcessNoiseConfig {
    /// Position/velocity, m²/s³.
    pub s_p: f64,
    /// Clock bias, m²/s.
    pub s_f: f64,
    /// Clock drift, m²/s³.
    pub s_g: f64,
}

impl Default for ProcessNoiseConfig {
    fn default() -> Self {
        Self {
            s_p: 1.0,
            s_f: 1.0,
            s_g: 0.1,
        }
    }
}

impl ProcessNoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.s_p, self.s_f, self.s_g];
        if vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::contract("process noise densities must be finite and non-negative"));
        }
        if vals.iter().all(|v| *v == 0.0) {
            return Err(Error::contract("process noise densities are all zero"));
        }
        Ok(())
    }
}

/// Constant-velocity transition `diag{A₀, A₀, A₀, A₀}`, `A₀ = [[1, Ts], [0, 1]]`.
pub fn transition_matrix(ts: f64) -> DMatrix<f64> {
    let mut a = DMatrix::identity(STATE_DIM, STATE_DIM);
    for block in 0..4 {
        a[(2 * block, 2 * block + 1)] = ts;
    }
    a
}

/// Process noise over an interval `ts`: three position/velocity blocks plus the clock block.
pub fn process_noise(ts: f64, cfg: &ProcessNoiseConfig) -> Result<DMatrix<f64>> {
    if !(ts > 0.0) || !ts.is_finite() {
        return Err(Error::contract(format!("sampling interval must be positive, got {ts}")));
    }
    let (t2, t3) = (ts * ts, ts * ts * ts);
    let mut q = DMatrix::zeros(STATE_DIM, STATE_DIM);
    for block in 0..3 {
        let i = 2 * block;
        q[(i, i)] = cfg.s_p * t3 / 3.0;
        q[(i, i + 1)] = cfg.s_p * t2 / 2.0;
        q[(i + 1, i)] = cfg.s_p * t2 / 2.0;
        q[(i + 1, i + 1)] = cfg.s_p * ts;
    }
    let (b, d) = (IDX_CLOCK_BIAS, IDX_CLOCK_DRIFT);
    q[(b, b)] = cfg.s_f * ts + cfg.s_g * t3 / 3.0;
    q[(b, d)] = cfg.s_g * t2 / 2.0;
    q[(d, b)] = cfg.s_g * t2 / 2.0;
    q[(d, d)] = cfg.s_g * ts;
    Ok(q)
}

/// Diagonal covariance of the interleaved measurements.
pub fn measurement_covariance(epoch: &Epoch) -> Result<DMatrix<f64>> {
    let layout = measurement_layout(epoch);
    let mut diag = DVector::zeros(layout.len());
    for (row, (i, kind)) in layout.into_iter().enumerate() {
        let sat = &epoch.sats[i];
        let sigma = match kind {
            RowKind::Pseudorange => sat.sigma_pr,
            RowKind::Rate => sat.sigma_prr,
        };
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::contract(format!(
                "satellite {} has non-positive sigma {sigma}",
                sat.sat_id
            )));
        }
        diag[row] = sigma * sigma;
    }
    Ok(DMatrix::from_diagonal(&diag))
}

/// GNSS system over a fixed sequence of epochs; serves as both model and noise schedule.
#[derive(Clone, Debug)]
pub struct GnssSystem {
    pub epochs: Vec<Epoch>,
    pub noise: ProcessNoiseConfig,
}

impl GnssSystem {
    /// Interval used for the transition `k → k+1`.
    pub fn interval_after(&self, k: usize) -> f64 {
        if let Some(next) = self.epochs.get(k + 1) {
            return next.ts;
        }
        match self.epochs.get(k) {
            Some(e) if e.ts > 0.0 => e.ts,
            _ => 1.0,
        }
    }

    pub fn measurements(&self, k: usize) -> DVector<f64> {
        measurement_vector(&self.epochs[k])
    }

    fn evaluate(&self, k: usize, x: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let state = NavState::from_dvector(x).ok()?;
        measurement_model(&state, &self.epochs[k]).ok()
    }
}

/// Validates the epochs and wraps them as a model plus noise schedule.
pub fn build_gnss_model(epochs: Vec<Epoch>, cfg: ProcessNoiseConfig) -> Result<GnssSystem> {
    cfg.validate()?;
    if epochs.is_empty() {
        return Err(Error::EmptyInput("no epochs".into()));
    }
    for pair in epochs.windows(2) {
        if pair[1].t_ms <= pair[0].t_ms || !(pair[1].ts > 0.0) {
            return Err(Error::Validation(format!(
                "epoch timestamps must increase: {} then {}",
                pair[0].t_ms, pair[1].t_ms
            )));
        }
    }
    for e in &epochs {
        if e.sats.is_empty() {
            return Err(Error::Validation(format!("epoch {} has no satellites", e.t_ms)));
        }
        measurement_covariance(e)?;
    }
    Ok(GnssSystem { epochs, noise: cfg })
}

impl NltvModel for GnssSystem {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn meas_dim(&self, k: usize) -> usize {
        measurement_layout(&self.epochs[k]).len()
    }

    fn f(&self, k: usize, x: &DVector<f64>) -> DVector<f64> {
        transition_matrix(self.interval_after(k)) * x
    }

    fn h(&self, k: usize, x: &DVector<f64>) -> DVector<f64> {
        self.evaluate(k, x)
            .map(|(h, _)| h)
            .unwrap_or_else(|| DVector::from_element(self.meas_dim(k), f64::NAN))
    }

    fn df_dx(&self, k: usize, _x: &DVector<f64>) -> DMatrix<f64> {
        transition_matrix(self.interval_after(k))
    }

    fn dh_dx(&self, k: usize, x: &DVector<f64>) -> DMatrix<f64> {
        self.evaluate(k, x)
            .map(|(_, c)| c)
            .unwrap_or_else(|| DMatrix::from_element(self.meas_dim(k), STATE_DIM, f64::NAN))
    }
}

impl NoiseSchedule for GnssSystem {
    fn process(&self, j: usize) -> DMatrix<f64> {
        process_noise(self.interval_after(j), &self.noise).expect("validated interval")
    }

    fn measurement(&self, j: usize) -> DMatrix<f64> {
        measurement_covariance(&self.epochs[j]).expect("validated sigmas")
    }
}
