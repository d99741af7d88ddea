//! Runs one estimator over a sequence of GNSS epochs.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::ekf::{ekf_step_scheduled, EkfState};
use crate::error::{Error, Result};
use crate::gnss::{build_gnss_model, Epoch, NavState, ProcessNoiseConfig, P0_DIAG, STATE_DIM};
use crate::mhe::{mhe_step, Diagnostics, EstimatorState, Variant};
use crate::wls::wls_solve;

pub const DEFAULT_HORIZON: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Wls,
    Ekf,
    Mhe,
    Fgo,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Wls => "wls",
            Self::Ekf => "ekf",
            Self::Mhe => "mhe",
            Self::Fgo => "fgo",
        }
    }

    pub fn uses_horizon(self) -> bool {
        matches!(self, Self::Mhe | Self::Fgo)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wls" => Ok(Self::Wls),
            "ekf" => Ok(Self::Ekf),
            "mhe" => Ok(Self::Mhe),
            "fgo" => Ok(Self::Fgo),
            other => Err(Error::Usage(format!("unknown estimator '{other}' (expected wls, ekf, mhe or fgo)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    pub horizon: usize,
    pub process_noise: ProcessNoiseConfig,
    pub p0_diag: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            kind: EstimatorKind::Mhe,
            horizon: DEFAULT_HORIZON,
            process_noise: ProcessNoiseConfig::default(),
            p0_diag: P0_DIAG,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochEstimate {
    pub t_ms: i64,
    /// `x̂_{k|k}`.
    pub filtered: NavState,
    /// `x̂_{k+1|k}`; absent for WLS.
    pub predicted: Option<NavState>,
}

#[derive(Clone, Debug, Default)]
pub struct EstimateTrace {
    pub estimates: Vec<EpochEstimate>,
    /// Epochs WLS could not solve, with the reason.
    pub skipped: Vec<(i64, String)>,
    pub diagnostics: Diagnostics,
}

impl EstimateTrace {
    pub fn positions(&self) -> Vec<(i64, Vector3<f64>)> {
        self.estimates.iter().map(|e| (e.t_ms, e.filtered.position())).collect()
    }
}

/// Initial mean `x̄_0` from a WLS fix on the first epoch.
pub fn initial_state(epoch: &Epoch) -> Result<NavState> {
    Ok(wls_solve(epoch, None)?.state)
}

pub fn run_estimator(epochs: &[Epoch], cfg: &EstimatorConfig) -> Result<EstimateTrace> {
    if epochs.is_empty() {
        return Err(Error::EmptyInput("no epochs to process".into()));
    }
    if !(cfg.p0_diag > 0.0 && cfg.p0_diag.is_finite()) {
        return Err(Error::contract(format!("p0 diagonal must be positive, got {}", cfg.p0_diag)));
    }
    match cfg.kind {
        EstimatorKind::Wls => Ok(run_wls(epochs)),
        EstimatorKind::Ekf => run_recursive(epochs, cfg, None),
        EstimatorKind::Mhe => run_recursive(epochs, cfg, Some(Variant::MheWithArrivalCost)),
        EstimatorKind::Fgo => run_recursive(epochs, cfg, Some(Variant::FgoNoArrivalCost)),
    }
}

fn run_wls(epochs: &[Epoch]) -> EstimateTrace {
    let mut trace = EstimateTrace::default();
    let mut previous: Option<NavState> = None;
    for e in epochs {
        match wls_solve(e, previous.as_ref()) {
            Ok(sol) => {
                previous = Some(sol.state);
                trace.estimates.push(EpochEstimate { t_ms: e.t_ms, filtered: sol.state, predicted: None });
            }
            Err(err) => trace.skipped.push((e.t_ms, err.to_string())),
        }
    }
    trace
}

fn run_recursive(epochs: &[Epoch], cfg: &EstimatorConfig, variant: Option<Variant>) -> Result<EstimateTrace> {
    let x0 = initial_state(&epochs[0]).map_err(|e| e.at_epoch(0))?.to_dvector();
    let p0 = DMatrix::identity(STATE_DIM, STATE_DIM) * cfg.p0_diag;
    let system = build_gnss_model(epochs.to_vec(), cfg.process_noise)?;
    let mut trace = EstimateTrace::default();

    let mut push = |t_ms: i64, filtered: &nalgebra::DVector<f64>, predicted: &nalgebra::DVector<f64>| -> Result<()> {
        trace.estimates.push(EpochEstimate {
            t_ms,
            filtered: NavState::from_dvector(filtered)?,
            predicted: Some(NavState::from_dvector(predicted)?),
        });
        Ok(())
    };

    match variant {
        None => {
            let mut state = EkfState::new(x0, p0)?;
            for (k, e) in epochs.iter().enumerate() {
                state = ekf_step_scheduled(state, &system.measurements(k), &system, &system)?;
                push(e.t_ms, state.x_filt.as_ref().expect("set by step"), &state.x_pred)?;
            }
            Ok(trace)
        }
        Some(variant) => {
            let mut state = EstimatorState::new(variant, cfg.horizon, x0, p0)?;
            for (k, e) in epochs.iter().enumerate() {
                state = mhe_step(state, &system.measurements(k), &system, &system)?;
                push(e.t_ms, state.x_filt.as_ref().expect("set by step"), &state.x_pred)?;
            }
            trace.diagnostics = state.diagnostics;
            Ok(trace)
        }
    }
}
