//! Recursive moving horizon estimation for nonlinear time-variant systems,
//! with EKF, sliding-window FGO and WLS baselines applied to GNSS positioning.

pub mod batch;
pub mod cli;
pub mod ekf;
pub mod error;
pub mod gnss;
pub mod ingest;
pub mod linalg;
pub mod metrics;
pub mod mhe;
pub mod pipeline;
pub mod simulate;
pub mod system_model;
pub mod systems;
pub mod verify;
pub mod wls;

pub use error::{Error, Result};
