//! Synthetic GNSS scenarios: truth trajectory, constellation and noisy epochs.
//!
//! Randomness comes from ChaCha20 (`rand_chacha`, seeded with `seed_from_u64`).
//! A uniform draw is `(next_u64() >> 11) · 2⁻⁵³`; Gaussian draws use the
//! Box–Muller transform on two consecutive uniforms and keep only the cosine
//! branch, so every normal sample consumes exactly two words of the stream.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Vector3};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnss::{Epoch, NavState, SatelliteObservation};
use crate::metrics::{ecef_to_geodetic, enu_to_ecef_rotation, geodetic_to_ecef, Geodetic, TruthFix};

/// Orbit radius of the satellite shell, meters.
pub const ORBIT_RADIUS_M: f64 = 26_560_000.0;
pub const ELEVATION_MASK_DEG: f64 = 15.0;
pub const MAX_GDOP: f64 = 10.0;
pub const PLACEMENT_RETRIES: usize = 100;
/// Sidereal half-day orbital rate, rad/s.
pub const ORBIT_RATE: f64 = 2.0 * PI / 43_082.0;
/// Sigmas recorded in the epochs when the configured noise is zero, so the
/// measurement covariance stays positive definite.
pub const NOMINAL_SIGMA_PR: f64 = 1.0;
pub const NOMINAL_SIGMA_PRR: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trajectory {
    Static,
    ConstantVelocity,
    WaypointTurns,
}

impl std::str::FromStr for Trajectory {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Self::Static),
            "constant_velocity" => Ok(Self::ConstantVelocity),
            "waypoint_turns" => Ok(Self::WaypointTurns),
            other => Err(Error::Usage(format!("unknown trajectory '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_epochs: usize,
    /// Sampling interval, seconds.
    pub ts: f64,
    pub n_sats: usize,
    pub sigma_pr: f64,
    pub sigma_prr: f64,
    pub trajectory: Trajectory,
    pub seed: u64,
    /// Receiver clock drift, m/s.
    pub clock_drift: f64,
    /// Move satellites on circular orbits instead of holding them fixed in ECEF.
    pub orbit_motion: bool,
    pub origin: Geodetic,
    pub start_ms: i64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_epochs: 100,
            ts: 1.0,
            n_sats: 8,
            sigma_pr: 3.0,
            sigma_prr: 0.3,
            trajectory: Trajectory::ConstantVelocity,
            seed: 1,
            clock_drift: 0.5,
            orbit_motion: false,
            origin: Geodetic { lat_deg: 37.422, lon_deg: -122.084, alt_m: 10.0 },
            start_ms: 1_600_000_000_000,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sats < 4 {
            return Err(Error::contract(format!("n_sats must be at least 4, got {}", self.n_sats)));
        }
        if self.n_epochs < 2 {
            return Err(Error::contract(format!("n_epochs must be at least 2, got {}", self.n_epochs)));
        }
        if !(self.sigma_pr >= 0.0 && self.sigma_prr >= 0.0) {
            return Err(Error::contract("sigma values must be non-negative"));
        }
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err(Error::contract("sampling interval must be positive"));
        }
        if !self.clock_drift.is_finite() {
            return Err(Error::contract("clock drift must be finite"));
        }
        Ok(())
    }
}

/// Generated scenario; `truth[k]` is the receiver state at `epochs[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub truth: Vec<NavState>,
    pub epochs: Vec<Epoch>,
}

impl Scenario {
    pub fn truth_fixes(&self) -> Result<Vec<TruthFix>> {
        self.truth
            .iter()
            .zip(&self.epochs)
            .map(|(s, e)| {
                let g = ecef_to_geodetic(&s.position())?;
                Ok(TruthFix { t_ms: e.t_ms, lat_deg: g.lat_deg, lon_deg: g.lon_deg, alt_m: g.alt_m })
            })
            .collect()
    }
}

/// Seeded stream of uniform and Gaussian samples.
pub struct SampleStream {
    rng: ChaCha20Rng,
}

impl SampleStream {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha20Rng::seed_from_u64(seed) }
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }
}

struct Satellite {
    pos0: Vector3<f64>,
    axis: Vector3<f64>,
}

impl Satellite {
    fn state(&self, t: f64, moving: bool) -> (Vector3<f64>, Vector3<f64>) {
        if !moving {
            return (self.pos0, Vector3::zeros());
        }
        let (s, c) = (ORBIT_RATE * t).sin_cos();
        let k = self.axis;
        // Rodrigues rotation; the axis is perpendicular to pos0.
        let pos = self.pos0 * c + k.cross(&self.pos0) * s;
        let vel = ORBIT_RATE * k.cross(&pos);
        (pos, vel)
    }
}

fn line_of_sight_enu(az: f64, el: f64) -> Vector3<f64> {
    Vector3::new(el.cos() * az.sin(), el.cos() * az.cos(), el.sin())
}

fn shell_intersection(user: &Vector3<f64>, dir: &Vector3<f64>) -> Vector3<f64> {
    let b = user.dot(dir);
    let d = -b + (b * b - user.norm_squared() + ORBIT_RADIUS_M * ORBIT_RADIUS_M).sqrt();
    user + dir * d
}

/// Geometric dilution of precision of a set of satellites seen from `user`.
pub fn gdop(user: &Vector3<f64>, sats: &[Vector3<f64>]) -> f64 {
    let mut h = DMatrix::zeros(sats.len(), 4);
    for (i, s) in sats.iter().enumerate() {
        let g = (user - s).normalize();
        h[(i, 0)] = g.x;
        h[(i, 1)] = g.y;
        h[(i, 2)] = g.z;
        h[(i, 3)] = 1.0;
    }
    match (h.transpose() * &h).try_inverse() {
        Some(inv) => inv.trace().sqrt(),
        None => f64::INFINITY,
    }
}

fn place_constellation(cfg: &ScenarioConfig, rng: &mut SampleStream, user: &Vector3<f64>) -> Result<Vec<Satellite>> {
    let rot = enu_to_ecef_rotation(&cfg.origin);
    let mask = ELEVATION_MASK_DEG.to_radians();
    for _ in 0..PLACEMENT_RETRIES {
        // Azimuths spread around the horizon with jitter; elevations uniform above the mask.
        let offset = rng.uniform() * 2.0 * PI;
        let sats: Vec<Satellite> = (0..cfg.n_sats)
            .map(|i| {
                let az = offset + 2.0 * PI * (i as f64 + 0.8 * rng.uniform()) / cfg.n_sats as f64;
                let el = mask + rng.uniform() * (85f64.to_radians() - mask);
                let dir = rot * line_of_sight_enu(az, el);
                let pos0 = shell_intersection(user, &dir);
                let seed_dir = Vector3::new(rng.normal(), rng.normal(), rng.normal());
                let axis = (seed_dir - pos0 * (seed_dir.dot(&pos0) / pos0.norm_squared())).normalize();
                Satellite { pos0, axis }
            })
            .collect();
        let positions: Vec<Vector3<f64>> = sats.iter().map(|s| s.pos0).collect();
        if gdop(user, &positions) < MAX_GDOP {
            return Ok(sats);
        }
    }
    Err(Error::Generation(format!(
        "no observable geometry after {PLACEMENT_RETRIES} placement attempts"
    )))
}

fn enu_velocity(cfg: &ScenarioConfig, k: usize) -> Vector3<f64> {
    match cfg.trajectory {
        Trajectory::Static => Vector3::zeros(),
        Trajectory::ConstantVelocity => Vector3::new(8.0, 6.0, 0.0),
        Trajectory::WaypointTurns => {
            let leg = k / 30;
            let heading = leg as f64 * PI / 2.0;
            Vector3::new(10.0 * heading.sin(), 10.0 * heading.cos(), 0.0)
        }
    }
}

/// Builds a deterministic scenario from `cfg`.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let mut rng = SampleStream::new(cfg.seed);
    let rot = enu_to_ecef_rotation(&cfg.origin);
    let start = geodetic_to_ecef(&cfg.origin);
    let sats = place_constellation(cfg, &mut rng, &start)?;
    let sigma_pr = if cfg.sigma_pr > 0.0 { cfg.sigma_pr } else { NOMINAL_SIGMA_PR };
    let sigma_prr = if cfg.sigma_prr > 0.0 { cfg.sigma_prr } else { NOMINAL_SIGMA_PRR };

    let mut truth = Vec::with_capacity(cfg.n_epochs);
    let mut epochs = Vec::with_capacity(cfg.n_epochs);
    let mut pos = start;
    let mut bias = 0.0;
    let mut prev_ms = None;
    for k in 0..cfg.n_epochs {
        let t_ms = cfg.start_ms + (k as f64 * cfg.ts * 1000.0).round() as i64;
        let ts = prev_ms.map_or(0.0, |p: i64| (t_ms - p) as f64 / 1000.0);
        if k > 0 {
            pos += rot * enu_velocity(cfg, k - 1) * ts;
            bias += cfg.clock_drift * ts;
        }
        let vel = rot * enu_velocity(cfg, k);
        let state = NavState::new(pos, vel, bias, cfg.clock_drift);
        let elapsed = (t_ms - cfg.start_ms) as f64 / 1000.0;

        let observations = sats
            .iter()
            .enumerate()
            .map(|(i, sat)| {
                let (sp, sv) = sat.state(elapsed, cfg.orbit_motion);
                let los = pos - sp;
                let range = los.norm();
                let g = los / range;
                let pr = range + bias + cfg.sigma_pr * rng.normal();
                let prr = (vel - sv).dot(&g) + cfg.clock_drift + cfg.sigma_prr * rng.normal();
                SatelliteObservation {
                    sat_id: format!("G{:02}", i + 1),
                    pr,
                    prr: Some(prr),
                    sat_pos: sp,
                    sat_vel: sv,
                    sigma_pr,
                    sigma_prr,
                }
            })
            .collect();
        truth.push(state);
        epochs.push(Epoch { t_ms, ts, sats: observations });
        prev_ms = Some(t_ms);
    }
    Ok(Scenario { truth, epochs })
}
