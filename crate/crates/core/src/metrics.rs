//! WGS-84 conversions, Vincenty distances and run scoring.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WGS84_A: f64 = 6_378_137.0;
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;
pub const WGS84_B: f64 = WGS84_A * (1.0 - WGS84_F);
const E2: f64 = WGS84_F * (2.0 - WGS84_F);

/// Maximum distance between an estimate and its truth timestamp when pairing.
pub const PAIRING_TOLERANCE_MS: i64 = 500;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geodetic {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub alt_m: f64,
}

pub fn geodetic_to_ecef(g: &Geodetic) -> Vector3<f64> {
    let (lat, lon) = (g.lat_deg.to_radians(), g.lon_deg.to_radians());
    let n = WGS84_A / (1.0 - E2 * lat.sin().powi(2)).sqrt();
    Vector3::new(
        (n + g.alt_m) * lat.cos() * lon.cos(),
        (n + g.alt_m) * lat.cos() * lon.sin(),
        (n * (1.0 - E2) + g.alt_m) * lat.sin(),
    )
}

/// ECEF to geodetic by fixed-point iteration on latitude (converged below 1e-12 rad).
pub fn ecef_to_geodetic(p: &Vector3<f64>) -> Result<Geodetic> {
    if !(p.norm() > 1e5) {
        return Err(Error::contract("ECEF point too close to the geocenter"));
    }
    let rho = p.x.hypot(p.y);
    let lon = if rho == 0.0 { 0.0 } else { p.y.atan2(p.x) };
    let mut lat = p.z.atan2(rho * (1.0 - E2));
    for _ in 0..50 {
        let n = WGS84_A / (1.0 - E2 * lat.sin().powi(2)).sqrt();
        let alt = if lat.cos().abs() > 1e-10 {
            rho / lat.cos() - n
        } else {
            p.z.abs() / lat.sin().abs() - n * (1.0 - E2)
        };
        let next = p.z.atan2(rho * (1.0 - E2 * n / (n + alt)));
        let done = (next - lat).abs() < 1e-12;
        lat = next;
        if done {
            break;
        }
    }
    let (s, c) = lat.sin_cos();
    let n = WGS84_A / (1.0 - E2 * s * s).sqrt();
    // altitude formula well conditioned at every latitude
    let alt = rho * c + p.z * s - WGS84_A * WGS84_A / n;
    Ok(Geodetic {
        lat_deg: lat.to_degrees(),
        lon_deg: lon.to_degrees(),
        alt_m: alt,
    })
}

fn ecef_to_ned_rotation(reference: &Geodetic) -> Matrix3<f64> {
    let (sl, cl) = reference.lat_deg.to_radians().sin_cos();
    let (so, co) = reference.lon_deg.to_radians().sin_cos();
    Matrix3::new(
        -sl * co, -sl * so, cl, //
        -so, co, 0.0, //
        -cl * co, -cl * so, -sl,
    )
}

/// Local north/east/down displacement of `p` relative to `reference`.
pub fn ecef_to_ned(p: &Vector3<f64>, reference: &Geodetic) -> Vector3<f64> {
    ecef_to_ned_rotation(reference) * (p - geodetic_to_ecef(reference))
}

/// Local east/north/up to ECEF rotation (columns are the ENU axes).
pub fn enu_to_ecef_rotation(reference: &Geodetic) -> Matrix3<f64> {
    let (sl, cl) = reference.lat_deg.to_radians().sin_cos();
    let (so, co) = reference.lon_deg.to_radians().sin_cos();
    Matrix3::new(
        -so, -sl * co, cl * co, //
        co, -sl * so, cl * so, //
        0.0, cl, sl,
    )
}

/// Result of a Vincenty inverse computation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeodesicDistance {
    pub meters: f64,
    /// False when the iteration failed (nearly antipodal points) and the bisection fallback was used.
    pub converged: bool,
}

struct LambdaTerms {
    sigma: f64,
    sin_sigma: f64,
    cos_sigma: f64,
    cos_sq_alpha: f64,
    cos_2sigma_m: f64,
    next_lambda: f64,
}

fn lambda_terms(lambda: f64, l: f64, sin_u1: f64, cos_u1: f64, sin_u2: f64, cos_u2: f64) -> LambdaTerms {
    let (sin_l, cos_l) = lambda.sin_cos();
    let sin_sigma = ((cos_u2 * sin_l).powi(2) + (cos_u1 * sin_u2 - sin_u1 * cos_u2 * cos_l).powi(2)).sqrt();
    let cos_sigma = sin_u1 * sin_u2 + cos_u1 * cos_u2 * cos_l;
    let sigma = sin_sigma.atan2(cos_sigma);
    let sin_alpha = if sin_sigma == 0.0 { 0.0 } else { cos_u1 * cos_u2 * sin_l / sin_sigma };
    let cos_sq_alpha = 1.0 - sin_alpha * sin_alpha;
    let cos_2sigma_m = if cos_sq_alpha == 0.0 {
        0.0
    } else {
        cos_sigma - 2.0 * sin_u1 * sin_u2 / cos_sq_alpha
    };
    let c = WGS84_F / 16.0 * cos_sq_alpha * (4.0 + WGS84_F * (4.0 - 3.0 * cos_sq_alpha));
    let next_lambda = l
        + (1.0 - c)
            * WGS84_F
            * sin_alpha
            * (sigma + c * sin_sigma * (cos_2sigma_m + c * cos_sigma * (-1.0 + 2.0 * cos_2sigma_m * cos_2sigma_m)));
    LambdaTerms {
        sigma,
        sin_sigma,
        cos_sigma,
        cos_sq_alpha,
        cos_2sigma_m,
        next_lambda,
    }
}

fn geodesic_length(t: &LambdaTerms) -> f64 {
    let u_sq = t.cos_sq_alpha * (WGS84_A * WGS84_A - WGS84_B * WGS84_B) / (WGS84_B * WGS84_B);
    let big_a = 1.0 + u_sq / 16384.0 * (4096.0 + u_sq * (-768.0 + u_sq * (320.0 - 175.0 * u_sq)));
    let big_b = u_sq / 1024.0 * (256.0 + u_sq * (-128.0 + u_sq * (74.0 - 47.0 * u_sq)));
    let c2 = t.cos_2sigma_m;
    let delta_sigma = big_b
        * t.sin_sigma
        * (c2
            + big_b / 4.0
                * (t.cos_sigma * (-1.0 + 2.0 * c2 * c2)
                    - big_b / 6.0 * c2 * (-3.0 + 4.0 * t.sin_sigma * t.sin_sigma) * (-3.0 + 4.0 * c2 * c2)));
    WGS84_B * big_a * (t.sigma - delta_sigma)
}

/// Inverse geodesic distance on WGS-84 between two `(lat, lon)` points in degrees.
pub fn vincenty_inverse(a: (f64, f64), b: (f64, f64)) -> GeodesicDistance {
    let l = (b.1 - a.1).to_radians();
    let u1 = ((1.0 - WGS84_F) * a.0.to_radians().tan()).atan();
    let u2 = ((1.0 - WGS84_F) * b.0.to_radians().tan()).atan();
    let (sin_u1, cos_u1) = u1.sin_cos();
    let (sin_u2, cos_u2) = u2.sin_cos();

    let mut lambda = l;
    for _ in 0..200 {
        let t = lambda_terms(lambda, l, sin_u1, cos_u1, sin_u2, cos_u2);
        if t.sin_sigma == 0.0 {
            return GeodesicDistance { meters: 0.0, converged: true };
        }
        let done = (t.next_lambda - lambda).abs() < 1e-12;
        lambda = t.next_lambda;
        if done {
            let t = lambda_terms(lambda, l, sin_u1, cos_u1, sin_u2, cos_u2);
            return GeodesicDistance { meters: geodesic_length(&t), converged: true };
        }
    }

    // Bisection on the fixed-point residual of λ over a bracket of width πf around L.
    let residual = |lam: f64| lambda_terms(lam, l, sin_u1, cos_u1, sin_u2, cos_u2).next_lambda - lam;
    let span = PI * WGS84_F * 1.01;
    let (mut lo, mut hi) = (l - span, l + span);
    let mut r_lo = residual(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let r_mid = residual(mid);
        if (r_mid > 0.0) == (r_lo > 0.0) {
            lo = mid;
            r_lo = r_mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let t = lambda_terms(0.5 * (lo + hi), l, sin_u1, cos_u1, sin_u2, cos_u2);
    GeodesicDistance { meters: geodesic_length(&t), converged: false }
}

pub fn vincenty_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    vincenty_inverse(a, b).meters
}

/// Ground-truth fix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TruthFix {
    pub t_ms: i64,
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub alt_m: f64,
}

impl TruthFix {
    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.lat_deg) || !(-180.0..=180.0).contains(&self.lon_deg) {
            return Err(Error::Validation(format!(
                "truth fix at {} has out-of-range coordinates ({}, {})",
                self.t_ms, self.lat_deg, self.lon_deg
            )));
        }
        if !self.alt_m.is_finite() {
            return Err(Error::Validation(format!("truth fix at {} has non-finite altitude", self.t_ms)));
        }
        Ok(())
    }

    pub fn geodetic(&self) -> Geodetic {
        Geodetic { lat_deg: self.lat_deg, lon_deg: self.lon_deg, alt_m: self.alt_m }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochError {
    #[serde(rename = "t")]
    pub t_ms: i64,
    pub est_ecef: [f64; 3],
    pub est_geodetic: Geodetic,
    /// North, east, down error relative to truth, meters.
    pub ned_error: [f64; 3],
    pub horizontal_error_m: f64,
    pub vertical_error_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub estimator_name: String,
    pub horizon: Option<usize>,
    pub n_epochs: usize,
    pub n_unmatched: usize,
    pub horizontal_mean_m: f64,
    pub vertical_rmse_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub summary: RunSummary,
    pub per_epoch: Vec<EpochError>,
}

fn nearest_truth(truth: &[TruthFix], t: i64) -> Option<&TruthFix> {
    let idx = truth.partition_point(|f| f.t_ms < t);
    let candidates = [idx.checked_sub(1), Some(idx)];
    candidates
        .into_iter()
        .flatten()
        .filter_map(|i| truth.get(i))
        .filter(|f| (f.t_ms - t).abs() <= PAIRING_TOLERANCE_MS)
        .min_by_key(|f| (f.t_ms - t).abs())
}

/// Pairs estimates with truth by nearest timestamp and aggregates the error metrics.
///
/// `truth` must be sorted by time.
pub fn score_run(
    estimates: &[(i64, Vector3<f64>)],
    truth: &[TruthFix],
    estimator: &str,
    horizon: Option<usize>,
) -> Result<RunReport> {
    let mut per_epoch = Vec::with_capacity(estimates.len());
    let mut unmatched = 0;
    for (t, ecef) in estimates {
        let Some(fix) = nearest_truth(truth, *t) else {
            unmatched += 1;
            continue;
        };
        let est = ecef_to_geodetic(ecef)?;
        let reference = fix.geodetic();
        let ned = ecef_to_ned(ecef, &reference);
        per_epoch.push(EpochError {
            t_ms: *t,
            est_ecef: [ecef.x, ecef.y, ecef.z],
            est_geodetic: est,
            ned_error: [ned.x, ned.y, ned.z],
            horizontal_error_m: vincenty_distance((est.lat_deg, est.lon_deg), (fix.lat_deg, fix.lon_deg)),
            vertical_error_m: est.alt_m - fix.alt_m,
        });
    }
    if per_epoch.is_empty() {
        return Err(Error::Scoring("no estimate matched a truth timestamp".into()));
    }
    let count = per_epoch.len() as f64;
    let horizontal_mean_m = per_epoch.iter().map(|e| e.horizontal_error_m).sum::<f64>() / count;
    let vertical_rmse_m = (per_epoch.iter().map(|e| e.vertical_error_m.powi(2)).sum::<f64>() / count).sqrt();
    Ok(RunReport {
        summary: RunSummary {
            estimator_name: estimator.to_string(),
            horizon,
            n_epochs: per_epoch.len(),
            n_unmatched: unmatched,
            horizontal_mean_m,
            vertical_rmse_m,
        },
        per_epoch,
    })
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-epoch table `t,lat,lon,alt,north_err,east_err,down_err,horiz_err`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,lat,lon,alt,north_err,east_err,down_err,horiz_err\n");
        for e in &self.per_epoch {
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                e.t_ms,
                e.est_geodetic.lat_deg,
                e.est_geodetic.lon_deg,
                e.est_geodetic.alt_m,
                e.ned_error[0],
                e.ned_error[1],
                e.ned_error[2],
                e.horizontal_error_m
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equator_on_ellipsoid() {
        let g = ecef_to_geodetic(&Vector3::new(WGS84_A, 0.0, 0.0)).unwrap();
        assert!(g.lat_deg.abs() < 1e-12 && g.lon_deg.abs() < 1e-12 && g.alt_m.abs() < 1e-6);
    }

    #[test]
    fn pole() {
        let g = ecef_to_geodetic(&Vector3::new(0.0, 0.0, 6_356_752.314245)).unwrap();
        assert!((g.lat_deg - 90.0).abs() < 1e-9);
        assert_eq!(g.lon_deg, 0.0);
        assert!(g.alt_m.abs() < 1e-5, "{}", g.alt_m);
    }

    #[test]
    fn geocenter_rejected() {
        assert!(ecef_to_geodetic(&Vector3::new(1.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn ned_at_equator() {
        let reference = Geodetic { lat_deg: 0.0, lon_deg: 0.0, alt_m: 0.0 };
        let p = geodetic_to_ecef(&reference) + Vector3::new(1.0, 0.0, 0.0);
        let ned = ecef_to_ned(&p, &reference);
        assert!((ned - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-9);
        let same = ecef_to_ned(&geodetic_to_ecef(&reference), &reference);
        assert!(same.norm() < 1e-9);
    }

    #[test]
    fn equatorial_degree() {
        let d = vincenty_distance((0.0, 0.0), (0.0, 1.0));
        assert!((d - 111_319.491).abs() < 1e-3, "{d}");
        assert_eq!(vincenty_distance((12.0, 34.0), (12.0, 34.0)), 0.0);
    }

    #[test]
    fn antipodal_falls_back() {
        let r = vincenty_inverse((0.0, 0.0), (0.5, 179.7));
        assert!(r.meters.is_finite() && r.meters > 1.9e7, "{r:?}");
    }

    #[test]
    fn scoring_offsets() {
        let truth = vec![TruthFix { t_ms: 0, lat_deg: 0.0, lon_deg: 0.0, alt_m: 0.0 }];
        let est = geodetic_to_ecef(&Geodetic { lat_deg: 0.0, lon_deg: 1.0, alt_m: 0.0 });
        let report = score_run(&[(0, est)], &truth, "wls", None).unwrap();
        assert!((report.summary.horizontal_mean_m - 111_319.491).abs() < 1e-3);
        assert!(report.summary.vertical_rmse_m < 1e-6);

        let est = geodetic_to_ecef(&Geodetic { lat_deg: 0.0, lon_deg: 0.0, alt_m: 3.0 });
        let report = score_run(&[(100, est)], &truth, "wls", None).unwrap();
        assert!((report.summary.vertical_rmse_m - 3.0).abs() < 1e-6);

        assert!(matches!(
            score_run(&[(2_000, est)], &truth, "wls", None),
            Err(Error::Scoring(_))
        ));
    }
}
