use std::io::Cursor;

use horizon_core::ingest::*;
use horizon_core::metrics::*;
use horizon_core::simulate::{generate_scenario, ScenarioConfig};
use horizon_core::Error;
use nalgebra::Vector3;
use proptest::prelude::*;

fn dms(d: f64, m: f64, s: f64) -> f64 {
    d.signum() * (d.abs() + m / 60.0 + s / 3600.0)
}

#[test]
fn vincenty_reference_distances() {
    let flinders = (dms(-37.0, 57.0, 3.72030), dms(144.0, 25.0, 29.52440));
    let buninyong = (dms(-37.0, 39.0, 10.15610), dms(143.0, 55.0, 35.38390));
    let d = vincenty_inverse(flinders, buninyong);
    assert!(d.converged);
    assert!((d.meters - 54_972.271).abs() < 1e-3, "{}", d.meters);

    let equator = vincenty_distance((0.0, 0.0), (0.0, 1.0));
    assert!((equator - WGS84_A * std::f64::consts::PI / 180.0).abs() < 1e-6);
    let quarter_meridian = vincenty_distance((0.0, 0.0), (90.0, 0.0));
    assert!((quarter_meridian - 10_001_965.729).abs() < 1e-3, "{quarter_meridian}");
    assert_eq!(vincenty_distance((12.0, 34.0), (12.0, 34.0)), 0.0);
}

#[test]
fn nearly_antipodal_points_fall_back() {
    let d = vincenty_inverse((0.0, 0.0), (0.5, 179.7));
    assert!(d.meters.is_finite());
    assert!(d.meters > 19_900_000.0 && d.meters < 20_040_000.0);
}

#[test]
fn geodetic_examples() {
    let p = geodetic_to_ecef(&Geodetic { lat_deg: 0.0, lon_deg: 0.0, alt_m: 0.0 });
    assert_eq!(p, Vector3::new(WGS84_A, 0.0, 0.0));
    let pole = geodetic_to_ecef(&Geodetic { lat_deg: 90.0, lon_deg: 0.0, alt_m: 100.0 });
    assert!((pole.z - WGS84_B - 100.0).abs() < 1e-6);
    assert!(matches!(ecef_to_geodetic(&Vector3::zeros()), Err(Error::Contract(_))));
}

#[test]
fn ned_axes_at_reference() {
    let r = Geodetic { lat_deg: 37.0, lon_deg: -122.0, alt_m: 10.0 };
    let origin = geodetic_to_ecef(&r);
    let up = geodetic_to_ecef(&Geodetic { alt_m: 1010.0, ..r });
    let ned = ecef_to_ned(&up, &r);
    assert!((ned - Vector3::new(0.0, 0.0, -1000.0)).norm() < 1e-6);
    let rot = enu_to_ecef_rotation(&r);
    let north = ecef_to_ned(&(origin + rot.column(1)), &r);
    assert!((north - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-9);
    assert!((rot.transpose() * rot - nalgebra::Matrix3::identity()).norm() < 1e-14);
}

fn fix(t_ms: i64, g: Geodetic) -> TruthFix {
    TruthFix { t_ms, lat_deg: g.lat_deg, lon_deg: g.lon_deg, alt_m: g.alt_m }
}

#[test]
fn scoring_identical_tracks_is_zero() {
    let truth: Vec<_> = (0..10)
        .map(|i| fix(i * 1000, Geodetic { lat_deg: 10.0 + 1e-4 * i as f64, lon_deg: 20.0, alt_m: 5.0 }))
        .collect();
    let est: Vec<_> = truth.iter().map(|f| (f.t_ms + 200, geodetic_to_ecef(&f.geodetic()))).collect();
    let report = score_run(&est, &truth, "ekf", None).unwrap();
    assert_eq!(report.summary.n_epochs, 10);
    assert!(report.summary.horizontal_mean_m < 1e-6);
    assert!(report.summary.vertical_rmse_m < 1e-6);
}

#[test]
fn scoring_recomputes_from_per_epoch_rows() {
    let truth: Vec<_> = (0..20).map(|i| fix(i * 1000, Geodetic { lat_deg: 45.0, lon_deg: 7.0, alt_m: 0.0 })).collect();
    let est: Vec<_> = (0..25)
        .map(|i| {
            let g = Geodetic { lat_deg: 45.0 + 1e-5 * i as f64, lon_deg: 7.0 - 2e-5 * i as f64, alt_m: i as f64 };
            (i * 1000 + 100, geodetic_to_ecef(&g))
        })
        .collect();
    let report = score_run(&est, &truth, "mhe", Some(4)).unwrap();
    assert_eq!(report.summary.n_epochs, 20);
    assert_eq!(report.summary.n_unmatched, 5);
    let mean = report.per_epoch.iter().map(|e| e.horizontal_error_m).sum::<f64>() / 20.0;
    let rmse = (report.per_epoch.iter().map(|e| e.vertical_error_m.powi(2)).sum::<f64>() / 20.0).sqrt();
    assert!((mean - report.summary.horizontal_mean_m).abs() < 1e-12);
    assert!((rmse - report.summary.vertical_rmse_m).abs() < 1e-12);
    for e in &report.per_epoch {
        let ned = Vector3::from(e.ned_error);
        assert!((ned.xy().norm() - e.horizontal_error_m).abs() < 1e-3 * e.horizontal_error_m.max(1.0));
    }
    let csv = report.to_csv();
    assert!(csv.starts_with("t,lat,lon,alt,north_err,east_err,down_err,horiz_err\n"));
    assert_eq!(csv.lines().count(), 21);
    let json: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert_eq!(json["summary"]["estimator_name"], "mhe");
    assert_eq!(json["summary"]["horizon"], 4);
}

#[test]
fn scoring_without_matches_fails() {
    let truth = vec![fix(0, Geodetic { lat_deg: 0.0, lon_deg: 0.0, alt_m: 0.0 })];
    let est = vec![(10_000, Vector3::new(WGS84_A, 0.0, 0.0))];
    assert!(matches!(score_run(&est, &truth, "wls", None), Err(Error::Scoring(_))));
}

proptest! {
    #[test]
    fn geodetic_round_trip(lat in -89.9f64..89.9, lon in -180.0f64..180.0, alt in -500.0f64..20_000.0) {
        let g = Geodetic { lat_deg: lat, lon_deg: lon, alt_m: alt };
        let back = ecef_to_geodetic(&geodetic_to_ecef(&g)).unwrap();
        prop_assert!((back.lat_deg - lat).abs() < 1e-9);
        prop_assert!((back.lon_deg - lon).abs() < 1e-9);
        prop_assert!((back.alt_m - alt).abs() < 1e-6);
    }

    #[test]
    fn vincenty_is_symmetric(a in -80.0f64..80.0, b in -179.0f64..179.0, c in -80.0f64..80.0, d in -179.0f64..179.0) {
        let ab = vincenty_distance((a, b), (c, d));
        let ba = vincenty_distance((c, d), (a, b));
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-6 * ab.max(1.0));
    }

    #[test]
    fn ned_preserves_length(lat in -80.0f64..80.0, lon in -180.0f64..180.0, dx in -1e4f64..1e4, dy in -1e4f64..1e4, dz in -1e4f64..1e4) {
        let r = Geodetic { lat_deg: lat, lon_deg: lon, alt_m: 0.0 };
        let offset = Vector3::new(dx, dy, dz);
        let ned = ecef_to_ned(&(geodetic_to_ecef(&r) + offset), &r);
        prop_assert!((ned.norm() - offset.norm()).abs() < 1e-6);
    }
}

#[test]
fn simulated_files_round_trip() {
    let cfg = ScenarioConfig { n_epochs: 30, seed: 5, ..Default::default() };
    let scenario = generate_scenario(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (ep, tr) = (dir.path().join("epochs.csv"), dir.path().join("truth.csv"));
    write_epochs(&ep, &scenario.epochs).unwrap();
    let truth = scenario.truth_fixes().unwrap();
    write_truth(&tr, &truth).unwrap();
    let loaded = load_epochs(&ep).unwrap();
    assert_eq!(loaded.dropped_rows, 0);
    assert_eq!(loaded.items, scenario.epochs);
    assert_eq!(load_truth(&tr).unwrap().items, truth);
}

const HEADER: &str = "utc_ms,sat_id,pr_m,prr_mps,sat_x_m,sat_y_m,sat_z_m,sat_vx_mps,sat_vy_mps,sat_vz_mps,sigma_pr_m,sigma_prr_mps";

#[test]
fn epoch_reader_contract() {
    let missing = "utc_ms,sat_id\n0,G01\n";
    match read_epochs(Cursor::new(missing)) {
        Err(Error::Schema { missing }) => assert!(missing.contains(&"pr_m".to_string())),
        other => panic!("{other:?}"),
    }
    assert!(matches!(read_epochs(Cursor::new(format!("{HEADER}\n"))), Err(Error::EmptyInput(_))));
    let row = "1000,G01,2.1e7,,2.6e7,0,0,0,0,0,3,0.3";
    let dup = format!("{HEADER}\n{row}\n{row}\n");
    assert!(matches!(read_epochs(Cursor::new(dup)), Err(Error::DuplicateRow { utc_ms: 1000, .. })));
    let mixed = format!("{HEADER}\n{row}\n1000,G02,nan,1,2.6e7,0,0,0,0,0,3,0.3\n");
    let loaded = read_epochs(Cursor::new(mixed)).unwrap();
    assert_eq!(loaded.dropped_rows, 1);
    assert_eq!(loaded.items.len(), 1);
    assert_eq!(loaded.items[0].sats[0].prr, None);
}

#[test]
fn truth_reader_contract() {
    let ok = "utc_ms,lat_deg,lon_deg,alt_m\n0,1,2,3\n1000,1,2,4\n";
    assert_eq!(read_truth(Cursor::new(ok)).unwrap().items.len(), 2);
    let dup = "utc_ms,lat_deg,lon_deg,alt_m\n0,1,2,3\n0,1,2,4\n";
    assert!(matches!(read_truth(Cursor::new(dup)), Err(Error::Validation(_))));
    let bad_lat = "utc_ms,lat_deg,lon_deg,alt_m\n0,91,2,3\n";
    assert!(read_truth(Cursor::new(bad_lat)).is_err());
}
