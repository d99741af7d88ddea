//! CSV input and output for GNSS epochs and ground truth.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::gnss::{Epoch, SatelliteObservation};
use crate::metrics::TruthFix;

pub const EPOCH_COLUMNS: [&str; 12] = [
    "utc_ms",
    "sat_id",
    "pr_m",
    "prr_mps",
    "sat_x_m",
    "sat_y_m",
    "sat_z_m",
    "sat_vx_mps",
    "sat_vy_mps",
    "sat_vz_mps",
    "sigma_pr_m",
    "sigma_prr_mps",
];

pub const TRUTH_COLUMNS: [&str; 4] = ["utc_ms", "lat_deg", "lon_deg", "alt_m"];

/// Parsed rows plus the number of rows dropped for non-finite fields.
#[derive(Clone, Debug, PartialEq)]
pub struct Loaded<T> {
    pub items: Vec<T>,
    pub dropped_rows: usize,
}

fn column_indices(headers: &csv::StringRecord, wanted: &[&str]) -> Result<Vec<usize>> {
    let mut idx = Vec::with_capacity(wanted.len());
    let mut missing = Vec::new();
    for name in wanted {
        match headers.iter().position(|h| h.trim() == *name) {
            Some(i) => idx.push(i),
            None => missing.push(name.to_string()),
        }
    }
    if missing.is_empty() {
        Ok(idx)
    } else {
        Err(Error::Schema { missing })
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input)
}

fn parse_ms(s: &str, line: u64) -> Result<i64> {
    s.parse()
        .map_err(|_| Error::Validation(format!("line {line}: utc_ms '{s}' is not an integer")))
}

/// Parses a real; `Ok(None)` marks a non-finite or blank value.
fn parse_real(s: &str, column: &str, line: u64) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    let v: f64 = s
        .parse()
        .map_err(|_| Error::Validation(format!("line {line}: {column} '{s}' is not a number")))?;
    Ok(v.is_finite().then_some(v))
}

pub fn read_epochs<R: Read>(input: R) -> Result<Loaded<Epoch>> {
    let mut rdr = reader(input);
    let idx = column_indices(rdr.headers()?, &EPOCH_COLUMNS)?;
    let mut groups: BTreeMap<i64, Vec<SatelliteObservation>> = BTreeMap::new();
    let mut seen = HashSet::new();
    let mut dropped = 0;
    let mut rows = 0;
    for record in rdr.records() {
        let record = record?;
        rows += 1;
        let line = record.position().map_or(0, |p| p.line());
        let field = |c: usize| record.get(idx[c]).unwrap_or("");
        let utc_ms = parse_ms(field(0), line)?;
        let sat_id = field(1).to_string();
        let mut reals = [0.0; 10];
        let mut finite = true;
        let mut prr = None;
        for c in 2..12 {
            let v = parse_real(field(c), EPOCH_COLUMNS[c], line)?;
            match v {
                Some(v) if c == 3 => prr = Some(v),
                Some(v) => reals[c - 2] = v,
                None if c == 3 && field(3).is_empty() => {}
                None => finite = false,
            }
        }
        if !finite || sat_id.is_empty() {
            dropped += 1;
            continue;
        }
        if !seen.insert((utc_ms, sat_id.clone())) {
            return Err(Error::DuplicateRow { utc_ms, sat_id });
        }
        groups.entry(utc_ms).or_default().push(SatelliteObservation {
            sat_id,
            pr: reals[0],
            prr,
            sat_pos: Vector3::new(reals[2], reals[3], reals[4]),
            sat_vel: Vector3::new(reals[5], reals[6], reals[7]),
            sigma_pr: reals[8],
            sigma_prr: reals[9],
        });
    }
    if rows == 0 {
        return Err(Error::EmptyInput("epoch file has no data rows".into()));
    }
    if groups.is_empty() {
        return Err(Error::EmptyInput(format!("all {dropped} epoch rows were dropped as non-finite")));
    }
    let mut prev: Option<i64> = None;
    let epochs = groups
        .into_iter()
        .map(|(t_ms, sats)| {
            let ts = prev.map_or(0.0, |p| (t_ms - p) as f64 / 1000.0);
            prev = Some(t_ms);
            Epoch { t_ms, ts, sats }
        })
        .collect();
    Ok(Loaded { items: epochs, dropped_rows: dropped })
}

pub fn read_truth<R: Read>(input: R) -> Result<Loaded<TruthFix>> {
    let mut rdr = reader(input);
    let idx = column_indices(rdr.headers()?, &TRUTH_COLUMNS)?;
    let mut fixes = Vec::new();
    let mut dropped = 0;
    let mut rows = 0;
    for record in rdr.records() {
        let record = record?;
        rows += 1;
        let line = record.position().map_or(0, |p| p.line());
        let field = |c: usize| record.get(idx[c]).unwrap_or("");
        let t_ms = parse_ms(field(0), line)?;
        let vals = (1..4)
            .map(|c| parse_real(field(c), TRUTH_COLUMNS[c], line))
            .collect::<Result<Vec<_>>>()?;
        let [Some(lat_deg), Some(lon_deg), Some(alt_m)] = vals[..] else {
            dropped += 1;
            continue;
        };
        let fix = TruthFix { t_ms, lat_deg, lon_deg, alt_m };
        fix.validate()?;
        fixes.push(fix);
    }
    if rows == 0 {
        return Err(Error::EmptyInput("truth file has no data rows".into()));
    }
    if fixes.is_empty() {
        return Err(Error::EmptyInput(format!("all {dropped} truth rows were dropped as non-finite")));
    }
    fixes.sort_by_key(|f| f.t_ms);
    if let Some(pair) = fixes.windows(2).find(|w| w[0].t_ms == w[1].t_ms) {
        return Err(Error::Validation(format!("duplicate truth timestamp {}", pair[0].t_ms)));
    }
    Ok(Loaded { items: fixes, dropped_rows: dropped })
}

pub fn load_epochs(path: &Path) -> Result<Loaded<Epoch>> {
    read_epochs(std::fs::File::open(path)?)
}

pub fn load_truth(path: &Path) -> Result<Loaded<TruthFix>> {
    read_truth(std::fs::File::open(path)?)
}

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn epochs_to_csv(epochs: &[Epoch]) -> String {
    let mut out = EPOCH_COLUMNS.join(",");
    out.push('\n');
    for e in epochs {
        for s in &e.sats {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                e.t_ms,
                s.sat_id,
                real(s.pr),
                s.prr.map(real).unwrap_or_default(),
                real(s.sat_pos.x),
                real(s.sat_pos.y),
                real(s.sat_pos.z),
                real(s.sat_vel.x),
                real(s.sat_vel.y),
                real(s.sat_vel.z),
                real(s.sigma_pr),
                real(s.sigma_prr)
            );
        }
    }
    out
}

pub fn truth_to_csv(truth: &[TruthFix]) -> String {
    let mut out = TRUTH_COLUMNS.join(",");
    out.push('\n');
    for f in truth {
        let _ = writeln!(out, "{},{},{},{}", f.t_ms, real(f.lat_deg), real(f.lon_deg), real(f.alt_m));
    }
    out
}

pub fn write_epochs(path: &Path, epochs: &[Epoch]) -> Result<()> {
    Ok(std::fs::write(path, epochs_to_csv(epochs))?)
}

pub fn write_truth(path: &Path, truth: &[TruthFix]) -> Result<()> {
    Ok(std::fs::write(path, truth_to_csv(truth))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "utc_ms,sat_id,pr_m,prr_mps,sat_x_m,sat_y_m,sat_z_m,sat_vx_mps,sat_vy_mps,sat_vz_mps,sigma_pr_m,sigma_prr_mps\n";

    fn row(t: i64, id: &str) -> String {
        format!("{t},{id},2.1e7,-1.5,1.5e7,1.0e7,2.0e7,10,20,30,3,0.3\n")
    }

    #[test]
    fn groups_rows_into_epochs() {
        let mut text = HEADER.to_string();
        for t in [2000, 1000] {
            for i in 0..5 {
                text += &row(t, &format!("G{i}"));
            }
        }
        let loaded = read_epochs(text.as_bytes()).unwrap();
        assert_eq!(loaded.items.len(), 2);
        assert_eq!(loaded.items[0].t_ms, 1000);
        assert_eq!(loaded.items[0].ts, 0.0);
        assert_eq!(loaded.items[1].ts, 1.0);
        assert!(loaded.items.iter().all(|e| e.sats.len() == 5));
    }

    #[test]
    fn empty_missing_duplicate_and_nonfinite() {
        assert!(matches!(read_epochs(HEADER.as_bytes()), Err(Error::EmptyInput(_))));
        let err = read_epochs("utc_ms,sat_id,pr_m\n1,G1,2\n".as_bytes()).unwrap_err();
        match err {
            Error::Schema { missing } => assert!(missing.contains(&"sigma_prr_mps".to_string())),
            other => panic!("{other}"),
        }
        let dup = format!("{HEADER}{}{}", row(1000, "G1"), row(1000, "G1"));
        assert!(matches!(read_epochs(dup.as_bytes()), Err(Error::DuplicateRow { utc_ms: 1000, .. })));
        let nan = format!("{HEADER}{}{}", row(1000, "G1"), row(1000, "G2").replace("2.1e7", "NaN"));
        let loaded = read_epochs(nan.as_bytes()).unwrap();
        assert_eq!(loaded.dropped_rows, 1);
        assert_eq!(loaded.items[0].sats.len(), 1);
    }

    #[test]
    fn blank_rate_is_missing() {
        let text = format!("{HEADER}{}", row(1000, "G1").replace(",-1.5,", ",,"));
        let loaded = read_epochs(text.as_bytes()).unwrap();
        assert_eq!(loaded.items[0].sats[0].prr, None);
        assert_eq!(loaded.dropped_rows, 0);
    }

    #[test]
    fn crlf_accepted() {
        let text = format!("{HEADER}{}", row(1000, "G1")).replace('\n', "\r\n");
        assert_eq!(read_epochs(text.as_bytes()).unwrap().items.len(), 1);
    }

    #[test]
    fn truth_validation() {
        let one = read_truth("utc_ms,lat_deg,lon_deg,alt_m\n5,10,20,30\n".as_bytes()).unwrap();
        assert_eq!(one.items, vec![TruthFix { t_ms: 5, lat_deg: 10.0, lon_deg: 20.0, alt_m: 30.0 }]);
        assert!(matches!(
            read_truth("utc_ms,lat_deg,lon_deg,alt_m\n5,95,20,30\n".as_bytes()),
            Err(Error::Validation(_))
        ));
    }
}
