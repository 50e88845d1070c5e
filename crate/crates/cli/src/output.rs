//! CSV files written by a run. Floats use the shortest representation
//! that parses back to the same value.

use std::fs::File;
use std::path::Path;

use ttn_cme::ttn::Footprint;

use crate::error::{io_error, CliError};

pub const OBSERVABLES: &str = "observables.csv";
pub const MARGINALS: &str = "marginals.csv";
pub const SUMMARY: &str = "summary.csv";
pub const FOOTPRINT: &str = "footprint.csv";
pub const COMPARE: &str = "compare.csv";
pub const SNAPSHOTS: &str = "snapshots";

pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    let file = File::create(path).map_err(io_error(path))?;
    Ok(csv::Writer::from_writer(file))
}

/// Snapshot file of output time index `k`.
pub fn snapshot_name(k: usize) -> String {
    format!("t{k:05}.ttn")
}

/// Observables of one output time.
#[derive(Clone, Debug)]
pub struct Observation {
    pub time: f64,
    pub mass: f64,
    /// Mean and standard deviation per species.
    pub moments: Vec<(f64, f64)>,
    pub marginals: Option<Vec<Vec<f64>>>,
}

pub fn write_observations(
    dir: &Path,
    names: &[String],
    lower: &[i64],
    observations: &[Observation],
) -> Result<(), CliError> {
    let mut w = writer(&dir.join(OBSERVABLES))?;
    let mut header = vec!["time".to_string(), "mass".to_string()];
    for n in names {
        header.push(format!("mean_{n}"));
        header.push(format!("std_{n}"));
    }
    w.write_record(&header)?;
    for o in observations {
        let mut row = vec![num(o.time), num(o.mass)];
        for &(m, s) in &o.moments {
            row.push(num(m));
            row.push(num(s));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(io_error(dir.join(OBSERVABLES)))?;

    if observations.iter().all(|o| o.marginals.is_none()) {
        return Ok(());
    }
    let mut w = writer(&dir.join(MARGINALS))?;
    w.write_record(["time", "species", "value", "probability"])?;
    for o in observations {
        for (s, marginal) in o.marginals.iter().flatten().enumerate() {
            for (k, p) in marginal.iter().enumerate() {
                w.write_record([num(o.time), names[s].clone(), (lower[s] + k as i64).to_string(), num(*p)])?;
            }
        }
    }
    w.flush().map_err(io_error(dir.join(MARGINALS)))
}

pub fn write_key_values(path: &Path, rows: &[(&str, String)]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["key", "value"])?;
    for (k, v) in rows {
        w.write_record([*k, v.as_str()])?;
    }
    w.flush().map_err(io_error(path))
}

pub fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

/// Structure name with its storage, at 8 bytes per entry.
pub fn footprint_rows(ttn: Option<Footprint>, dense_entries: u128) -> Vec<(&'static str, u128, u128)> {
    let mut rows = Vec::new();
    if let Some(f) = ttn {
        rows.push(("ttn", f.entries, f.bytes));
    }
    rows.push(("dense", dense_entries, dense_entries * 8));
    rows
}

pub fn write_footprint(path: &Path, rows: &[(&'static str, u128, u128)]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["structure", "entries", "bytes"])?;
    for (name, entries, bytes) in rows {
        w.write_record([name.to_string(), entries.to_string(), bytes.to_string()])?;
    }
    w.flush().map_err(io_error(path))
}

pub fn describe_bytes(bytes: u128) -> String {
    let mb = bytes as f64 / 1e6;
    if mb >= 1e6 {
        format!("{mb:.3e} MB")
    } else if mb >= 1.0 {
        format!("{mb:.3} MB")
    } else {
        format!("{:.2} kB", bytes as f64 / 1e3)
    }
}
