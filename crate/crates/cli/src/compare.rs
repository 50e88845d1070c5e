//! Time-resolved 2-norm differences between two run directories.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use ttn_cme::ttn::{TtnState, DEFAULT_GUARD};

use crate::error::{invalid, io_error, CliError};
use crate::output::{self, num};

/// Outputs of a finished run, read back from its directory.
struct RunData {
    dir: PathBuf,
    times: Vec<f64>,
    /// Concatenated marginals per output time.
    marginals: Vec<Vec<f64>>,
    lower: String,
    upper: String,
}

fn reader(path: &Path) -> Result<csv::Reader<File>, CliError> {
    let file = File::open(path).map_err(io_error(path))?;
    Ok(csv::Reader::from_reader(file))
}

fn parse_f64(path: &Path, text: &str) -> Result<f64, CliError> {
    text.parse().map_err(|_| invalid(path.display(), format!("`{text}` is not a number")))
}

impl RunData {
    fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(output::OBSERVABLES);
        let mut times = Vec::new();
        for row in reader(&path)?.records() {
            times.push(parse_f64(&path, &row?[0])?);
        }

        let path = dir.join(output::MARGINALS);
        if !path.exists() {
            return Err(invalid(dir.display(), "run has no marginal distributions to compare"));
        }
        let mut marginals: Vec<Vec<f64>> = Vec::new();
        let mut current: Option<String> = None;
        for row in reader(&path)?.records() {
            let row = row?;
            if current.as_deref() != Some(&row[0]) {
                current = Some(row[0].to_string());
                marginals.push(Vec::new());
            }
            marginals.last_mut().unwrap().push(parse_f64(&path, &row[3])?);
        }
        if marginals.len() != times.len() {
            return Err(invalid(path.display(), "marginals do not cover every output time"));
        }

        let path = dir.join(output::SUMMARY);
        let mut summary = HashMap::new();
        for row in reader(&path)?.records() {
            let row = row?;
            summary.insert(row[0].to_string(), row[1].to_string());
        }
        let field = |key: &str| summary.get(key).cloned().ok_or_else(|| invalid(path.display(), format!("missing `{key}`")));
        Ok(Self { dir: dir.to_path_buf(), times, marginals, lower: field("lower")?, upper: field("upper")? })
    }

    fn snapshot(&self, k: usize) -> Result<Option<TtnState>, CliError> {
        let path = self.dir.join(output::SNAPSHOTS).join(output::snapshot_name(k));
        if !path.exists() {
            return Ok(None);
        }
        let file = File::open(&path).map_err(io_error(&path))?;
        Ok(Some(TtnState::read_snapshot(&mut BufReader::new(file))?))
    }
}

/// Which quantity the error of one output time was measured on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    Full,
    Marginals,
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub times: Vec<f64>,
    pub errors: Vec<f64>,
    pub norms: Vec<Norm>,
}

impl Comparison {
    pub fn max(&self) -> (f64, f64) {
        self.times
            .iter()
            .zip(&self.errors)
            .fold((f64::NAN, 0.0), |acc, (&t, &e)| if e >= acc.1 { (t, e) } else { acc })
    }

    pub fn last(&self) -> f64 {
        self.errors.last().copied().unwrap_or(0.0)
    }
}

/// Compares two runs over the same output times and truncation: on the
/// full distribution where both stored snapshots small enough to expand,
/// otherwise on the concatenated marginals.
pub fn compare(a: &Path, b: &Path) -> Result<Comparison, CliError> {
    let (ra, rb) = (RunData::read(a)?, RunData::read(b)?);
    if ra.lower != rb.lower || ra.upper != rb.upper {
        return Err(invalid(
            "truncation",
            format!("mismatched grids: {}..{} versus {}..{}", ra.lower, ra.upper, rb.lower, rb.upper),
        ));
    }
    let same_times = ra.times.len() == rb.times.len()
        && ra.times.iter().zip(&rb.times).all(|(x, y)| (x - y).abs() <= 1e-9 * x.abs().max(1.0));
    if !same_times {
        return Err(invalid("output_times", "runs do not share their output times"));
    }
    let mut errors = Vec::with_capacity(ra.times.len());
    let mut norms = Vec::with_capacity(ra.times.len());
    for k in 0..ra.times.len() {
        let full = match (ra.snapshot(k)?, rb.snapshot(k)?) {
            (Some(x), Some(y)) if x.space().size() <= DEFAULT_GUARD => Some(x.eval_full()?.distance(&y.eval_full()?)?),
            _ => None,
        };
        let (error, norm) = match full {
            Some(e) => (e, Norm::Full),
            None => {
                let (x, y) = (&ra.marginals[k], &rb.marginals[k]);
                if x.len() != y.len() {
                    return Err(invalid("truncation", "marginal lengths differ"));
                }
                (x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt(), Norm::Marginals)
            }
        };
        errors.push(error);
        norms.push(norm);
    }
    Ok(Comparison { times: ra.times, errors, norms })
}

pub fn write_comparison(path: &Path, c: &Comparison) -> Result<(), CliError> {
    let mut w = output::writer(path)?;
    w.write_record(["time", "error", "norm"])?;
    for k in 0..c.times.len() {
        let norm = match c.norms[k] {
            Norm::Full => "full",
            Norm::Marginals => "marginals",
        };
        w.write_record([num(c.times[k]), num(c.errors[k]), norm.to_string()])?;
    }
    w.flush().map_err(io_error(path))
}
