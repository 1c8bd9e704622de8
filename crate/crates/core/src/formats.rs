//! Versioned CSV result files.
//!
//! Every file starts with [`SCHEMA_LINE`] followed by a column header. Writers
//! format floats with Rust's shortest round-trip representation, so equal
//! inputs give byte-identical files. Readers skip `#` comment lines and report
//! malformed rows with their 1-based line number.

use std::io::{Read, Write};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::phase::{FitMethod, PhaseCell, TransitionCurve, TransitionPoint};
use crate::timing::{TimingReport, TimingRow};

pub const SCHEMA_LINE: &str = "# sl0lab-schema v1";

pub const CELLS_HEADER: &str = "delta,rho,trials,successes";
pub const TRANSITION_HEADER: &str = "delta,rho_star,method,beta0,beta1";
pub const TIMING_HEADER: &str = "N,delta,rho,trials,successes,mean_time_s";
pub const REFERENCE_HEADER: &str = "delta,rho";

fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn begin(w: &mut impl Write, header: &str) -> Result<()> {
    writeln!(w, "{SCHEMA_LINE}")?;
    writeln!(w, "{header}")?;
    Ok(())
}

pub fn write_cells_csv(w: &mut impl Write, cells: &[PhaseCell]) -> Result<()> {
    begin(w, CELLS_HEADER)?;
    for c in cells {
        writeln!(w, "{},{},{},{}", c.delta, c.rho, c.trials, c.successes)?;
    }
    Ok(())
}

pub fn write_transition_csv(w: &mut impl Write, curve: &TransitionCurve) -> Result<()> {
    begin(w, TRANSITION_HEADER)?;
    for p in &curve.points {
        writeln!(
            w,
            "{},{},{},{},{}",
            p.delta,
            p.rho_star,
            p.method.as_str(),
            opt_f64(p.beta0),
            opt_f64(p.beta1)
        )?;
    }
    Ok(())
}

pub fn write_timing_csv(w: &mut impl Write, report: &TimingReport) -> Result<()> {
    begin(w, TIMING_HEADER)?;
    for r in &report.rows {
        let t = r
            .mean_time
            .map(|d| format!("{:.9}", d.as_secs_f64()))
            .unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.signal_length, r.delta, r.rho, r.trials, r.successes, t
        )?;
    }
    Ok(())
}

pub fn write_reference_csv(w: &mut impl Write, points: &[(f64, f64)]) -> Result<()> {
    begin(w, REFERENCE_HEADER)?;
    for (d, r) in points {
        writeln!(w, "{d},{r}")?;
    }
    Ok(())
}

fn read_rows<T: DeserializeOwned>(r: impl Read, header: &str) -> Result<Vec<(u64, T)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(r);
    let expected: Vec<&str> = header.split(',').collect();
    let found = rdr.headers().map_err(csv_error)?.clone();
    if found.iter().map(str::trim).ne(expected.iter().copied()) {
        let line = rdr.position().line();
        return Err(Error::Parse {
            line,
            message: format!("expected header `{header}`"),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line());
        let row = rec
            .deserialize::<T>(Some(&found))
            .map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
        out.push((line, row));
    }
    Ok(out)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io.into(),
        kind => Error::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

fn bad(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

#[derive(Deserialize)]
struct CellRow {
    delta: f64,
    rho: f64,
    trials: usize,
    successes: usize,
}

pub fn read_cells_csv(r: impl Read) -> Result<Vec<PhaseCell>> {
    read_rows::<CellRow>(r, CELLS_HEADER)?
        .into_iter()
        .map(|(line, c)| {
            if c.trials == 0 || c.successes > c.trials {
                return Err(bad(line, "successes must not exceed trials"));
            }
            Ok(PhaseCell {
                delta: c.delta,
                rho: c.rho,
                successes: c.successes,
                trials: c.trials,
                mean_time_success: None,
                evaluated: true,
            })
        })
        .collect()
}

#[derive(Deserialize)]
struct TransitionRow {
    delta: f64,
    rho_star: f64,
    method: String,
    beta0: Option<f64>,
    beta1: Option<f64>,
}

pub fn read_transition_csv(r: impl Read) -> Result<TransitionCurve> {
    let points = read_rows::<TransitionRow>(r, TRANSITION_HEADER)?
        .into_iter()
        .map(|(line, t)| {
            let method = match t.method.as_str() {
                "logistic" => FitMethod::Logistic,
                "separation-midpoint" => FitMethod::SeparationMidpoint,
                other => return Err(bad(line, format!("unknown method `{other}`"))),
            };
            if !(0.0..=1.0).contains(&t.rho_star) {
                return Err(bad(line, "rho_star must lie in [0, 1]"));
            }
            Ok(TransitionPoint {
                delta: t.delta,
                rho_star: t.rho_star,
                method,
                beta0: t.beta0,
                beta1: t.beta1,
                converged: true,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TransitionCurve::from_points(points))
}

#[derive(Deserialize)]
struct TimingCsvRow {
    #[serde(rename = "N")]
    signal_length: usize,
    delta: f64,
    rho: f64,
    trials: usize,
    successes: usize,
    mean_time_s: Option<f64>,
}

/// Per-trial records are not stored in the CSV; rows come back without them.
pub fn read_timing_csv(r: impl Read) -> Result<TimingReport> {
    let rows = read_rows::<TimingCsvRow>(r, TIMING_HEADER)?
        .into_iter()
        .map(|(line, t)| {
            let mean_time = match t.mean_time_s {
                Some(s) if s.is_finite() && s >= 0.0 => Some(Duration::from_secs_f64(s)),
                Some(_) => return Err(bad(line, "mean_time_s must be nonnegative")),
                None => None,
            };
            Ok(TimingRow {
                signal_length: t.signal_length,
                delta: t.delta,
                rho: t.rho,
                trials: t.trials,
                successes: t.successes,
                mean_time,
                records: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TimingReport { rows })
}

#[derive(Deserialize)]
struct ReferenceRow {
    delta: f64,
    rho: f64,
}

/// A `(δ, ρ)` polyline, e.g. a theoretical transition curve.
pub fn read_reference_csv(r: impl Read) -> Result<Vec<(f64, f64)>> {
    Ok(read_rows::<ReferenceRow>(r, REFERENCE_HEADER)?
        .into_iter()
        .map(|(_, p)| (p.delta, p.rho))
        .collect())
}
