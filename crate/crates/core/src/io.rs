//! File formats.
//!
//! Traces are CSV with the header `frequency_hz,s21_real,s21_imag` and
//! optional `#` comment lines. A trace `name.csv` may have a JSON sidecar
//! `name.json` with keys `label`, `power_dbm_at_vna`, `line_attenuation_db`
//! and, optionally, `mode_id`. Mode tables are CSV with the header
//! `mode_id,frequency_hz,q_int,q_int_sigma[,photon_number]`. Everything else
//! (participations, libraries, fixed channels, truths) is JSON.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::domain::{dbm_to_watts, FrequencyTrace, ModeRecord};
use crate::error::{Error, Result};
use crate::photon::LineBudget;

pub const TRACE_HEADER: [&str; 3] = ["frequency_hz", "s21_real", "s21_imag"];

fn csv_reader<R: std::io::Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r)
}

fn check_header(found: &csv::StringRecord, expected: &[&str], what: &str) -> Result<()> {
    let got: Vec<&str> = found.iter().collect();
    if got.len() < expected.len() || got[..expected.len()] != *expected {
        return Err(Error::InvalidInput(format!(
            "{what}: expected header '{}', found '{}'",
            expected.join(","),
            got.join(",")
        )));
    }
    Ok(())
}

fn number(field: Option<&str>, line: u64, col: &str) -> Result<f64> {
    let s = field.ok_or_else(|| Error::InvalidInput(format!("line {line}: missing column '{col}'")))?;
    s.parse::<f64>()
        .map_err(|_| Error::InvalidInput(format!("line {line}: '{s}' in column '{col}' is not a number")))
}

/// Parses trace CSV text into frequencies and complex S21.
pub fn parse_trace_csv(text: &str) -> Result<(Vec<f64>, Vec<Complex64>)> {
    let mut rdr = csv_reader(text.as_bytes());
    check_header(rdr.headers()?, &TRACE_HEADER, "trace")?;
    let (mut f, mut z) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        f.push(number(rec.get(0), line, "frequency_hz")?);
        z.push(Complex64::new(number(rec.get(1), line, "s21_real")?, number(rec.get(2), line, "s21_imag")?));
    }
    Ok((f, z))
}

/// Renders a trace as CSV. Values use Rust's shortest round-trip formatting,
/// so writing and re-reading is lossless.
pub fn trace_to_csv(trace: &FrequencyTrace) -> String {
    let mut s = String::new();
    if !trace.label().is_empty() {
        let _ = writeln!(s, "# {}", trace.label());
    }
    let _ = writeln!(s, "{}", TRACE_HEADER.join(","));
    for (f, z) in trace.points() {
        let _ = writeln!(s, "{f:?},{:?},{:?}", z.re, z.im);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSidecar {
    #[serde(default)]
    pub label: String,
    pub power_dbm_at_vna: f64,
    /// Total input-line attenuation in dB. When absent, a line budget must
    /// supply it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line_attenuation_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_id: Option<String>,
}

pub fn sidecar_path(trace_path: &Path) -> PathBuf {
    trace_path.with_extension("json")
}

/// A trace loaded from disk together with its sidecar, if any.
#[derive(Debug, Clone)]
pub struct LoadedTrace {
    pub path: PathBuf,
    pub trace: FrequencyTrace,
    pub sidecar: Option<TraceSidecar>,
}

impl LoadedTrace {
    /// Mode identifier: the sidecar's `mode_id`, else its label, else the
    /// file stem.
    pub fn mode_id(&self) -> String {
        match &self.sidecar {
            Some(TraceSidecar { mode_id: Some(m), .. }) => m.clone(),
            Some(s) if !s.label.is_empty() => s.label.clone(),
            _ => self.path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned()),
        }
    }
}

/// Reads a trace and its sidecar. The drive power at the device is
/// `power_dbm_at_vna - attenuation`, with the attenuation from the sidecar
/// or, failing that, from `budget` at the trace's centre frequency.
pub fn load_trace(path: &Path, budget: Option<&LineBudget>) -> Result<LoadedTrace> {
    let text = fs::read_to_string(path)?;
    let (f, z) = parse_trace_csv(&text).map_err(|e| match e {
        Error::InvalidInput(m) => Error::InvalidInput(format!("{}: {m}", path.display())),
        other => other,
    })?;
    let side = sidecar_path(path);
    let sidecar: Option<TraceSidecar> = if side.exists() { Some(read_json(&side)?) } else { None };
    let stem = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let label = sidecar.as_ref().map(|s| s.label.clone()).filter(|l| !l.is_empty()).unwrap_or(stem);
    let power = match &sidecar {
        None => None,
        Some(s) => {
            let atten = match (s.line_attenuation_db, budget) {
                (Some(a), _) => a,
                (None, Some(b)) => {
                    let center = 0.5 * (f[0] + f[f.len() - 1]);
                    b.attenuation_at(center)?
                }
                (None, None) => {
                    return Err(Error::InvalidInput(format!(
                        "{}: sidecar has no line_attenuation_db and no line budget was given",
                        side.display()
                    )))
                }
            };
            Some(dbm_to_watts(s.power_dbm_at_vna - atten))
        }
    };
    let trace = FrequencyTrace::new(f, z, power, label)?;
    Ok(LoadedTrace {
        path: path.to_path_buf(),
        trace,
        sidecar,
    })
}

/// All `*.csv` traces in a directory, sorted by file name.
pub fn trace_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    v.sort();
    Ok(v)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub const MODES_HEADER: [&str; 4] = ["mode_id", "frequency_hz", "q_int", "q_int_sigma"];

pub fn parse_modes_csv(text: &str) -> Result<Vec<ModeRecord>> {
    let mut rdr = csv_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    check_header(&header, &MODES_HEADER, "modes table")?;
    let has_n = header.get(4) == Some("photon_number");
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec
            .get(0)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::InvalidInput(format!("line {line}: empty mode_id")))?;
        let mut r = ModeRecord::new(
            id,
            number(rec.get(1), line, "frequency_hz")?,
            number(rec.get(2), line, "q_int")?,
            number(rec.get(3), line, "q_int_sigma")?,
        )?;
        if has_n {
            if let Some(s) = rec.get(4).filter(|s| !s.is_empty()) {
                r = r.with_photon_number(number(Some(s), line, "photon_number")?);
            }
        }
        out.push(r);
    }
    Ok(out)
}

pub fn read_modes_csv(path: &Path) -> Result<Vec<ModeRecord>> {
    parse_modes_csv(&fs::read_to_string(path)?)
}

pub fn modes_to_csv(records: &[ModeRecord]) -> String {
    let with_n = records.iter().any(|r| r.photon_number.is_some());
    let mut s = MODES_HEADER.join(",");
    if with_n {
        s.push_str(",photon_number");
    }
    s.push('\n');
    for r in records {
        let _ = write!(s, "{},{:?},{:?},{:?}", r.mode_id, r.frequency, r.q_int, r.q_int_sigma);
        if with_n {
            let _ = write!(s, ",{}", r.photon_number.map_or(String::new(), |n| format!("{n:?}")));
        }
        s.push('\n');
    }
    s
}
