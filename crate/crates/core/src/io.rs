//! CSV persistence.
//!
//! * Response matrices: headerless, one respondent per line, items separated
//!   by commas.
//! * Parameter files: header `kind,index,true,estimated`; either value column
//!   may be empty.
//!
//! Floats are written with 17 significant digits, which round-trips every
//! `f64` exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irt::ResponseMatrix;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub(crate) fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line() as usize);
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            field: "record".into(),
            message: format!("{other:?}"),
        },
    }
}

fn parse_field(path: &Path, line: usize, field: &str, raw: &str) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line,
        field: field.to_string(),
        message: format!("`{raw}` is not a number ({e})"),
    })
}

/// Row-major, headerless, comma separated.
pub fn write_matrix(path: &Path, m: &ResponseMatrix) -> Result<()> {
    let mut out = String::new();
    for row in m.values().outer_iter() {
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_all(path, out.as_bytes())
}

/// Reads a headerless matrix. Cells are clamped like any other response.
pub fn read_matrix(path: &Path) -> Result<ResponseMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record
            .position()
            .map_or(rows.len() + 1, |p| p.line() as usize);
        if let Some(first) = rows.first() {
            if record.len() != first.len() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    field: format!("column {}", record.len().min(first.len()) + 1),
                    message: format!("expected {} columns, found {}", first.len(), record.len()),
                });
            }
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(k, raw)| parse_field(path, line, &format!("column {}", k + 1), raw))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            field: "record".into(),
            message: "file contains no rows".into(),
        });
    }
    ResponseMatrix::from_rows(&rows)
}

/// Which parameter a row of a parameter file describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Theta,
    Delta,
    A,
    Omega,
    Tau,
}

impl ParamKind {
    pub fn name(self) -> &'static str {
        match self {
            ParamKind::Theta => "theta",
            ParamKind::Delta => "delta",
            ParamKind::A => "a",
            ParamKind::Omega => "omega",
            ParamKind::Tau => "tau",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Self::Theta, Self::Delta, Self::A, Self::Omega, Self::Tau]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamRow {
    pub kind: ParamKind,
    pub index: usize,
    pub truth: Option<f64>,
    pub estimated: Option<f64>,
}

pub fn write_params(path: &Path, rows: &[ParamRow]) -> Result<()> {
    let mut out = String::from("kind,index,true,estimated\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.kind.name(),
            r.index,
            fmt_opt(r.truth),
            fmt_opt(r.estimated)
        ));
    }
    write_all(path, out.as_bytes())
}

pub fn read_params(path: &Path) -> Result<Vec<ParamRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let expected = ["kind", "index", "true", "estimated"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            field: "header".into(),
            message: format!("expected `{}`", expected.join(",")),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let parse_err = |field: &str, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            field: field.into(),
            message,
        };
        let kind = ParamKind::parse(&record[0])
            .ok_or_else(|| parse_err("kind", format!("unknown parameter kind `{}`", &record[0])))?;
        let index = record[1]
            .parse::<usize>()
            .map_err(|e| parse_err("index", e.to_string()))?;
        let opt = |k: usize, name: &str| -> Result<Option<f64>> {
            match &record[k] {
                "" => Ok(None),
                raw => parse_field(path, line, name, raw).map(Some),
            }
        };
        rows.push(ParamRow {
            kind,
            index,
            truth: opt(2, "true")?,
            estimated: opt(3, "estimated")?,
        });
    }
    Ok(rows)
}

/// Rows for each of `theta`, `delta`, `a`, pairing truth and estimates where
/// available.
pub fn param_rows<'a>(
    truth: Option<(&'a [f64], &'a [f64], &'a [f64])>,
    estimated: Option<(&'a [f64], &'a [f64], &'a [f64])>,
) -> Vec<ParamRow> {
    fn pick<'a>(set: Option<(&'a [f64], &'a [f64], &'a [f64])>, k: usize) -> Option<&'a [f64]> {
        set.map(|(t, d, a)| [t, d, a][k])
    }
    let mut rows = Vec::new();
    for (k, kind) in [ParamKind::Theta, ParamKind::Delta, ParamKind::A]
        .into_iter()
        .enumerate()
    {
        let tv = pick(truth, k);
        let ev = pick(estimated, k);
        let len = tv.map_or(0, <[f64]>::len).max(ev.map_or(0, <[f64]>::len));
        for index in 0..len {
            rows.push(ParamRow {
                kind,
                index,
                truth: tv.and_then(|v| v.get(index).copied()),
                estimated: ev.and_then(|v| v.get(index).copied()),
            });
        }
    }
    rows
}

pub fn write_loss_trace(path: &Path, trace: &[(usize, f64)]) -> Result<()> {
    let mut out = String::from("epoch,loss\n");
    for &(epoch, loss) in trace {
        out.push_str(&format!("{epoch},{}\n", fmt_f64(loss)));
    }
    write_all(path, out.as_bytes())
}
