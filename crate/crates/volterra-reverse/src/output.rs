//! CSV/JSON emission helpers.
//!
//! Floats are printed with Rust's shortest round-trip formatting (the
//! documented byte-stability rule for artifacts); JSON never contains NaN
//! or infinities — non-finite values are encoded as strings.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde_json::{Map, Value};

use crate::error::Result;

/// Shortest decimal that round-trips to the same f64.
pub fn format_f64(v: f64) -> String {
    format!("{v}")
}

/// JSON value for a float; non-finite values become strings ("nan", "inf", "-inf").
pub fn json_f64(v: f64) -> Value {
    match serde_json::Number::from_f64(v) {
        Some(n) => Value::Number(n),
        None => Value::String(if v.is_nan() {
            "nan".to_string()
        } else if v > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        }),
    }
}

/// RFC-4180-style CSV with a header row and optional `#`-comment lines.
pub fn write_csv(
    path: &Path,
    comments: &[String],
    header: &[&str],
    rows: &[Vec<f64>],
) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format_f64(*v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// Square matrix dump with a comment header (Gram/covariance artifacts).
pub fn write_matrix_csv(path: &Path, comment: &str, m: &Array2<f64>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# {comment}")?;
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format_f64(*v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// Pretty JSON with a trailing newline, keys in insertion order.
pub fn write_json(path: &Path, value: &Map<String, Value>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &Value::Object(value.clone()))
        .map_err(|e| crate::error::VolterraError::Config(format!("json write: {e}")))?;
    writeln!(w)?;
    Ok(())
}
