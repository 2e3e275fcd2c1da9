//! CSV and JSON writers. Column order is fixed so reruns diff cleanly.

use std::path::Path;

use serde::Serialize;

use crate::error::{Result, ScarError};

/// Writes `rows` as CSV with a header taken from the field names.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// The CSV text `write_csv` would produce.
pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| ScarError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| ScarError::Io(e.into()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn csv_err(e: csv::Error) -> ScarError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => ScarError::Io(io),
        other => ScarError::Io(std::io::Error::other(format!("{other:?}"))),
    }
}
