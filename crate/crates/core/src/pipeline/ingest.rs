//! CSV ingestion of pre-downloaded series (`date,value`, ISO dates).

use chrono::NaiveDate;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::series::{Frequency, SeriesError, TimeSeries};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: header must be 'date,value', found '{found}'", path.display())]
    Header { path: PathBuf, found: String },
    #[error("{}: row {row}: {reason}", path.display())]
    Row { path: PathBuf, row: usize, reason: String },
}

/// Reads a two-column CSV into a validated [`TimeSeries`].
///
/// Row numbers in errors are file line numbers (the header is line 1).
pub fn ingest_csv(path: &Path, id: &str, frequency: Frequency, units: &str) -> Result<TimeSeries, IngestError> {
    let io = |source| IngestError::Io { path: path.to_path_buf(), source };
    let text = std::fs::read_to_string(path).map_err(io)?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(&text);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let row_err = |row: usize, reason: String| IngestError::Row { path: path.to_path_buf(), row, reason };

    let headers = reader
        .headers()
        .map_err(|e| row_err(1, e.to_string()))?
        .iter()
        .map(str::to_ascii_lowercase)
        .collect::<Vec<_>>();
    if headers != ["date", "value"] {
        return Err(IngestError::Header {
            path: path.to_path_buf(),
            found: headers.join(","),
        });
    }

    let mut points = Vec::new();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            row_err(row, e.to_string())
        })?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let date_text = record.get(0).unwrap_or_default();
        let value_text = record.get(1).unwrap_or_default();
        let date = NaiveDate::parse_from_str(date_text, "%Y-%m-%d")
            .map_err(|e| row_err(row, format!("bad date '{date_text}': {e}")))?;
        let value: f64 = value_text
            .parse()
            .map_err(|_| row_err(row, format!("bad value '{value_text}'")))?;
        points.push((date, value));
        rows.push(row);
    }
    TimeSeries::new(id, frequency, units, points).map_err(|e| {
        let index = match &e {
            SeriesError::NonMonotone { index, .. }
            | SeriesError::Duplicate { index, .. }
            | SeriesError::Frequency { index, .. }
            | SeriesError::NonFinite { index } => Some(*index),
            _ => None,
        };
        row_err(index.map_or(0, |i| rows[i]), e.to_string())
    })
}
