//! CSV ingestion, matrix emission and atomic file output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::CliError;
use crate::signal::{Ensemble, TimeSeries};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parses a CSV with one labeled column per series.
pub fn parse_ensemble(bytes: &[u8], origin: &str) -> Result<Ensemble, CliError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| CliError::input(format!("{origin}: cannot read header row: {e}")))?
        .clone();
    if headers.len() < 2 {
        return Err(CliError::input(format!(
            "{origin}: need at least 2 columns, found {}",
            headers.len()
        )));
    }
    let labels: Vec<String> = headers.iter().map(str::to_string).collect();
    if let Some(c) = labels.iter().position(String::is_empty) {
        return Err(CliError::input(format!("{origin}: line 1, column {}: empty label", c + 1)));
    }
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); labels.len()];
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            CliError::input(format!("{origin}: line {line}: {e}"))
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        for (c, field) in record.iter().enumerate() {
            if field.is_empty() {
                return Err(CliError::input(format!(
                    "{origin}: line {line}, column {} ('{}'): missing value",
                    c + 1,
                    labels[c]
                )));
            }
            let v: f64 = field.parse().map_err(|_| {
                CliError::input(format!(
                    "{origin}: line {line}, column {} ('{}'): cannot parse '{field}' as a number",
                    c + 1,
                    labels[c]
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::input(format!(
                    "{origin}: line {line}, column {} ('{}'): non-finite value",
                    c + 1,
                    labels[c]
                )));
            }
            columns[c].push(v);
        }
    }
    let series = labels
        .into_iter()
        .zip(columns)
        .map(|(l, v)| TimeSeries::new(l, v))
        .collect::<crate::Result<Vec<_>>>()?;
    Ok(Ensemble::new(series)?)
}

pub fn ensemble_csv(series: &[TimeSeries]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(series.iter().map(TimeSeries::label)).map_err(csv_err)?;
    let len = series.first().map(TimeSeries::len).unwrap_or(0);
    for t in 0..len {
        w.write_record(series.iter().map(|s| s.samples()[t].to_string())).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| CliError::io(e.to_string()))
}

/// Square matrix with a header row and a leading label column.
pub fn matrix_csv(labels: &[String], rows: &[Vec<f64>]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![String::new()];
    header.extend(labels.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (label, row) in labels.iter().zip(rows) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| CliError::io(e.to_string()))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::io(e.to_string())
}

pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::io(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    pub file: String,
    pub sha256: String,
}

/// Output directory whose files are written through a temporary name and
/// renamed into place.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<FileRecord>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)
            .map_err(|e| CliError::io(format!("cannot create '{}': {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write_raw(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let tmp = self.root.join(format!(".{name}.tmp"));
        let dest = self.root.join(name);
        fs::write(&tmp, bytes).map_err(|e| CliError::io(format!("cannot write '{}': {e}", tmp.display())))?;
        fs::rename(&tmp, &dest).map_err(|e| CliError::io(format!("cannot move into '{}': {e}", dest.display())))
    }

    /// Writes a reproducible artifact and records its checksum.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        self.write_raw(name, bytes)?;
        self.written.push(FileRecord {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    /// Writes a file whose content varies between runs; it is not checksummed.
    pub fn write_volatile(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        self.write_raw(name, bytes)
    }

    pub fn records(&self) -> Vec<FileRecord> {
        let mut r = self.written.clone();
        r.sort_by(|a, b| a.file.cmp(&b.file));
        r
    }
}
