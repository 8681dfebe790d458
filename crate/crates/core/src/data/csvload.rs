//! Reader for rectangular numeric CSV tables with one integer label
//! column; every other column becomes a feature in file order. An
//! optional header row is detected by a non-numeric first cell.

use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::{from_f64, Scalar};

/// Load a CSV table as a dataset, taking `label_column` (zero-based) as
/// the class index and the remaining columns as features.
pub fn load_csv<F: Scalar>(path: &Path, label_column: usize) -> Result<Dataset<F>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::ingest(format!("{}: {e}", path.display())))?;

    let mut examples: Vec<(Vec<F>, usize)> = Vec::new();
    let mut max_label = 0usize;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::ingest(format!("{}: {e}", path.display())))?;
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or(i as u64 + 1);
        if i == 0 {
            let first = record.get(0).unwrap_or("");
            if first.trim().parse::<f64>().is_err() {
                continue;
            }
        }
        if label_column >= record.len() {
            return Err(Error::ingest(format!(
                "{} line {line}: label column {label_column} out of range for {} columns",
                path.display(),
                record.len()
            )));
        }
        let mut features = Vec::with_capacity(record.len() - 1);
        let mut label = 0usize;
        for (col, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if col == label_column {
                let value: i64 = cell.parse().map_err(|_| {
                    Error::ingest(format!(
                        "{} line {line}, column {col}: cannot parse '{cell}' as an integer label",
                        path.display()
                    ))
                })?;
                if value < 0 {
                    return Err(Error::ingest(format!(
                        "{} line {line}, column {col}: label {value} is negative",
                        path.display()
                    )));
                }
                label = value as usize;
            } else {
                let value: f64 = cell.parse().map_err(|_| {
                    Error::ingest(format!(
                        "{} line {line}, column {col}: cannot parse '{cell}' as a number",
                        path.display()
                    ))
                })?;
                features.push(from_f64::<F>(value));
            }
        }
        max_label = max_label.max(label);
        examples.push((features, label));
    }

    if examples.is_empty() {
        return Err(Error::ingest(format!("{}: no data rows", path.display())));
    }
    let input_dim = examples[0].0.len();
    Dataset::new(examples, max_label + 1, input_dim)
        .map_err(|e| Error::ingest(format!("{}: {e}", path.display())))
}
