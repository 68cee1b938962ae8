//! CSV ingestion and output. Numbers are written with 17 significant digits
//! in scientific notation, comma separated, LF line endings.

use std::fs::File;
use std::path::Path;

use beran_core::synthetic::FullSample;
use beran_core::{Dataset, Indicator, ObservedSample};
use serde::{Deserialize, Serialize};

use crate::config::{DatasetSchema, NaPolicy};
use crate::error::{csv_err, io_err, CliError, Result};

/// Fixed numeric format used in every output file.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = File::create(path).map_err(io_err(path))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

/// Writes a header and rows of already formatted cells.
pub fn write_table<S: AsRef<str>>(path: &Path, header: &[S], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header.iter().map(|s| s.as_ref())).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

/// `time,event,x1..xp` for a generated sample.
pub fn write_sample(path: &Path, sample: &FullSample) -> Result<()> {
    let dim = sample.x.first().map_or(0, Vec::len);
    let mut header = vec!["time".to_string(), "event".to_string()];
    header.extend((1..=dim).map(|k| format!("x{k}")));
    let rows = (0..sample.len()).map(|i| {
        let mut row = vec![fmt_num(sample.t[i]), if sample.delta[i] { "1" } else { "0" }.to_string()];
        row.extend(sample.x[i].iter().map(|&v| fmt_num(v)));
        row
    });
    write_table(path, &header, rows)
}

/// Per-column min-max scaling of covariates to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateScaler {
    pub columns: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl CovariateScaler {
    pub fn fit(columns: &[String], rows: &[Vec<f64>]) -> Self {
        let p = columns.len();
        let mut min = vec![f64::INFINITY; p];
        let mut max = vec![f64::NEG_INFINITY; p];
        for r in rows {
            for k in 0..p {
                min[k] = min[k].min(r[k]);
                max[k] = max[k].max(r[k]);
            }
        }
        Self { columns: columns.to_vec(), min, max }
    }

    fn range(&self, k: usize) -> f64 {
        let r = self.max[k] - self.min[k];
        if r > 0.0 { r } else { 1.0 }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(k, v)| (v - self.min[k]) / self.range(k)).collect()
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter().enumerate().map(|(k, v)| v * self.range(k) + self.min[k]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestionReport {
    pub loaded: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    /// Observations with scaled covariates.
    pub dataset: Dataset,
    pub raw_covariates: Vec<Vec<f64>>,
    pub scaler: CovariateScaler,
    pub report: IngestionReport,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "na" | "NaN" | "nan" | ".")
}

/// Reads a CSV with a header row according to `schema`.
pub fn load_csv(path: &Path, schema: &DatasetSchema) -> Result<LoadedData> {
    schema.validate()?;
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = reader.headers().map_err(csv_err(path))?.clone();
    let find = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| CliError::MissingColumn(name.to_string()));
    let indicator_name = schema.event_column.as_deref().or(schema.probability_column.as_deref()).expect("validated schema");
    let mut columns = vec![(schema.time_column.as_str(), find(&schema.time_column)?), (indicator_name, find(indicator_name)?)];
    for c in &schema.covariate_columns {
        columns.push((c.as_str(), find(c)?));
    }

    let mut times = Vec::new();
    let mut indicators = Vec::new();
    let mut covariates = Vec::new();
    let mut dropped = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err(path))?;
        // Data rows are numbered from 1, after the header.
        let row = r + 1;
        let mut values = Vec::with_capacity(columns.len());
        let mut missing = false;
        for &(name, idx) in &columns {
            let cell = record.get(idx).unwrap_or("");
            if is_missing(cell) {
                if schema.na_policy == NaPolicy::Fail {
                    return Err(CliError::MissingValue { row, column: name.to_string() });
                }
                missing = true;
                break;
            }
            let v: f64 = cell.parse().map_err(|_| CliError::NonNumericCell { row, column: name.to_string(), value: cell.to_string() })?;
            if !v.is_finite() {
                return Err(CliError::NonNumericCell { row, column: name.to_string(), value: cell.to_string() });
            }
            values.push(v);
        }
        if missing {
            dropped += 1;
            continue;
        }
        let indicator = if schema.event_column.is_some() {
            if values[1] == 1.0 {
                Indicator::Hard(true)
            } else if values[1] == 0.0 {
                Indicator::Hard(false)
            } else {
                return Err(CliError::NonNumericCell { row, column: indicator_name.to_string(), value: values[1].to_string() });
            }
        } else if (0.0..=1.0).contains(&values[1]) {
            Indicator::Soft(values[1])
        } else {
            return Err(CliError::NonNumericCell { row, column: indicator_name.to_string(), value: values[1].to_string() });
        };
        times.push(values[0]);
        indicators.push(indicator);
        covariates.push(values[2..].to_vec());
    }
    if times.is_empty() {
        return Err(CliError::EmptyAfterFiltering);
    }
    let scaler = CovariateScaler::fit(&schema.covariate_columns, &covariates);
    let samples = times
        .iter()
        .zip(&indicators)
        .zip(&covariates)
        .map(|((&t, &ind), x)| ObservedSample::new(t, scaler.transform(x), ind))
        .collect();
    let dataset = Dataset::new(samples)?;
    Ok(LoadedData { report: IngestionReport { loaded: times.len(), dropped }, dataset, raw_covariates: covariates, scaler })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format_is_fixed() {
        assert_eq!(fmt_num(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_num(-2.5), "-2.5000000000000000e0");
        assert_eq!(fmt_num(f64::NAN), "NaN");
        assert_eq!(fmt_num(0.1).parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn scaler_inverts() {
        let cols = vec!["a".to_string(), "b".to_string()];
        let rows = vec![vec![1.0, 5.0], vec![3.0, 5.0], vec![2.0, 5.0]];
        let s = CovariateScaler::fit(&cols, &rows);
        assert_eq!(s.transform(&[2.0, 5.0]), vec![0.5, 0.0]);
        assert_eq!(s.inverse(&s.transform(&[3.0, 5.0])), vec![3.0, 5.0]);
    }
}
