use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::metrics::Outcome;

/// One method/hyperparameter outcome on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub method: String,
    pub hyperparameter: String,
    pub replicate: usize,
    /// Threshold the outcome was scored against.
    pub epsilon: Option<f64>,
    pub declared: bool,
    pub demos_used: usize,
    /// Demonstrations beyond the initial seed set.
    pub demos_requested: usize,
    pub unique_states: usize,
    /// Unique demonstrated states over the number of states.
    pub sample_efficiency: f64,
    pub final_bound: Option<f64>,
    pub true_nevd: Option<f64>,
    pub true_piob: Option<f64>,
    /// Final bound minus the matching ground-truth metric.
    pub bound_error: Option<f64>,
    /// Bound on the correct side of the ground truth.
    pub bound_correct: Option<bool>,
    /// Fraction of states where the learned action is optimal.
    pub policy_optimality: f64,
    pub outcome: Option<Outcome>,
    pub error: Option<String>,
}

impl ReplicateRecord {
    pub fn failed(method: &str, hyperparameter: &str, replicate: usize, error: String) -> Self {
        Self {
            method: method.into(),
            hyperparameter: hyperparameter.into(),
            replicate,
            epsilon: None,
            declared: false,
            demos_used: 0,
            demos_requested: 0,
            unique_states: 0,
            sample_efficiency: 0.0,
            final_bound: None,
            true_nevd: None,
            true_piob: None,
            bound_error: None,
            bound_correct: None,
            policy_optimality: 0.0,
            outcome: None,
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub hyperparameter: String,
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Csv,
    Json,
}

impl ExportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ExportFormat::Csv => "csv",
            ExportFormat::Json => "json",
        }
    }
}

/// Writes rows with a stable schema.
pub fn export_rows<R: Serialize>(rows: &[R], path: impl AsRef<Path>, format: ExportFormat) -> Result<()> {
    if rows.is_empty() {
        return Err(HarnessError::Config("nothing to export".into()));
    }
    let file = BufWriter::new(File::create(path)?);
    match format {
        ExportFormat::Csv => {
            let mut writer = csv::Writer::from_writer(file);
            for row in rows {
                writer.serialize(row)?;
            }
            writer.flush()?;
        }
        ExportFormat::Json => serde_json::to_writer_pretty(file, rows)?,
    }
    Ok(())
}

pub fn import_rows<R: for<'de> Deserialize<'de>>(path: impl AsRef<Path>, format: ExportFormat) -> Result<Vec<R>> {
    let file = BufReader::new(File::open(path)?);
    Ok(match format {
        ExportFormat::Csv => csv::Reader::from_reader(file)
            .deserialize()
            .collect::<std::result::Result<Vec<R>, _>>()?,
        ExportFormat::Json => serde_json::from_reader(file)?,
    })
}

pub fn export_results(table: &[AggregateRow], path: impl AsRef<Path>, format: ExportFormat) -> Result<()> {
    export_rows(table, path, format)
}

pub fn import_results(path: impl AsRef<Path>, format: ExportFormat) -> Result<Vec<AggregateRow>> {
    import_rows(path, format)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> Vec<AggregateRow> {
        vec![
            AggregateRow {
                method: "nevd".into(),
                hyperparameter: "eps=0.1".into(),
                metric: "f1".into(),
                mean: 0.1 + 0.2,
                stderr: 1.0 / 3.0,
                n: 100,
            },
            AggregateRow {
                method: "convergence".into(),
                hyperparameter: "p=2,eps=0.3".into(),
                metric: "bound_error".into(),
                mean: -1.234_567_890_123_456_7e-5,
                stderr: 2.0f64.sqrt(),
                n: 7,
            },
        ]
    }

    #[test]
    fn round_trips_losslessly() {
        let dir = tempfile::tempdir().unwrap();
        for format in [ExportFormat::Csv, ExportFormat::Json] {
            let path = dir.path().join(format!("table.{}", format.extension()));
            export_results(&table(), &path, format).unwrap();
            assert_eq!(import_results(&path, format).unwrap(), table());
        }
    }

    #[test]
    fn csv_schema_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        export_results(&table(), &path, ExportFormat::Csv).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "method,hyperparameter,metric,mean,stderr,n");
    }

    #[test]
    fn empty_table_and_bad_destination_fail() {
        let dir = tempfile::tempdir().unwrap();
        assert!(export_results(&[], dir.path().join("x.csv"), ExportFormat::Csv).is_err());
        let missing = dir.path().join("missing").join("x.csv");
        assert!(matches!(export_results(&table(), missing, ExportFormat::Csv), Err(HarnessError::Io(_))));
    }
}
