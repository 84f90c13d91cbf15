//! Tabular data: CSV ingestion and the in-memory dataset.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpvimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Binary,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Regression => "regression",
            Task::Binary => "binary",
        }
    }
}

/// Feature matrix (`n x p`, column-major) with names, outcome and task.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    outcome_name: String,
    x: DMatrix<f64>,
    y: Vec<f64>,
    task: Task,
    dropped_rows: usize,
}

impl Dataset {
    pub fn new(names: Vec<String>, x: DMatrix<f64>, y: Vec<f64>, task: Task) -> Result<Self> {
        if names.len() != x.ncols() {
            return Err(SpvimError::Data(format!("{} feature names for {} columns", names.len(), x.ncols())));
        }
        if y.len() != x.nrows() {
            return Err(SpvimError::Data(format!("{} outcomes for {} rows", y.len(), x.nrows())));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(SpvimError::Data("non-finite value in data".into()));
        }
        if task == Task::Binary {
            check_binary(&y)?;
        }
        Ok(Self { names, outcome_name: "y".into(), x, y, task, dropped_rows: 0 })
    }

    pub fn with_outcome_name(mut self, name: impl Into<String>) -> Self {
        self.outcome_name = name.into();
        self
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn task(&self) -> Task {
        self.task
    }

    /// Rows with a missing cell that were skipped during loading.
    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// New dataset holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let x = self.x.select_rows(rows);
        let y = rows.iter().map(|&r| self.y[r]).collect();
        Dataset {
            names: self.names.clone(),
            outcome_name: self.outcome_name.clone(),
            x,
            y,
            task: self.task,
            dropped_rows: 0,
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = self.names.clone();
        header.push(self.outcome_name.clone());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut record: Vec<String> = (0..self.p()).map(|j| self.x[(i, j)].to_string()).collect();
            record.push(self.y[i].to_string());
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_binary(y: &[f64]) -> Result<()> {
    let bad: BTreeSet<String> = y.iter().filter(|&&v| v != 0.0 && v != 1.0).map(|v| v.to_string()).collect();
    if !bad.is_empty() {
        let shown: Vec<String> = bad.into_iter().take(10).collect();
        return Err(SpvimError::Data(format!("binary outcome must be 0/1, found {}", shown.join(", "))));
    }
    Ok(())
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "na" | "NaN" | "nan" | "null" | "NULL")
}

/// Reads a comma-delimited file with a header row. Rows with any missing
/// cell are dropped and counted; remaining cells must parse as numbers.
pub fn load_dataset(path: impl AsRef<Path>, outcome: &str, task: Task) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let outcome_col = headers.iter().position(|h| h == outcome).ok_or_else(|| {
        SpvimError::Data(format!(
            "outcome column '{outcome}' not found in {} (columns: {})",
            path.display(),
            headers.join(", ")
        ))
    })?;
    let names: Vec<String> =
        headers.iter().enumerate().filter(|&(i, _)| i != outcome_col).map(|(_, h)| h.clone()).collect();
    if names.is_empty() {
        return Err(SpvimError::Data("no feature columns".into()));
    }

    let mut values = Vec::new();
    let mut y = Vec::new();
    let mut dropped = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.iter().any(is_missing) {
            dropped += 1;
            continue;
        }
        let mut parsed = Vec::with_capacity(record.len());
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                SpvimError::Data(format!("row {}: column '{}' has non-numeric value '{cell}'", row + 2, headers[col]))
            })?;
            parsed.push(v);
        }
        y.push(parsed[outcome_col]);
        values.extend(parsed.iter().enumerate().filter(|&(i, _)| i != outcome_col).map(|(_, v)| *v));
    }
    if y.is_empty() {
        return Err(SpvimError::Data(format!("{} has no complete rows", path.display())));
    }
    let x = DMatrix::from_row_slice(y.len(), names.len(), &values);
    let mut data = Dataset::new(names, x, y, task)?.with_outcome_name(outcome);
    data.dropped_rows = dropped;
    if dropped > 0 {
        log::warn!("dropped {dropped} rows with missing cells from {}", path.display());
    }
    Ok(data)
}
