//! CSV ingestion.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ordseq::data_model::Dataset;

use crate::CliError;

/// A numeric table read from CSV. Missing cells are stored as NaN.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<String>,
    /// Row-major values.
    pub rows: Vec<Vec<f64>>,
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t == "NA"
}

pub fn read_table(path: &Path) -> Result<Table, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut seen = HashMap::new();
    for (j, h) in header.iter().enumerate() {
        if let Some(prev) = seen.insert(h.as_str(), j) {
            return Err(CliError::Schema(format!(
                "duplicate column name '{h}' (columns {prev} and {j})"
            )));
        }
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                if is_missing(cell) {
                    Ok(f64::NAN)
                } else {
                    cell.trim().parse::<f64>().map_err(|_| {
                        CliError::Schema(format!(
                            "row {}, column '{}': cannot parse '{cell}' as a number",
                            i + 1,
                            header[j]
                        ))
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Schema(format!("{}: no data rows", path.display())));
    }
    Ok(Table { header, rows })
}

impl Table {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Design matrix for `columns` (in that order) and its observation mask.
    pub fn design(&self, columns: &[usize]) -> (DMatrix<f64>, DMatrix<bool>) {
        let n = self.rows.len();
        let x = DMatrix::from_fn(n, columns.len(), |i, j| {
            let v = self.rows[i][columns[j]];
            if v.is_nan() { 0.0 } else { v }
        });
        let mask = DMatrix::from_fn(n, columns.len(), |i, j| !self.rows[i][columns[j]].is_nan());
        (x, mask)
    }
}

/// Split a table into a dataset with `response` as the target. The mask is
/// attached only when some predictor cell is missing.
pub fn to_dataset(table: &Table, response: &str) -> Result<Dataset, CliError> {
    let r = table
        .column_index(response)
        .ok_or_else(|| CliError::Schema(format!("response column '{response}' not found")))?;
    let cols: Vec<usize> = (0..table.header.len()).filter(|&j| j != r).collect();
    if cols.is_empty() {
        return Err(CliError::Schema("no predictor columns".into()));
    }
    let y: Vec<f64> = table.rows.iter().map(|row| row[r]).collect();
    if let Some(i) = y.iter().position(|v| v.is_nan()) {
        return Err(CliError::Schema(format!("response is missing in row {}", i + 1)));
    }
    let (x, mask) = table.design(&cols);
    let names = cols.iter().map(|&j| table.header[j].clone()).collect();
    let mut data = Dataset::new(x, DVector::from_vec(y))?.with_column_names(names)?;
    if mask.iter().any(|m| !m) {
        data = data.with_mask(mask)?;
    }
    Ok(data)
}
