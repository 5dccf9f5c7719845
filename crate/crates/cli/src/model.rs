//! Persisted model document.

use std::path::Path;

use ordseq::data_model::{Ordering, StandardizationInfo, SubsetSchedule};
use ordseq::lasso_engine::{LambdaGrid, SparseCoef};
use ordseq::selection::FitMode;
use serde::{Deserialize, Serialize};

use crate::data::Table;
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selected {
    pub k: usize,
    pub l: usize,
    pub subset_size: usize,
    pub lambda: f64,
    pub cv_score: f64,
    pub candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub seed: u64,
    pub folds: usize,
    pub created_unix: u64,
    /// SHA-256 of the training CSV bytes.
    pub source_sha256: String,
    pub source_path: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub schema_version: u32,
    pub mode: FitMode,
    pub response: String,
    pub feature_names: Vec<String>,
    /// Raw-unit coefficients; `intercept` is carried inside.
    pub coefficients: SparseCoef,
    pub standardization: StandardizationInfo,
    pub ordering: Ordering,
    pub schedule: SubsetSchedule,
    pub lambda_grid: LambdaGrid,
    pub selected: Selected,
    pub fitted_values: Vec<f64>,
    pub metadata: Metadata,
}

impl FittedModel {
    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Io(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let model: FittedModel = serde_json::from_str(&text)
            .map_err(|e| CliError::Schema(format!("{}: not a model file: {e}", path.display())))?;
        if model.schema_version != SCHEMA_VERSION {
            return Err(CliError::Schema(format!(
                "model schema version {} is not supported (expected {SCHEMA_VERSION})",
                model.schema_version
            )));
        }
        if model.feature_names.len() != model.coefficients.p || model.standardization.p() != model.coefficients.p {
            return Err(CliError::Schema("model file is internally inconsistent".into()));
        }
        Ok(model)
    }

    /// Predict for every row of `table`, matching columns by name. Missing
    /// cells take the training mean of their column.
    pub fn predict_table(&self, table: &Table) -> Result<(Vec<f64>, Vec<String>), CliError> {
        let mut cols = Vec::with_capacity(self.feature_names.len());
        let mut absent = Vec::new();
        for name in &self.feature_names {
            match table.column_index(name) {
                Some(j) => cols.push(j),
                None => absent.push(name.clone()),
            }
        }
        if !absent.is_empty() {
            return Err(CliError::Schema(format!("missing columns: {}", absent.join(", "))));
        }
        let extra = table
            .header
            .iter()
            .filter(|h| **h != self.response && !self.feature_names.contains(h))
            .cloned()
            .collect();
        let c = &self.coefficients;
        let preds = table
            .rows
            .iter()
            .map(|row| {
                let mut v = c.intercept;
                for (&j, &b) in c.indices.iter().zip(&c.values) {
                    let x = row[cols[j]];
                    v += b * if x.is_nan() { self.standardization.centers[j] } else { x };
                }
                v
            })
            .collect();
        Ok((preds, extra))
    }
}
