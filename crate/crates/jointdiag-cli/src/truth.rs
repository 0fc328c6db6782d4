//! Ground-truth sidecar written next to generated matrix sets.
//!
//! The basis is stored flat in row-major order; its shape is recovered from
//! the eigenvalue rows (M = row length) or, when no eigenvalues apply (the
//! signal pipelines), by taking the matrix to be square.

use jointdiag::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
pub struct TruthSidecar {
    /// Row-major N x M reference basis.
    pub b_true: Vec<f64>,
    /// K eigenvalue rows of length M; empty for the signal pipelines.
    pub u_true: Vec<Vec<f64>>,
    pub sigma2: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub samples_per_class: Option<usize>,
}

impl TruthSidecar {
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self).expect("sidecar serialization"))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::Parse(format!("truth sidecar: {e}")))
    }

    /// Reference basis as a matrix, given the expected column count.
    pub fn basis(&self, m: usize) -> Result<DMatrix<f64>> {
        if m == 0 || self.b_true.len() % m != 0 {
            return Err(Error::Dimension(format!(
                "stored basis has {} entries, not divisible into {m} columns",
                self.b_true.len()
            )));
        }
        let n = self.b_true.len() / m;
        jointdiag::model::from_row_major(n, m, &self.b_true)
    }

    /// Column count: from the eigenvalue rows when present, else square.
    pub fn column_count(&self) -> Result<usize> {
        if let Some(row) = self.u_true.first() {
            return Ok(row.len());
        }
        let n = (self.b_true.len() as f64).sqrt().round() as usize;
        if n * n != self.b_true.len() {
            return Err(Error::Dimension(format!(
                "stored basis has {} entries and no eigenvalue rows; cannot infer its shape",
                self.b_true.len()
            )));
        }
        Ok(n)
    }
}
