//! Maximum spanning arborescence, tree metrics and Laplacian spectra.
//!
//! Edge convention everywhere: `weights[i][j]` is the weight of the edge
//! `j → i` (row = dependent, column = head). This matches influence scores,
//! where `S[i][j]` is how much token `j` drives token `i`.

pub mod arborescence;
pub mod spectral;

pub use arborescence::{max_arborescence, tree_metrics, Arborescence, TreeMetrics};
pub use spectral::{laplacian, laplacian_lambda_max, maxcut_bound_check, symmetric_eigenvalues, MaxCutCheck, MAX_BRUTE_FORCE_NODES};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedDigraph {
    weights: Matrix,
}

impl WeightedDigraph {
    /// Square weights; the diagonal is ignored (self-loops are never edges).
    pub fn new(weights: Matrix) -> Result<Self> {
        let (r, c) = weights.shape();
        if r != c || r == 0 {
            return Err(Error::input(format!("graph weights must be a non-empty square matrix, got {r}x{c}")));
        }
        if !weights.is_finite() {
            return Err(Error::input("graph weights must be finite"));
        }
        Ok(WeightedDigraph { weights })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        WeightedDigraph::new(Matrix::from_rows(rows))
    }

    pub fn n(&self) -> usize {
        self.weights.rows()
    }

    /// Weight of `head → dep`.
    pub fn weight(&self, head: usize, dep: usize) -> f64 {
        self.weights.get(dep, head)
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    /// JSON adjacency dump for fixtures and debugging.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }
}
