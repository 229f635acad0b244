//! Finitely supported probability measures: the universal currency of the
//! crate. A [`DiscreteMeasure`] is a support matrix (one row per atom) plus a
//! weight vector summing to one.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{input_err, Result};

/// Tolerance on the weight normalization |sum w - 1|.
pub const WEIGHT_TOL: f64 = 1e-9;

/// A probability measure with finite support in R^d.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DiscreteMeasure {
    support: Array2<f64>,
    weights: Array1<f64>,
}

impl DiscreteMeasure {
    /// Builds a measure, validating weights and coordinates.
    pub fn new(support: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        if support.nrows() == 0 || support.ncols() == 0 {
            return input_err("measure needs at least one atom in dimension >= 1");
        }
        if support.nrows() != weights.len() {
            return input_err(format!(
                "support has {} atoms but {} weights given",
                support.nrows(),
                weights.len()
            ));
        }
        if support.iter().any(|v| !v.is_finite()) {
            return input_err("support coordinates must be finite");
        }
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return input_err("weights must be finite and nonnegative");
        }
        let total: f64 = weights.sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return input_err(format!("weights must sum to 1, got {total}"));
        }
        Ok(Self { support, weights })
    }

    /// Uniform weights over the given support rows.
    pub fn uniform(support: Array2<f64>) -> Result<Self> {
        let n = support.nrows();
        if n == 0 {
            return input_err("measure needs at least one atom");
        }
        let weights = Array1::from_elem(n, 1.0 / n as f64);
        Self::new(support, weights)
    }

    /// A single Dirac mass at `point`.
    pub fn dirac(point: &[f64]) -> Result<Self> {
        let support = Array2::from_shape_vec((1, point.len()), point.to_vec())
            .map_err(|e| crate::error::Error::InvalidInput(e.to_string()))?;
        Self::uniform(support)
    }

    /// Uniform 1D measure from a list of real values.
    pub fn from_1d(values: &[f64]) -> Result<Self> {
        let support = Array2::from_shape_vec((values.len(), 1), values.to_vec())
            .map_err(|e| crate::error::Error::InvalidInput(e.to_string()))?;
        Self::uniform(support)
    }

    pub fn len(&self) -> usize {
        self.support.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // n >= 1 by construction
    }

    pub fn dim(&self) -> usize {
        self.support.ncols()
    }

    pub fn support(&self) -> ArrayView2<'_, f64> {
        self.support.view()
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.weights.view()
    }

    pub fn into_parts(self) -> (Array2<f64>, Array1<f64>) {
        (self.support, self.weights)
    }
}
