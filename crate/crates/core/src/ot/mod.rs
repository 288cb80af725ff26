//! Optimal transport kernels: closed-form 1D Wasserstein, sliced and
//! energy-based sliced Wasserstein, log-domain Sinkhorn and an exact
//! min-cost-flow solver for small instances.

mod exact;
mod one_d;
mod sinkhorn;
mod sliced;

pub use exact::{exact_transport, exact_wasserstein_lp, MAX_LP_ENTRIES};
pub(crate) use one_d::cost_1d;
pub use one_d::{quantile_plan, sorted_order, wasserstein_1d, wpp_1d, PlanEntry};
pub use sinkhorn::{sinkhorn, sq_euclidean_cost, SinkhornOptions, SinkhornResult};
pub use sliced::{ebsw_is, energy_weighted_mean, energy_weights, sample_projections, slice_distances, sw_distance, ProjectionSet};

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OtError {
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite cost entry at ({row}, {col})")]
    NonFiniteCost { row: usize, col: usize },
    #[error("problem of {n_x}×{n_y} exceeds the exact solver's size cap")]
    TooLarge { n_x: usize, n_y: usize },
}

/// Weight sums must match one within this tolerance.
pub const WEIGHT_TOL: f64 = 1e-12;

pub(crate) fn check_weights(weights: &[f64], what: &str) -> Result<(), OtError> {
    if weights.is_empty() {
        return Err(OtError::InvalidWeights(format!("{what}: empty")));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(OtError::InvalidWeights(format!("{what}: entry {w}")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_TOL * weights.len().max(1) as f64 {
        return Err(OtError::InvalidWeights(format!("{what}: sum {total}")));
    }
    Ok(())
}

/// An empirical measure: `s` support points in `R^d` with probability weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSamples {
    values: DMatrix<f64>,
    weights: Vec<f64>,
}

impl WeightedSamples {
    pub fn new(values: DMatrix<f64>, weights: Vec<f64>) -> Result<Self, OtError> {
        if values.nrows() != weights.len() {
            return Err(OtError::DimensionMismatch(format!(
                "{} samples, {} weights",
                values.nrows(),
                weights.len()
            )));
        }
        check_weights(&weights, "samples")?;
        Ok(Self { values, weights })
    }

    pub fn uniform(values: DMatrix<f64>) -> Result<Self, OtError> {
        let s = values.nrows();
        if s == 0 {
            return Err(OtError::InvalidWeights("samples: empty".into()));
        }
        Self::new(values, vec![1.0 / s as f64; s])
    }

    /// One-dimensional samples.
    pub fn from_1d(values: &[f64], weights: Vec<f64>) -> Result<Self, OtError> {
        Self::new(DMatrix::from_column_slice(values.len(), 1, values), weights)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

/// A transport plan together with the marginals it is meant to satisfy.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub matrix: DMatrix<f64>,
    pub source: Vec<f64>,
    pub target: Vec<f64>,
}

impl Coupling {
    /// Largest absolute row- or column-sum violation.
    pub fn marginal_error(&self) -> f64 {
        let rows = self
            .matrix
            .row_iter()
            .zip(&self.source)
            .map(|(r, s)| (r.sum() - s).abs());
        let cols = self
            .matrix
            .column_iter()
            .zip(&self.target)
            .map(|(c, t)| (c.sum() - t).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }

    /// `⟨π, c⟩`.
    pub fn cost(&self, cost: &DMatrix<f64>) -> f64 {
        self.matrix.component_mul(cost).sum()
    }
}

/// `c_ij = ‖a_i − b_j‖^p`.
pub fn ground_cost(a: &DMatrix<f64>, b: &DMatrix<f64>, p: f64) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| (a.row(i) - b.row(j)).norm().powf(p))
}

pub(crate) fn check_p(p: f64) -> Result<(), OtError> {
    if p.is_finite() && p >= 1.0 {
        Ok(())
    } else {
        Err(OtError::InvalidParameter(format!("p = {p} (need p ≥ 1)")))
    }
}
