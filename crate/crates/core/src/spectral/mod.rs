//! Truncated Laplace–Beltrami eigenbases, spectral projection and wave
//! kernel signatures.

mod eigen;
mod wks;

pub use eigen::{smallest_eigenpairs, EigenOptions, Eigenpairs};
pub use wks::{wks, wks_weights, WksParams};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::sparse::SparseOperator;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("requested {k} eigenpairs from an operator of dimension {n}")]
    TooManyEigenpairs { k: usize, n: usize },
    #[error("eigensolver did not converge (residual {residual:e} at Krylov dimension {krylov_dim})")]
    NonConvergence { residual: f64, krylov_dim: usize },
    #[error("shifted operator is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("insufficient spectrum: {0}")]
    InsufficientSpectrum(String),
    #[error("non-finite feature value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}

/// Mass-orthonormal eigenfunctions `Φ` (n×k) with ascending eigenvalues and
/// the diagonal mass defining the inner product.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    phi: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    mass: Vec<f64>,
}

impl SpectralBasis {
    pub fn new(phi: DMatrix<f64>, eigenvalues: Vec<f64>, mass: Vec<f64>) -> Result<Self, SpectralError> {
        if phi.ncols() != eigenvalues.len() || phi.nrows() != mass.len() {
            return Err(SpectralError::DimensionMismatch(format!(
                "Φ is {}×{}, {} eigenvalues, {} mass entries",
                phi.nrows(),
                phi.ncols(),
                eigenvalues.len(),
                mass.len()
            )));
        }
        Ok(Self { phi, eigenvalues, mass })
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn num_vertices(&self) -> usize {
        self.phi.nrows()
    }

    pub fn k(&self) -> usize {
        self.phi.ncols()
    }

    /// `Φ† = Φᵀ M` (k×n).
    pub fn pinv(&self) -> DMatrix<f64> {
        let mut p = self.phi.transpose();
        for (j, m) in self.mass.iter().enumerate() {
            p.column_mut(j).scale_mut(*m);
        }
        p
    }

    /// Keeps the leading `k` eigenpairs.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.k());
        Self {
            phi: self.phi.columns(0, k).into_owned(),
            eigenvalues: self.eigenvalues[..k].to_vec(),
            mass: self.mass.clone(),
        }
    }

    /// Max entry of `|ΦᵀMΦ − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.pinv() * &self.phi;
        (g - DMatrix::identity(self.k(), self.k())).amax()
    }
}

/// Per-vertex descriptors, one row per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(DMatrix<f64>);

impl FeatureMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self, SpectralError> {
        for c in 0..values.ncols() {
            for r in 0..values.nrows() {
                if !values[(r, c)].is_finite() {
                    return Err(SpectralError::NonFinite { row: r, col: c });
                }
            }
        }
        Ok(Self(values))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Copy with every row scaled to unit Euclidean norm (zero rows stay zero).
    pub fn row_normalized(&self) -> Self {
        let mut m = self.0.clone();
        for mut row in m.row_iter_mut() {
            let n = row.norm();
            if n > 0.0 {
                row /= n;
            }
        }
        Self(m)
    }
}

/// Eigenbasis of the cotangent pencil with the default solver settings.
pub fn compute_basis(stiffness: &SparseOperator, mass: &SparseOperator, k: usize) -> Result<SpectralBasis, SpectralError> {
    compute_basis_with(stiffness, mass, k, &EigenOptions::default())
}

pub fn compute_basis_with(
    stiffness: &SparseOperator,
    mass: &SparseOperator,
    k: usize,
    opts: &EigenOptions,
) -> Result<SpectralBasis, SpectralError> {
    if stiffness.dim() != mass.dim() {
        return Err(SpectralError::DimensionMismatch(format!(
            "stiffness {} vs mass {}",
            stiffness.dim(),
            mass.dim()
        )));
    }
    let m = mass.diagonal();
    let pairs = smallest_eigenpairs(stiffness, &m, k, opts)?;
    SpectralBasis::new(pairs.vectors, pairs.values, m)
}

/// Spectral coefficients `A = Φᵀ M F` (k×d).
pub fn project(basis: &SpectralBasis, features: &FeatureMatrix) -> Result<DMatrix<f64>, SpectralError> {
    if features.rows() != basis.num_vertices() {
        return Err(SpectralError::DimensionMismatch(format!(
            "{} feature rows for a basis on {} vertices",
            features.rows(),
            basis.num_vertices()
        )));
    }
    Ok(basis.pinv() * features.values())
}
