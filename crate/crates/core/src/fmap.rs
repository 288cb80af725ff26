//! Regularized functional maps: the row-wise masked least-squares solve,
//! structural and properness losses, and point-map recovery.

use nalgebra::{Cholesky, DMatrix, Dyn};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FmapError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singular system for functional map row {row} (rank-deficient descriptors without regularization?)")]
    Singular { row: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
}

/// Regularizer weight `λ` and resolvent parameter `γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FmapConfig {
    pub lambda_reg: f64,
    pub resolvent_gamma: f64,
}

impl Default for FmapConfig {
    fn default() -> Self {
        Self {
            lambda_reg: 1e-2,
            resolvent_gamma: 0.5,
        }
    }
}

impl FmapConfig {
    pub fn validate(&self) -> Result<(), FmapError> {
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return Err(FmapError::InvalidConfig(format!("lambda_reg = {}", self.lambda_reg)));
        }
        if !(self.resolvent_gamma > 0.0 && self.resolvent_gamma.is_finite()) {
            return Err(FmapError::InvalidConfig(format!("resolvent_gamma = {}", self.resolvent_gamma)));
        }
        Ok(())
    }
}

/// The two directional maps; `c_xy` sends X-coefficients to Y-coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalMapPair {
    pub c_xy: DMatrix<f64>,
    pub c_yx: DMatrix<f64>,
}

impl FunctionalMapPair {
    pub fn new(c_xy: DMatrix<f64>, c_yx: DMatrix<f64>) -> Result<Self, FmapError> {
        let k = c_xy.nrows();
        if c_xy.shape() != (k, k) || c_yx.shape() != (k, k) {
            return Err(FmapError::DimensionMismatch(format!(
                "C_xy {:?}, C_yx {:?}",
                c_xy.shape(),
                c_yx.shape()
            )));
        }
        if c_xy.iter().chain(c_yx.iter()).any(|v| !v.is_finite()) {
            return Err(FmapError::NonFinite("functional map"));
        }
        Ok(Self { c_xy, c_yx })
    }

    pub fn k(&self) -> usize {
        self.c_xy.nrows()
    }
}

fn normalized(evals: &[f64]) -> Vec<f64> {
    let max = evals.iter().copied().fold(0.0f64, f64::max);
    let scale = if max > 0.0 { max } else { 1.0 };
    evals.iter().map(|e| e.max(0.0) / scale).collect()
}

/// `D_ij = |λ_x,j/(λ_x,j+γ) − λ_y,i/(λ_y,i+γ)|²` with each spectrum
/// normalized by its own maximum. Rows index Y, columns index X.
pub fn resolvent_mask(evals_x: &[f64], evals_y: &[f64], gamma: f64) -> DMatrix<f64> {
    let rx: Vec<f64> = normalized(evals_x).iter().map(|l| l / (l + gamma)).collect();
    let ry: Vec<f64> = normalized(evals_y).iter().map(|l| l / (l + gamma)).collect();
    DMatrix::from_fn(ry.len(), rx.len(), |i, j| (rx[j] - ry[i]).powi(2))
}

/// Per-row Cholesky factors of `AAᵀ + λ diag(D_i,:)`, kept for adjoint solves.
pub type RowFactors = Vec<Cholesky<f64, Dyn>>;

/// Minimizes `‖CA − B‖² + λ Σ_ij D_ij C_ij²` one row at a time:
/// `(AAᵀ + λ diag(D_i,:)) c_iᵀ = A b_iᵀ`.
pub fn solve_masked(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    mask: &DMatrix<f64>,
    lambda: f64,
) -> Result<(DMatrix<f64>, RowFactors), FmapError> {
    let (ka, d) = a.shape();
    let kb = b.nrows();
    if b.ncols() != d || mask.shape() != (kb, ka) {
        return Err(FmapError::DimensionMismatch(format!(
            "A {:?}, B {:?}, mask {:?}",
            a.shape(),
            b.shape(),
            mask.shape()
        )));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(FmapError::NonFinite("descriptor coefficients"));
    }
    let gram = a * a.transpose();
    let rhs = a * b.transpose();
    let rows: Vec<Result<(Vec<f64>, Cholesky<f64, Dyn>), FmapError>> = (0..kb)
        .into_par_iter()
        .map(|i| {
            let mut g = gram.clone();
            for j in 0..ka {
                g[(j, j)] += lambda * mask[(i, j)];
            }
            let chol = Cholesky::new(g).ok_or(FmapError::Singular { row: i })?;
            let c = chol.solve(&rhs.column(i).into_owned());
            if c.iter().any(|v| !v.is_finite()) {
                return Err(FmapError::Singular { row: i });
            }
            Ok((c.as_slice().to_vec(), chol))
        })
        .collect();
    let mut c = DMatrix::zeros(kb, ka);
    let mut factors = Vec::with_capacity(kb);
    for (i, r) in rows.into_iter().enumerate() {
        let (row, chol) = r?;
        for (j, v) in row.into_iter().enumerate() {
            c[(i, j)] = v;
        }
        factors.push(chol);
    }
    Ok((c, factors))
}

/// Functional map `C` (k×k) with `CA ≈ B` under the resolvent regularizer.
pub fn solve_fmap(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    evals_x: &[f64],
    evals_y: &[f64],
    config: &FmapConfig,
) -> Result<DMatrix<f64>, FmapError> {
    config.validate()?;
    if evals_x.len() != a.nrows() || evals_y.len() != b.nrows() {
        return Err(FmapError::DimensionMismatch(format!(
            "{} / {} eigenvalues for coefficient rows {} / {}",
            evals_x.len(),
            evals_y.len(),
            a.nrows(),
            b.nrows()
        )));
    }
    let mask = resolvent_mask(evals_x, evals_y, config.resolvent_gamma);
    solve_masked(a, b, &mask, config.lambda_reg).map(|(c, _)| c)
}

fn square_dev(m: &DMatrix<f64>) -> f64 {
    (m - DMatrix::identity(m.nrows(), m.ncols())).norm_squared()
}

/// `‖C_xyC_yx − I‖² + ‖C_yxC_xy − I‖²`.
pub fn bijectivity_loss(pair: &FunctionalMapPair) -> f64 {
    square_dev(&(&pair.c_xy * &pair.c_yx)) + square_dev(&(&pair.c_yx * &pair.c_xy))
}

/// `‖C_xyᵀC_xy − I‖² + ‖C_yxᵀC_yx − I‖²`.
pub fn orthogonality_loss(pair: &FunctionalMapPair) -> f64 {
    square_dev(&(pair.c_xy.transpose() * &pair.c_xy)) + square_dev(&(pair.c_yx.transpose() * &pair.c_yx))
}

/// `α₁ L_bij + α₂ L_orth`.
pub fn fmap_structural_loss(pair: &FunctionalMapPair, alpha1: f64, alpha2: f64) -> f64 {
    alpha1 * bijectivity_loss(pair) + alpha2 * orthogonality_loss(pair)
}

/// `‖C_xy − Φ_yᵀ M_y Π̂_yx Φ_x‖²`.
pub fn proper_loss(
    c_xy: &DMatrix<f64>,
    pi_yx: &DMatrix<f64>,
    phi_x: &DMatrix<f64>,
    phi_y: &DMatrix<f64>,
    mass_y: &[f64],
) -> Result<f64, FmapError> {
    let (ny, nx) = pi_yx.shape();
    let k = c_xy.nrows();
    if phi_x.shape() != (nx, k) || phi_y.shape() != (ny, k) || mass_y.len() != ny || c_xy.ncols() != k {
        return Err(FmapError::DimensionMismatch(format!(
            "C {:?}, Π̂_yx {:?}, Φ_x {:?}, Φ_y {:?}, mass {}",
            c_xy.shape(),
            pi_yx.shape(),
            phi_x.shape(),
            phi_y.shape(),
            mass_y.len()
        )));
    }
    Ok((c_xy - pinv(phi_y, mass_y) * (pi_yx * phi_x)).norm_squared())
}

/// `Φᵀ M`.
pub fn pinv(phi: &DMatrix<f64>, mass: &[f64]) -> DMatrix<f64> {
    let mut p = phi.transpose();
    for (j, m) in mass.iter().enumerate() {
        p.column_mut(j).scale_mut(*m);
    }
    p
}

fn rows_of(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        out.extend(m.row(i).iter());
    }
    out
}

/// For every row of `query`, the index of the nearest row of `target` in
/// Euclidean distance; ties go to the lowest index.
pub fn nearest_rows(query: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<Vec<usize>, FmapError> {
    let d = query.ncols();
    if target.ncols() != d {
        return Err(FmapError::DimensionMismatch(format!(
            "query dim {d}, target dim {}",
            target.ncols()
        )));
    }
    if target.nrows() == 0 {
        return Err(FmapError::DimensionMismatch("empty target set".into()));
    }
    let q = rows_of(query);
    let t = rows_of(target);
    Ok((0..query.nrows())
        .into_par_iter()
        .map(|i| {
            let qi = &q[i * d..(i + 1) * d];
            let mut best = (f64::INFINITY, 0);
            for (j, tj) in t.chunks_exact(d.max(1)).enumerate().take(target.nrows()) {
                let dist: f64 = if d == 0 {
                    0.0
                } else {
                    qi.iter().zip(tj).map(|(a, b)| (a - b) * (a - b)).sum()
                };
                if dist < best.0 {
                    best = (dist, j);
                }
            }
            best.1
        })
        .collect())
}

/// Point map from X to Y: nearest row of `Φ_y` for each row of `Φ_x C_yx`.
pub fn fmap_to_pointmap(c_yx: &DMatrix<f64>, phi_x: &DMatrix<f64>, phi_y: &DMatrix<f64>) -> Result<Vec<usize>, FmapError> {
    if phi_x.ncols() != c_yx.nrows() || c_yx.ncols() != phi_y.ncols() {
        return Err(FmapError::DimensionMismatch(format!(
            "Φ_x {:?}, C_yx {:?}, Φ_y {:?}",
            phi_x.shape(),
            c_yx.shape(),
            phi_y.shape()
        )));
    }
    nearest_rows(&(phi_x * c_yx), phi_y)
}
