//! Smallest eigenpairs of the pencil `W φ = λ M φ` with `M` diagonal, via
//! shift-invert block Lanczos with full M-reorthogonalization and a
//! Rayleigh–Ritz extraction on `W`.
//!
//! The block variant is needed because single-vector Krylov spaces cannot
//! resolve exactly repeated eigenvalues (symmetric meshes have many).

use log::debug;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::SpectralError;
use crate::sparse::{EnvelopeCholesky, SparseOperator};

#[derive(Debug, Clone)]
pub struct EigenOptions {
    /// Shift `σ` in `(W − σM)⁻¹`, relative to the spectral scale `‖W‖∞ / max M`.
    pub shift: f64,
    /// Relative residual tolerance.
    pub tol: f64,
    /// Krylov dimension cap as a multiple of the number of requested pairs.
    pub krylov_factor: usize,
    pub block_size: usize,
    /// Thick restarts allowed once the Krylov cap is reached.
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            shift: -1e-8,
            tol: 1e-8,
            krylov_factor: 3,
            block_size: 8,
            max_restarts: 20,
            seed: 0x5eed,
        }
    }
}

/// Result of the eigensolve: ascending eigenvalues and M-orthonormal vectors.
#[derive(Debug, Clone)]
pub struct Eigenpairs {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
    pub max_residual: f64,
    pub krylov_dim: usize,
}

fn dot_m(m: &[f64], x: &[f64], y: &[f64]) -> f64 {
    m.iter().zip(x).zip(y).map(|((m, x), y)| m * x * y).sum()
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

struct Krylov<'a> {
    stiffness: &'a SparseOperator,
    mass: &'a [f64],
    basis: Vec<Vec<f64>>,
    w_basis: Vec<Vec<f64>>,
    /// Projected stiffness `Vᵀ W V`, stored by rows.
    projected: Vec<Vec<f64>>,
}

impl Krylov<'_> {
    /// M-orthogonalizes candidates against the basis (two passes) and appends
    /// the survivors. Returns how many were kept.
    fn extend(&mut self, candidates: Vec<Vec<f64>>) -> usize {
        let mut kept = 0;
        for mut c in candidates {
            let original = dot_m(self.mass, &c, &c).sqrt();
            if original == 0.0 {
                continue;
            }
            for _ in 0..2 {
                for q in &self.basis {
                    let h = dot_m(self.mass, q, &c);
                    c.iter_mut().zip(q).for_each(|(ci, qi)| *ci -= h * qi);
                }
            }
            let norm = dot_m(self.mass, &c, &c).sqrt();
            if norm <= 1e-10 * original {
                continue;
            }
            c.iter_mut().for_each(|v| *v /= norm);
            let wc = self.stiffness.apply(&c);
            let row: Vec<f64> = self
                .basis
                .iter()
                .map(|q| q.iter().zip(&wc).map(|(a, b)| a * b).sum())
                .chain(std::iter::once(c.iter().zip(&wc).map(|(a, b)| a * b).sum()))
                .collect();
            for (r, &v) in self.projected.iter_mut().zip(&row) {
                r.push(v);
            }
            self.projected.push(row);
            self.basis.push(c);
            self.w_basis.push(wc);
            kept += 1;
        }
        kept
    }

    fn clear(&mut self) {
        self.basis.clear();
        self.w_basis.clear();
        self.projected.clear();
    }

    fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Rayleigh–Ritz: the `k` smallest Ritz pairs with their relative residuals.
    fn ritz(&self, k: usize, scale: f64) -> (Vec<f64>, DMatrix<f64>, Vec<f64>) {
        let k = k.min(self.dim());
        let m = self.dim();
        let n = self.mass.len();
        let h = DMatrix::from_fn(m, m, |i, j| 0.5 * (self.projected[i][j] + self.projected[j][i]));
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
        let mut values = Vec::with_capacity(k);
        let mut vectors = DMatrix::zeros(n, k);
        let mut residuals = Vec::with_capacity(k);
        let mut y = vec![0.0; n];
        let mut wy = vec![0.0; n];
        for (col, &idx) in order.iter().take(k).enumerate() {
            let theta = eig.eigenvalues[idx];
            y.iter_mut().for_each(|v| *v = 0.0);
            wy.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..m {
                let s = eig.eigenvectors[(j, idx)];
                if s == 0.0 {
                    continue;
                }
                y.iter_mut().zip(&self.basis[j]).for_each(|(a, b)| *a += s * b);
                wy.iter_mut().zip(&self.w_basis[j]).for_each(|(a, b)| *a += s * b);
            }
            let my: Vec<f64> = y.iter().zip(self.mass).map(|(a, m)| a * m).collect();
            let r: Vec<f64> = wy.iter().zip(&my).map(|(a, b)| a - theta * b).collect();
            // the floor keeps the zero mode's relative residual meaningful
            let denom = (norm2(&wy) + theta.abs() * norm2(&my)).max(1e-6 * scale * norm2(&my));
            residuals.push(norm2(&r) / denom);
            values.push(theta);
            vectors.column_mut(col).copy_from_slice(&y);
        }
        (values, vectors, residuals)
    }
}

/// Computes the `k` smallest eigenpairs of `W φ = λ M φ`.
pub fn smallest_eigenpairs(
    stiffness: &SparseOperator,
    mass: &[f64],
    k: usize,
    opts: &EigenOptions,
) -> Result<Eigenpairs, SpectralError> {
    let n = stiffness.dim();
    if k >= n || k == 0 {
        return Err(SpectralError::TooManyEigenpairs { k, n });
    }
    let w_norm = stiffness.norm_inf();
    let m_max = mass.iter().fold(0.0f64, |a, &b| a.max(b));
    let sigma = opts.shift * w_norm / m_max;
    let shifted = stiffness.combine(1.0, &SparseOperator::from_diagonal(mass), -sigma);
    let chol = EnvelopeCholesky::factor(&shifted).map_err(|e| SpectralError::NotPositiveDefinite { pivot: e.pivot })?;

    let block = opts.block_size.clamp(1, n);
    let cap = n.min((opts.krylov_factor * k).max(4 * block));
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut random_block = |count: usize| -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    };

    let mut krylov = Krylov {
        stiffness,
        mass,
        basis: Vec::new(),
        w_basis: Vec::new(),
        projected: Vec::new(),
    };
    let mut last = {
        let kept = krylov.extend(random_block(block));
        0..kept
    };
    let mut next_check = (k + block).min(cap);
    let keep = (k + k / 2 + block).min(cap.saturating_sub(block)).max(k);
    let mut restarts = 0;
    let best;
    loop {
        if krylov.dim() >= next_check || krylov.dim() >= cap {
            let (values, vectors, residuals) = krylov.ritz(k, w_norm / m_max);
            let worst = residuals.iter().copied().fold(0.0, f64::max);
            debug!("eigensolve: krylov dim {} worst residual {worst:e}", krylov.dim());
            if worst <= opts.tol || krylov.dim() >= n {
                best = Some((values, vectors, worst));
                break;
            }
            if krylov.dim() >= cap {
                restarts += 1;
                if restarts > opts.max_restarts {
                    return Err(SpectralError::NonConvergence {
                        residual: worst,
                        krylov_dim: krylov.dim(),
                    });
                }
                // thick restart: keep the leading Ritz vectors, continue from
                // the unconverged ones
                let (_, kept_vectors, kept_res) = krylov.ritz(keep, w_norm / m_max);
                let columns: Vec<Vec<f64>> = kept_vectors.column_iter().map(|c| c.iter().copied().collect()).collect();
                krylov.clear();
                krylov.extend(columns);
                let pending: Vec<usize> = (0..krylov.dim().min(k)).filter(|&j| kept_res[j] > opts.tol).collect();
                let room = cap - krylov.dim();
                let candidates = pending
                    .iter()
                    .take(room)
                    .map(|&j| {
                        let mb: Vec<f64> = krylov.basis[j].iter().zip(mass).map(|(a, m)| a * m).collect();
                        chol.solve(&mb)
                    })
                    .collect();
                let start = krylov.dim();
                let added = krylov.extend(candidates);
                last = start..start + added;
                next_check = krylov.dim();
                continue;
            }
            next_check = ((krylov.dim() as f64 * 1.15) as usize).max(krylov.dim() + block).min(cap);
        }
        let candidates: Vec<Vec<f64>> = if last.is_empty() {
            // invariant subspace reached: restart with fresh directions
            random_block(block)
        } else {
            last.clone()
                .map(|j| {
                    let mb: Vec<f64> = krylov.basis[j].iter().zip(mass).map(|(a, m)| a * m).collect();
                    chol.solve(&mb)
                })
                .collect()
        };
        let start = krylov.dim();
        let room = cap - start;
        let kept = krylov.extend(candidates.into_iter().take(room).collect());
        last = start..start + kept;
    }
    let (mut values, mut vectors, worst) = best.expect("converged");
    for (j, v) in values.iter_mut().enumerate() {
        // the pencil is semidefinite; clamp round-off below zero
        if *v < 0.0 && v.abs() <= 1e-10 * w_norm / m_max {
            *v = 0.0;
        }
        let mut col = vectors.column_mut(j);
        let pivot = col.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
    Ok(Eigenpairs {
        values,
        vectors,
        max_residual: worst,
        krylov_dim: krylov.dim(),
    })
}
