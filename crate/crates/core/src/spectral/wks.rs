use nalgebra::DMatrix;

use super::{FeatureMatrix, SpectralBasis, SpectralError};

/// Energy grid settings. `variance_scale` multiplies the log-energy spacing
/// `(log λ_max − log λ_min) / num_energies` to give the Gaussian width σ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WksParams {
    pub num_energies: usize,
    pub variance_scale: f64,
}

impl Default for WksParams {
    fn default() -> Self {
        Self {
            num_energies: 128,
            variance_scale: 7.0,
        }
    }
}

/// Eigenvalues below this fraction of the largest are treated as zero modes.
const ZERO_MODE_TOL: f64 = 1e-8;

/// Normalized Gaussian weights (num_energies × k) over the nonzero modes;
/// columns of zero modes are left at zero. Each row sums to one.
pub fn wks_weights(eigenvalues: &[f64], params: WksParams) -> Result<DMatrix<f64>, SpectralError> {
    let lmax = eigenvalues.iter().copied().fold(0.0f64, f64::max);
    let nonzero: Vec<usize> = (0..eigenvalues.len())
        .filter(|&i| eigenvalues[i] > ZERO_MODE_TOL * lmax)
        .collect();
    if nonzero.len() < 2 {
        return Err(SpectralError::InsufficientSpectrum(format!(
            "{} nonzero eigenvalues, need at least 2",
            nonzero.len()
        )));
    }
    if params.num_energies == 0 || !(params.variance_scale > 0.0) {
        return Err(SpectralError::InsufficientSpectrum("empty energy grid".into()));
    }
    let logs: Vec<f64> = nonzero.iter().map(|&i| eigenvalues[i].ln()).collect();
    let (lo, hi) = (logs[0], logs[logs.len() - 1]);
    let sigma = params.variance_scale * (hi - lo) / params.num_energies as f64;
    let (e_min, e_max) = (lo + 2.0 * sigma, hi - 2.0 * sigma);
    if !(sigma > 0.0) || e_min > e_max {
        return Err(SpectralError::InsufficientSpectrum(format!(
            "energy range [{lo:.3}, {hi:.3}] too narrow for σ = {sigma:.3}"
        )));
    }
    let ne = params.num_energies;
    let mut weights = DMatrix::zeros(ne, eigenvalues.len());
    for e in 0..ne {
        let energy = if ne == 1 {
            0.5 * (e_min + e_max)
        } else {
            e_min + (e_max - e_min) * e as f64 / (ne - 1) as f64
        };
        let mut total = 0.0;
        for (&i, &l) in nonzero.iter().zip(&logs) {
            let g = (-(energy - l).powi(2) / (2.0 * sigma * sigma)).exp();
            weights[(e, i)] = g;
            total += g;
        }
        weights.row_mut(e).scale_mut(1.0 / total);
    }
    Ok(weights)
}

/// Wave kernel signature: for energy `e`, `Σ_i g_e(λ_i) φ_i(x)²` with the
/// Gaussian weights `g_e` normalized to sum to one.
pub fn wks(basis: &SpectralBasis, params: WksParams) -> Result<FeatureMatrix, SpectralError> {
    let weights = wks_weights(basis.eigenvalues(), params)?;
    let squared = basis.phi().map(|v| v * v);
    FeatureMatrix::new(squared * weights.transpose())
}
