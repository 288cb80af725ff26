use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::one_d::wpp_1d;
use super::{check_p, OtError, WeightedSamples};

/// `L` unit directions in `R^d`, stored as the columns of a d×L matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    directions: DMatrix<f64>,
    seed: u64,
}

impl ProjectionSet {
    pub fn directions(&self) -> &DMatrix<f64> {
        &self.directions
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.directions.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.ncols() == 0
    }

    pub fn dim(&self) -> usize {
        self.directions.nrows()
    }
}

/// i.i.d. uniform directions on `S^{d−1}` from normalized Gaussian draws.
pub fn sample_projections(l: usize, d: usize, seed: u64) -> Result<ProjectionSet, OtError> {
    if l == 0 || d == 0 {
        return Err(OtError::InvalidParameter(format!("L = {l}, d = {d} (both must be ≥ 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut directions = DMatrix::zeros(d, l);
    for mut col in directions.column_iter_mut() {
        loop {
            col.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
            let norm = col.norm();
            if norm > 1e-300 {
                col /= norm;
                break;
            }
        }
    }
    Ok(ProjectionSet { directions, seed })
}

/// Per-slice `W_p^p(θ_l♯a, θ_l♯b)`.
pub fn slice_distances(
    a: &WeightedSamples,
    b: &WeightedSamples,
    proj: &ProjectionSet,
    p: f64,
) -> Result<Vec<f64>, OtError> {
    check_p(p)?;
    if a.dim() != b.dim() || a.dim() != proj.dim() {
        return Err(OtError::DimensionMismatch(format!(
            "sample dims {} and {}, projection dim {}",
            a.dim(),
            b.dim(),
            proj.dim()
        )));
    }
    let pa = a.values() * proj.directions();
    let pb = b.values() * proj.directions();
    Ok((0..proj.len())
        .into_par_iter()
        .map(|l| wpp_1d(pa.column(l).as_slice(), a.weights(), pb.column(l).as_slice(), b.weights(), p))
        .collect())
}

/// Monte Carlo sliced Wasserstein distance `((1/L) Σ_l W_p^p)^{1/p}`.
pub fn sw_distance(a: &WeightedSamples, b: &WeightedSamples, proj: &ProjectionSet, p: f64) -> Result<f64, OtError> {
    let v = slice_distances(a, b, proj, p)?;
    Ok((v.iter().sum::<f64>() / v.len() as f64).powf(1.0 / p))
}

/// Importance weights `softmax(v)` for the exponential energy, with
/// max-subtraction.
pub fn energy_weights(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

/// `Σ_l v_l softmax_l(v)`, evaluated as the plain mean plus the
/// (non-negative) covariance between the weights and the values.
///
/// Centering at the log-mean-exp `t` makes every covariance term a product
/// of two same-signed factors, so the result never drops below the mean
/// through rounding and equals it exactly when all values coincide.
pub fn energy_weighted_mean(v: &[f64]) -> f64 {
    let l = v.len() as f64;
    let mean = v.iter().sum::<f64>() / l;
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let t = max + (v.iter().map(|x| (x - max).exp()).sum::<f64>() / l).ln();
    let w = energy_weights(v);
    let cov: f64 = v.iter().zip(&w).map(|(x, w)| ((w - 1.0 / l) * (x - t)).max(0.0)).sum();
    mean + cov
}

/// Importance-sampled energy-based sliced Wasserstein with `f = exp`:
/// `(Σ_l v_l softmax_l(v))^{1/p}`.
pub fn ebsw_is(a: &WeightedSamples, b: &WeightedSamples, proj: &ProjectionSet, p: f64) -> Result<f64, OtError> {
    let v = slice_distances(a, b, proj, p)?;
    Ok(energy_weighted_mean(&v).powf(1.0 / p))
}
