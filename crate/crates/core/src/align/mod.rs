//! Feature-space alignment: soft similarities, sliced-Wasserstein alignment
//! losses in their uni- and bidirectional forms, the MSE ablation and the
//! weighted total loss.

mod graph;

pub use graph::{fmap_loss_var, ot_loss_var, proper_loss_var, soft_similarity_var, LossContext, LossVars, WeightScheme};

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::fmap::{nearest_rows, FmapError};
use crate::ot::{energy_weighted_mean, slice_distances, OtError, ProjectionSet, WeightedSamples};
use crate::spectral::SpectralError;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("invalid loss configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Ot(#[from] OtError),
    #[error(transparent)]
    Fmap(#[from] FmapError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Which alignment term plays the role of `L_OT`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OtVariant {
    BiSw,
    BiEbsw,
    UniSw,
    UniEbsw,
    Mse,
}

impl OtVariant {
    pub const ALL: [OtVariant; 5] = [Self::BiSw, Self::BiEbsw, Self::UniSw, Self::UniEbsw, Self::Mse];

    pub fn name(self) -> &'static str {
        match self {
            Self::BiSw => "biSW",
            Self::BiEbsw => "biEBSW",
            Self::UniSw => "uniSW",
            Self::UniEbsw => "uniEBSW",
            Self::Mse => "MSE",
        }
    }
}

impl fmt::Display for OtVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OtVariant {
    type Err = AlignError;

    /// Case-insensitive.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| AlignError::InvalidConfig(format!("unknown OT variant {s:?} (expected biSW, biEBSW, uniSW, uniEBSW or MSE)")))
    }
}

/// Weights of the total loss `λ₁L_fmap + λ₂L_OT + λ₃L_proper` and the
/// parameters of its terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Bijectivity weight inside `L_fmap`.
    pub alpha1: f64,
    /// Orthogonality weight inside `L_fmap`.
    pub alpha2: f64,
    pub p: f64,
    /// Number of projections `L`.
    pub num_projections: usize,
    pub tau: f64,
    pub ot_variant: OtVariant,
    pub projection_seed: u64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 100.0,
            lambda3: 1.0,
            alpha1: 1.0,
            alpha2: 1.0,
            p: 2.0,
            num_projections: 200,
            tau: 0.07,
            ot_variant: OtVariant::BiEbsw,
            projection_seed: 0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), AlignError> {
        let weights = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
        ];
        if let Some((name, v)) = weights.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(AlignError::InvalidConfig(format!("{name} = {v} (need a finite value ≥ 0)")));
        }
        if !(self.p.is_finite() && self.p >= 1.0) {
            return Err(AlignError::InvalidConfig(format!("p = {} (need p ≥ 1)", self.p)));
        }
        if self.num_projections == 0 {
            return Err(AlignError::InvalidConfig("L = 0 (need at least one projection)".into()));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(AlignError::InvalidConfig(format!("tau = {} (need tau > 0)", self.tau)));
        }
        Ok(())
    }
}

/// Row-stochastic soft correspondence with its temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftSimilarity {
    matrix: DMatrix<f64>,
    tau: f64,
}

impl SoftSimilarity {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.matrix
    }
}

fn check_finite(m: &DMatrix<f64>, what: &'static str) -> Result<(), AlignError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(AlignError::NonFinite(what))
    }
}

/// `Π̂[i,j] = softmax_j(F_xⁱ·F_yʲ / τ)`. Rows are expected to be normalized
/// by the caller.
pub fn soft_similarity(fx: &DMatrix<f64>, fy: &DMatrix<f64>, tau: f64) -> Result<SoftSimilarity, AlignError> {
    if fx.ncols() != fy.ncols() {
        return Err(AlignError::DimensionMismatch(format!(
            "feature dims {} and {}",
            fx.ncols(),
            fy.ncols()
        )));
    }
    if fy.nrows() == 0 {
        return Err(AlignError::DimensionMismatch("empty target feature set".into()));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(AlignError::InvalidConfig(format!("tau = {tau}")));
    }
    check_finite(fx, "source features")?;
    check_finite(fy, "target features")?;
    let mut m = fx * fy.transpose() / tau;
    for mut row in m.row_iter_mut() {
        let max = row.max();
        row.apply(|x| *x = (*x - max).exp());
        let total = row.sum();
        row /= total;
    }
    Ok(SoftSimilarity { matrix: m, tau })
}

fn check_pair(fx: &DMatrix<f64>, fy: &DMatrix<f64>, pi_xy: &DMatrix<f64>) -> Result<(), AlignError> {
    if fx.ncols() != fy.ncols() || pi_xy.shape() != (fx.nrows(), fy.nrows()) {
        return Err(AlignError::DimensionMismatch(format!(
            "F_x {:?}, F_y {:?}, Π̂ {:?}",
            fx.shape(),
            fy.shape(),
            pi_xy.shape()
        )));
    }
    Ok(())
}

/// Per-slice `W_p^p(θ_l♯F_x, θ_l♯(Π̂_xy F_y))`, both measures carrying the
/// source weights `wx`.
pub fn directional_slices(
    fx: &DMatrix<f64>,
    fy: &DMatrix<f64>,
    pi_xy: &DMatrix<f64>,
    wx: &[f64],
    proj: &ProjectionSet,
    p: f64,
) -> Result<Vec<f64>, AlignError> {
    check_pair(fx, fy, pi_xy)?;
    let a = WeightedSamples::new(fx.clone(), wx.to_vec())?;
    let b = WeightedSamples::new(pi_xy * fy, wx.to_vec())?;
    Ok(slice_distances(&a, &b, proj, p)?)
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n.max(1) as f64; n]
}

/// `L_OT` for any variant with explicit vertex weights.
#[allow(clippy::too_many_arguments)]
pub fn ot_loss(
    variant: OtVariant,
    fx: &DMatrix<f64>,
    fy: &DMatrix<f64>,
    pi_xy: &DMatrix<f64>,
    pi_yx: &DMatrix<f64>,
    weights: (&[f64], &[f64]),
    proj: &ProjectionSet,
    p: f64,
) -> Result<f64, AlignError> {
    let (wx, wy) = weights;
    let forward = |proj| directional_slices(fx, fy, pi_xy, wx, proj, p);
    match variant {
        OtVariant::Mse => weighted_mse(fx, fy, pi_xy, pi_yx, wx, wy),
        OtVariant::UniSw => {
            let v = forward(proj)?;
            Ok((v.iter().sum::<f64>() / v.len() as f64).powf(1.0 / p))
        }
        OtVariant::UniEbsw => Ok(energy_weighted_mean(&forward(proj)?).powf(1.0 / p)),
        OtVariant::BiSw | OtVariant::BiEbsw => {
            let vx = forward(proj)?;
            let vy = directional_slices(fy, fx, pi_yx, wy, proj, p)?;
            let joint: Vec<f64> = vx.iter().zip(&vy).map(|(a, b)| a + b).collect();
            let base = if variant == OtVariant::BiSw {
                joint.iter().sum::<f64>() / joint.len() as f64
            } else {
                energy_weighted_mean(&joint)
            };
            Ok(base.powf(1.0 / p))
        }
    }
}

/// `((1/L) Σ_l [W_p^p(θ_l♯F_x, θ_l♯F̂_y) + W_p^p(θ_l♯F_y, θ_l♯F̂_x)])^{1/p}`
/// with `F̂_y = Π̂_xy F_y`, `F̂_x = Π̂_yx F_x` and uniform vertex weights.
pub fn bisw_loss(
    fx: &DMatrix<f64>,
    fy: &DMatrix<f64>,
    pi_xy: &DMatrix<f64>,
    pi_yx: &DMatrix<f64>,
    proj: &ProjectionSet,
    p: f64,
) -> Result<f64, AlignError> {
    let w = (uniform(fx.nrows()), uniform(fy.nrows()));
    ot_loss(OtVariant::BiSw, fx, fy, pi_xy, pi_yx, (&w.0, &w.1), proj, p)
}

/// Bidirectional energy-based SW: one softmax over the summed directional
/// slice distances weights both directions.
pub fn biebsw_loss(
    fx: &DMatrix<f64>,
    fy: &DMatrix<f64>,
    pi_xy: &DMatrix<f64>,
    pi_yx: &DMatrix<f64>,
    proj: &ProjectionSet,
    p: f64,
) -> Result<f64, AlignError> {
    let w = (uniform(fx.nrows()), uniform(fy.nrows()));
    ot_loss(OtVariant::BiEbsw, fx, fy, pi_xy, pi_yx, (&w.0, &w.1), proj, p)
}

/// `((1/L) Σ_l W_p^p(θ_l♯F_x, θ_l♯F̂_y))^{1/p}`.
pub fn unisw_loss(
    fx: &DMatrix<f64>,
    fy: &DMatrix<f64>,
    pi_xy: &DMatrix<f64>,
    proj: &ProjectionSet,
    p: f64,
) -> Result<f64, AlignError> {
    let v = directional_slices(fx, fy, pi_xy, &uniform(fx.nrows()), proj, p)?;
    Ok((v.iter().sum::<f64>() / v.len() as f64).powf(1.0 / p))
}

pub fn uniebsw_loss(
    fx: &DMatrix<f64>,
    fy: &DMatrix<f64>,
    pi_xy: &DMatrix<f64>,
    proj: &ProjectionSet,
    p: f64,
) -> Result<f64, AlignError> {
    let v = directional_slices(fx, fy, pi_xy, &uniform(fx.nrows()), proj, p)?;
    Ok(energy_weighted_mean(&v).powf(1.0 / p))
}

fn weighted_mse(
    fx: &DMatrix<f64>,
    fy: &DMatrix<f64>,
    pi_xy: &DMatrix<f64>,
    pi_yx: &DMatrix<f64>,
    wx: &[f64],
    wy: &[f64],
) -> Result<f64, AlignError> {
    check_pair(fx, fy, pi_xy)?;
    check_pair(fy, fx, pi_yx)?;
    if wx.len() != fx.nrows() || wy.len() != fy.nrows() {
        return Err(AlignError::DimensionMismatch(format!("{} / {} weights", wx.len(), wy.len())));
    }
    let term = |f: &DMatrix<f64>, g: &DMatrix<f64>, pi: &DMatrix<f64>, w: &[f64]| {
        let r = f - pi * g;
        r.row_iter().zip(w).map(|(row, w)| w * row.norm_squared()).sum::<f64>()
    };
    Ok(term(fx, fy, pi_xy, wx) + term(fy, fx, pi_yx, wy))
}

/// `‖F_x − Π̂_xy F_y‖²/n_x + ‖F_y − Π̂_yx F_x‖²/n_y`.
pub fn mse_alignment_loss(
    fx: &DMatrix<f64>,
    fy: &DMatrix<f64>,
    pi_xy: &DMatrix<f64>,
    pi_yx: &DMatrix<f64>,
) -> Result<f64, AlignError> {
    weighted_mse(fx, fy, pi_xy, pi_yx, &uniform(fx.nrows()), &uniform(fy.nrows()))
}

/// The three terms of the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub l_fmap: f64,
    pub l_ot: f64,
    pub l_proper: f64,
}

/// `λ₁L_fmap + λ₂L_OT + λ₃L_proper`.
pub fn total_loss(parts: &LossParts, config: &LossConfig) -> f64 {
    config.lambda1 * parts.l_fmap + config.lambda2 * parts.l_ot + config.lambda3 * parts.l_proper
}

/// Nearest feature row of `F_y` for every row of `F_x`; ties go to the
/// lowest index.
pub fn nn_map(fx: &DMatrix<f64>, fy: &DMatrix<f64>) -> Result<Vec<usize>, AlignError> {
    Ok(nearest_rows(fx, fy)?)
}
