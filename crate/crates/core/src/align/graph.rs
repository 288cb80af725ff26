//! Differentiable versions of the losses, recorded on an autodiff tape.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use super::{AlignError, LossConfig, LossParts, OtVariant};
use crate::autodiff::{Tape, Var};
use crate::fmap::{resolvent_mask, FmapConfig};
use crate::ot::sample_projections;
use crate::spectral::SpectralBasis;

/// Vertex weights of the empirical feature measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightScheme {
    #[default]
    Uniform,
    /// Lumped vertex areas, normalized to one.
    Area,
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Uniform => "uniform",
            Self::Area => "area",
        })
    }
}

impl FromStr for WeightScheme {
    type Err = AlignError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Self::Uniform),
            "area" => Ok(Self::Area),
            _ => Err(AlignError::InvalidConfig(format!("unknown weight scheme {s:?} (expected uniform or area)"))),
        }
    }
}

/// Handles to the intermediate quantities of one recorded total loss.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub fx: Var,
    pub fy: Var,
    pub c_xy: Var,
    pub c_yx: Var,
    pub pi_xy: Var,
    pub pi_yx: Var,
    pub l_fmap: Var,
    pub l_ot: Var,
    pub l_proper: Var,
    pub total: Var,
}

/// Row-softmax of `F_x F_yᵀ / τ`.
pub fn soft_similarity_var(t: &mut Tape, fx: Var, fy: Var, tau: f64) -> Var {
    let fyt = t.transpose(fy);
    let logits = t.matmul(fx, fyt);
    let logits = t.scale(logits, 1.0 / tau);
    t.row_softmax(logits)
}

fn mean_or_energy(t: &mut Tape, v: Var, energy: bool, l: usize) -> Var {
    if energy {
        let vt = t.transpose(v);
        let w = t.row_softmax(vt);
        t.matmul(w, v)
    } else {
        let s = t.sum(v);
        t.scale(s, 1.0 / l as f64)
    }
}

fn weighted_sq_residual(t: &mut Tape, f: Var, pi: Var, g: Var, w: &[f64]) -> Var {
    let pg = t.matmul(pi, g);
    let r = t.sub(f, pg);
    let sw = t.constant(DMatrix::from_fn(w.len(), 1, |i, _| w[i].sqrt()));
    let ones = t.constant(DMatrix::from_element(1, t.value(f).ncols(), 1.0));
    let scale = t.matmul(sw, ones);
    let r = t.hadamard(r, scale);
    t.sum_squares(r)
}

/// `L_OT` for `variant`; `directions` is d×L.
#[allow(clippy::too_many_arguments)]
pub fn ot_loss_var(
    t: &mut Tape,
    variant: OtVariant,
    fx: Var,
    fy: Var,
    pi_xy: Var,
    pi_yx: Var,
    weights: (&[f64], &[f64]),
    directions: &DMatrix<f64>,
    p: f64,
) -> Var {
    let (wx, wy) = weights;
    if variant == OtVariant::Mse {
        let a = weighted_sq_residual(t, fx, pi_xy, fy, wx);
        let b = weighted_sq_residual(t, fy, pi_yx, fx, wy);
        return t.add(a, b);
    }
    let l = directions.ncols();
    let fy_hat = t.matmul(pi_xy, fy);
    let vx = t.slice_wpp(fx, fy_hat, wx, wx, directions, p);
    let v = match variant {
        OtVariant::UniSw | OtVariant::UniEbsw => vx,
        _ => {
            let fx_hat = t.matmul(pi_yx, fx);
            let vy = t.slice_wpp(fy, fx_hat, wy, wy, directions, p);
            t.add(vx, vy)
        }
    };
    let energy = matches!(variant, OtVariant::BiEbsw | OtVariant::UniEbsw);
    let base = mean_or_energy(t, v, energy, l);
    t.powf(base, 1.0 / p)
}

fn identity_dev(t: &mut Tape, m: Var, eye: Var) -> Var {
    t.sq_dist(m, eye)
}

/// `α₁(‖C_xyC_yx − I‖² + ‖C_yxC_xy − I‖²) + α₂(‖C_xyᵀC_xy − I‖² + ‖C_yxᵀC_yx − I‖²)`.
pub fn fmap_loss_var(t: &mut Tape, c_xy: Var, c_yx: Var, alpha1: f64, alpha2: f64) -> Var {
    let k = t.value(c_xy).nrows();
    let eye = t.constant(DMatrix::identity(k, k));
    let xy_yx = t.matmul(c_xy, c_yx);
    let yx_xy = t.matmul(c_yx, c_xy);
    let b1 = identity_dev(t, xy_yx, eye);
    let b2 = identity_dev(t, yx_xy, eye);
    let bij = t.add(b1, b2);
    let cxt = t.transpose(c_xy);
    let cyt = t.transpose(c_yx);
    let gx = t.matmul(cxt, c_xy);
    let gy = t.matmul(cyt, c_yx);
    let o1 = identity_dev(t, gx, eye);
    let o2 = identity_dev(t, gy, eye);
    let orth = t.add(o1, o2);
    let bij = t.scale(bij, alpha1);
    let orth = t.scale(orth, alpha2);
    t.add(bij, orth)
}

/// `‖C_xy − Φ_y† Π_yx Φ_x‖²` with `pinv_y = Φ_yᵀM_y`.
pub fn proper_loss_var(t: &mut Tape, c_xy: Var, pi_yx: Var, phi_x: Var, pinv_y: Var) -> Var {
    let pf = t.matmul(pi_yx, phi_x);
    let induced = t.matmul(pinv_y, pf);
    t.sq_dist(c_xy, induced)
}

/// Everything about a shape pair the total loss needs besides the features:
/// bases, resolvent masks, vertex weights and the shared projections.
#[derive(Debug, Clone)]
pub struct LossContext {
    phi_x: DMatrix<f64>,
    phi_y: DMatrix<f64>,
    pinv_x: DMatrix<f64>,
    pinv_y: DMatrix<f64>,
    mask_xy: DMatrix<f64>,
    mask_yx: DMatrix<f64>,
    lambda_reg: f64,
    wx: Vec<f64>,
    wy: Vec<f64>,
    directions: DMatrix<f64>,
    config: LossConfig,
}

fn vertex_weights(basis: &SpectralBasis, scheme: WeightScheme) -> Vec<f64> {
    let n = basis.num_vertices();
    match scheme {
        WeightScheme::Uniform => vec![1.0 / n as f64; n],
        WeightScheme::Area => {
            let total: f64 = basis.mass().iter().sum();
            basis.mass().iter().map(|m| m / total).collect()
        }
    }
}

impl LossContext {
    pub fn new(
        basis_x: &SpectralBasis,
        basis_y: &SpectralBasis,
        fmap: &FmapConfig,
        loss: &LossConfig,
        weights: WeightScheme,
        feature_dim: usize,
    ) -> Result<Self, AlignError> {
        fmap.validate()?;
        loss.validate()?;
        if basis_x.k() != basis_y.k() {
            return Err(AlignError::DimensionMismatch(format!(
                "basis sizes {} and {}",
                basis_x.k(),
                basis_y.k()
            )));
        }
        let directions = sample_projections(loss.num_projections, feature_dim, loss.projection_seed)?
            .directions()
            .clone();
        Ok(Self {
            phi_x: basis_x.phi().clone(),
            phi_y: basis_y.phi().clone(),
            pinv_x: basis_x.pinv(),
            pinv_y: basis_y.pinv(),
            mask_xy: resolvent_mask(basis_x.eigenvalues(), basis_y.eigenvalues(), fmap.resolvent_gamma),
            mask_yx: resolvent_mask(basis_y.eigenvalues(), basis_x.eigenvalues(), fmap.resolvent_gamma),
            lambda_reg: fmap.lambda_reg,
            wx: vertex_weights(basis_x, weights),
            wy: vertex_weights(basis_y, weights),
            directions,
            config: *loss,
        })
    }

    pub fn config(&self) -> &LossConfig {
        &self.config
    }

    pub fn weights(&self) -> (&[f64], &[f64]) {
        (&self.wx, &self.wy)
    }

    pub fn directions(&self) -> &DMatrix<f64> {
        &self.directions
    }

    pub fn num_vertices(&self) -> (usize, usize) {
        (self.phi_x.nrows(), self.phi_y.nrows())
    }

    fn check_features(&self, fx: &DMatrix<f64>, fy: &DMatrix<f64>) -> Result<(), AlignError> {
        let d = self.directions.nrows();
        if fx.shape() != (self.phi_x.nrows(), d) || fy.shape() != (self.phi_y.nrows(), d) {
            return Err(AlignError::DimensionMismatch(format!(
                "features {:?} / {:?}, expected {:?} / {:?}",
                fx.shape(),
                fy.shape(),
                (self.phi_x.nrows(), d),
                (self.phi_y.nrows(), d)
            )));
        }
        Ok(())
    }

    /// Records the total loss on raw features `fx`, `fy` (rows are normalized
    /// first). With `couplings = Some((Π_xy, Π_yx))` those row-stochastic
    /// constants replace the soft similarities.
    pub fn record(&self, t: &mut Tape, fx: Var, fy: Var, couplings: Option<(&DMatrix<f64>, &DMatrix<f64>)>) -> LossVars {
        let tau = self.config.tau;
        self.record_with(t, fx, fy, |t, a, b| match couplings {
            Some((pxy, pyx)) => (t.constant(pxy.clone()), t.constant(pyx.clone())),
            None => (soft_similarity_var(t, a, b, tau), soft_similarity_var(t, b, a, tau)),
        })
    }

    /// Like [`LossContext::record`], with the correspondence matrices built
    /// by `couplings` from the normalized features.
    pub fn record_with<F>(&self, t: &mut Tape, fx: Var, fy: Var, couplings: F) -> LossVars
    where
        F: FnOnce(&mut Tape, Var, Var) -> (Var, Var),
    {
        let cfg = &self.config;
        let fx = t.row_normalize(fx);
        let fy = t.row_normalize(fy);
        let pinv_x = t.constant(self.pinv_x.clone());
        let pinv_y = t.constant(self.pinv_y.clone());
        let ax = t.matmul(pinv_x, fx);
        let ay = t.matmul(pinv_y, fy);
        let c_xy = t.masked_solve(ax, ay, &self.mask_xy, self.lambda_reg);
        let c_yx = t.masked_solve(ay, ax, &self.mask_yx, self.lambda_reg);
        let l_fmap = fmap_loss_var(t, c_xy, c_yx, cfg.alpha1, cfg.alpha2);
        let (pi_xy, pi_yx) = couplings(t, fx, fy);
        let l_ot = ot_loss_var(
            t,
            cfg.ot_variant,
            fx,
            fy,
            pi_xy,
            pi_yx,
            (&self.wx, &self.wy),
            &self.directions,
            cfg.p,
        );
        let phi_x = t.constant(self.phi_x.clone());
        let l_proper = proper_loss_var(t, c_xy, pi_yx, phi_x, pinv_y);
        let a = t.scale(l_fmap, cfg.lambda1);
        let b = t.scale(l_ot, cfg.lambda2);
        let c = t.scale(l_proper, cfg.lambda3);
        let ab = t.add(a, b);
        let total = t.add(ab, c);
        LossVars {
            fx,
            fy,
            c_xy,
            c_yx,
            pi_xy,
            pi_yx,
            l_fmap,
            l_ot,
            l_proper,
            total,
        }
    }

    fn parts(t: &Tape, v: &LossVars) -> LossParts {
        LossParts {
            l_fmap: t.scalar(v.l_fmap),
            l_ot: t.scalar(v.l_ot),
            l_proper: t.scalar(v.l_proper),
        }
    }

    /// Loss terms and total without gradients.
    pub fn evaluate(
        &self,
        fx: &DMatrix<f64>,
        fy: &DMatrix<f64>,
        couplings: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
    ) -> Result<(LossParts, f64), AlignError> {
        self.check_features(fx, fy)?;
        let mut t = Tape::new();
        let (x, y) = (t.constant(fx.clone()), t.constant(fy.clone()));
        let v = self.record(&mut t, x, y, couplings);
        if let Some(e) = t.error() {
            return Err(e.clone().into());
        }
        let total = t.scalar(v.total);
        if !total.is_finite() {
            return Err(AlignError::NonFinite("total loss"));
        }
        Ok((Self::parts(&t, &v), total))
    }

    /// Loss terms, total and the gradients with respect to `fx` and `fy`.
    pub fn value_and_grad(
        &self,
        fx: &DMatrix<f64>,
        fy: &DMatrix<f64>,
        couplings: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
    ) -> Result<(LossParts, f64, DMatrix<f64>, DMatrix<f64>), AlignError> {
        self.check_features(fx, fy)?;
        let mut t = Tape::new();
        let (x, y) = (t.leaf(fx.clone()), t.leaf(fy.clone()));
        let v = self.record(&mut t, x, y, couplings);
        let grads = t.backward(v.total)?;
        let total = t.scalar(v.total);
        if !total.is_finite() {
            return Err(AlignError::NonFinite("total loss"));
        }
        Ok((Self::parts(&t, &v), total, grads.wrt(x), grads.wrt(y)))
    }
}
