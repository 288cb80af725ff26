//! Test-time adaptive refinement of per-vertex features, and a small
//! per-vertex MLP refiner trained without correspondences.

mod refiner;

pub use refiner::{train_refiner, FeatureRefiner, TrainConfig, TrainReport, TrainingPair};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::align::{nn_map, AlignError, LossConfig, LossContext, LossParts, WeightScheme};
use crate::autodiff::{Tape, Var};
use crate::fmap::FmapConfig;
use crate::ot::{sinkhorn, sq_euclidean_cost, OtError, SinkhornOptions};
use crate::spectral::SpectralBasis;

#[derive(Debug, Error)]
pub enum RefineError {
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Ot(#[from] OtError),
    #[error("invalid refinement configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at iteration {iter}: {parts:?}")]
    NonFinite { iter: usize, parts: LossParts },
    #[error("training diverged at epoch {epoch}: loss {loss:e}")]
    Diverged { epoch: usize, loss: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    /// Outer iterations `T`.
    pub iterations: usize,
    /// Initial gradient step on the normalized features.
    pub step_size: f64,
    /// Halvings tried before an iteration gives up on moving.
    pub max_halvings: usize,
    pub sinkhorn: SinkhornOptions,
    /// Gradient steps per round with the coupling block held fixed.
    pub inner_steps: usize,
    /// Sinkhorn iterations differentiated through; 0 freezes the coupling.
    pub unrolled_iters: usize,
    pub loss: LossConfig,
    pub fmap: FmapConfig,
    pub weights: WeightScheme,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            iterations: 12,
            step_size: 1e-2,
            max_halvings: 12,
            sinkhorn: SinkhornOptions::default(),
            inner_steps: 5,
            unrolled_iters: 0,
            loss: LossConfig::default(),
            fmap: FmapConfig::default(),
            weights: WeightScheme::Uniform,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<(), RefineError> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(RefineError::InvalidConfig(format!("step_size = {}", self.step_size)));
        }
        if self.inner_steps == 0 {
            return Err(RefineError::InvalidConfig("inner_steps = 0".into()));
        }
        let s = &self.sinkhorn;
        if !(s.epsilon_rel.is_finite() && s.epsilon_rel > 0.0) || s.max_iters == 0 || !(s.tol > 0.0) {
            return Err(RefineError::InvalidConfig(format!("sinkhorn settings {s:?}")));
        }
        self.loss.validate()?;
        self.fmap.validate().map_err(AlignError::from)?;
        Ok(())
    }
}

/// One row of the loss trace; iteration 0 is the starting point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub parts: LossParts,
    pub total: f64,
    /// Step accepted in this iteration (0 when none was).
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct RefineOutput {
    pub fx: DMatrix<f64>,
    pub fy: DMatrix<f64>,
    pub map: Vec<usize>,
    pub trace: Vec<TraceRow>,
}

fn normalize_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
    out
}

/// Row-stochastic couplings `(Π̃_xy, Π̃_yx)` from an entropic plan between
/// the feature measures.
pub fn entropic_couplings(
    fx: &DMatrix<f64>,
    fy: &DMatrix<f64>,
    weights: (&[f64], &[f64]),
    opts: &SinkhornOptions,
) -> Result<(DMatrix<f64>, DMatrix<f64>), RefineError> {
    let cost = sq_euclidean_cost(fx, fy);
    let plan = sinkhorn(&cost, weights.0, weights.1, opts)?.coupling.matrix;
    let mut xy = plan.clone();
    for mut row in xy.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    let mut yx = plan.transpose();
    for mut row in yx.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    Ok((xy, yx))
}

/// Records `n` log-domain Sinkhorn sweeps on the tape, warm-started from
/// uniform potentials, and returns the row-stochastic couplings. Rows of
/// `exp((f_i + g_j − c_ij)/ε)` sum to `μ_i` right after an `f` update, so
/// `Π_xy = softmax_j((g_j − c_ij)/ε)`, and symmetrically for `Π_yx`.
fn unrolled_couplings(t: &mut Tape, fx: Var, fy: Var, weights: (&[f64], &[f64]), eps_rel: f64, n: usize) -> (Var, Var) {
    let (nx, ny) = (weights.0.len(), weights.1.len());
    let fyt = t.transpose(fy);
    let dots = t.matmul(fx, fyt);
    // unit rows: c_ij = 2 − 2⟨x_i, y_j⟩
    let two = t.constant(DMatrix::from_element(nx, ny, 2.0));
    let scaled = t.scale(dots, -2.0);
    let cost = t.add(two, scaled);
    let eps = eps_rel * t.value(cost).amax().max(f64::MIN_POSITIVE);
    let neg_c = t.scale(cost, -1.0 / eps);
    let neg_ct = t.transpose(neg_c);
    let log_mu = t.constant(DMatrix::from_fn(nx, 1, |i, _| weights.0[i].ln()));
    let log_nu = t.constant(DMatrix::from_fn(ny, 1, |j, _| weights.1[j].ln()));
    // potentials in units of ε
    let mut g = t.constant(DMatrix::zeros(1, ny));
    let mut f = t.constant(DMatrix::zeros(1, nx));
    for _ in 0..n.max(1) {
        let a = t.add_row(neg_c, g);
        let lse = t.row_logsumexp(a);
        let fcol = t.sub(log_mu, lse);
        f = t.transpose(fcol);
        let b = t.add_row(neg_ct, f);
        let lse = t.row_logsumexp(b);
        let gcol = t.sub(log_nu, lse);
        g = t.transpose(gcol);
    }
    let a = t.add_row(neg_c, g);
    let pi_xy = t.row_softmax(a);
    let b = t.add_row(neg_ct, f);
    let pi_yx = t.row_softmax(b);
    (pi_xy, pi_yx)
}

type Pair = (DMatrix<f64>, DMatrix<f64>);

struct Refinement<'a> {
    ctx: LossContext,
    config: &'a RefineConfig,
}

/// Scales `(gx, gy)` so that the largest row norm is one; `None` when the
/// gradient vanishes or is not finite.
fn unit_step(gx: DMatrix<f64>, gy: DMatrix<f64>) -> Option<Pair> {
    let g_max = gx.row_iter().chain(gy.row_iter()).map(|r| r.norm()).fold(0.0, f64::max);
    (g_max > 0.0 && g_max.is_finite()).then(|| (gx / g_max, gy / g_max))
}

impl Refinement<'_> {
    fn couplings(&self, fx: &DMatrix<f64>, fy: &DMatrix<f64>) -> Result<Pair, RefineError> {
        entropic_couplings(fx, fy, self.ctx.weights(), &self.config.sinkhorn)
    }

    /// Loss at `(fx, fy)` with the couplings these features induce; the
    /// couplings are returned for reuse.
    fn objective(&self, fx: &DMatrix<f64>, fy: &DMatrix<f64>) -> Result<(LossParts, f64, Pair), RefineError> {
        let pi = self.couplings(fx, fy)?;
        let (parts, total) = self.ctx.evaluate(fx, fy, Some((&pi.0, &pi.1)))?;
        Ok((parts, total, pi))
    }

    /// Loss with `pi` held fixed, or through unrolled Sinkhorn sweeps.
    fn inner_value(&self, fx: &DMatrix<f64>, fy: &DMatrix<f64>, pi: &Pair) -> Result<f64, RefineError> {
        Ok(self.inner_tape(fx, fy, pi, false)?.0)
    }

    fn inner_tape(&self, fx: &DMatrix<f64>, fy: &DMatrix<f64>, pi: &Pair, grad: bool) -> Result<(f64, Option<Pair>), RefineError> {
        let n = self.config.unrolled_iters;
        if n == 0 {
            if !grad {
                return Ok((self.ctx.evaluate(fx, fy, Some((&pi.0, &pi.1)))?.1, None));
            }
            let (_, v, gx, gy) = self.ctx.value_and_grad(fx, fy, Some((&pi.0, &pi.1)))?;
            return Ok((v, Some((gx, gy))));
        }
        let mut t = Tape::new();
        let (x, y) = if grad {
            (t.leaf(fx.clone()), t.leaf(fy.clone()))
        } else {
            (t.constant(fx.clone()), t.constant(fy.clone()))
        };
        let (wx, wy) = self.ctx.weights();
        let eps_rel = self.config.sinkhorn.epsilon_rel;
        let v = self
            .ctx
            .record_with(&mut t, x, y, |t, a, b| unrolled_couplings(t, a, b, (wx, wy), eps_rel, n));
        if !grad {
            if let Some(e) = t.error() {
                return Err(AlignError::from(e.clone()).into());
            }
            return Ok((t.scalar(v.total), None));
        }
        let grads = t.backward(v.total).map_err(AlignError::from)?;
        Ok((t.scalar(v.total), Some((grads.wrt(x), grads.wrt(y)))))
    }

    /// Up to `inner_steps` descent steps of at most `eta` (fastest vertex)
    /// on the loss with the coupling block fixed at `pi`. Each step halves
    /// until the inner loss drops.
    fn inner_descent(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, pi: &Pair, eta: f64) -> Result<Option<Pair>, RefineError> {
        let mut cur: Option<Pair> = None;
        let mut value = f64::NAN;
        for _ in 0..self.config.inner_steps {
            let (fx, fy) = cur.as_ref().map_or((x, y), |(a, b)| (a, b));
            let (v, g) = self.inner_tape(fx, fy, pi, true)?;
            if value.is_nan() {
                value = v;
            }
            let Some((gx, gy)) = g.and_then(|(gx, gy)| unit_step(gx, gy)) else {
                break;
            };
            let mut h = eta;
            let mut moved = None;
            for _ in 0..=self.config.max_halvings {
                let cx = normalize_rows(&(fx - &gx * h));
                let cy = normalize_rows(&(fy - &gy * h));
                let trial = self.inner_value(&cx, &cy, pi)?;
                if trial.is_finite() && trial <= value {
                    value = trial;
                    moved = Some((cx, cy));
                    break;
                }
                h *= 0.5;
            }
            match moved {
                Some(p) => cur = Some(p),
                None => break,
            }
        }
        Ok(cur)
    }
}

/// The loss refinement would start from: features row-normalized, couplings
/// from a converged entropic plan. Reported as iteration 0.
pub fn starting_loss(
    basis_x: &SpectralBasis,
    basis_y: &SpectralBasis,
    fx: &DMatrix<f64>,
    fy: &DMatrix<f64>,
    config: &RefineConfig,
) -> Result<TraceRow, RefineError> {
    config.validate()?;
    if fx.ncols() != fy.ncols() {
        return Err(AlignError::DimensionMismatch(format!("feature dims {} and {}", fx.ncols(), fy.ncols())).into());
    }
    let ctx = LossContext::new(basis_x, basis_y, &config.fmap, &config.loss, config.weights, fx.ncols())?;
    let run = Refinement { ctx, config };
    let (parts, total, _) = run.objective(&normalize_rows(fx), &normalize_rows(fy))?;
    if !total.is_finite() {
        return Err(RefineError::NonFinite { iter: 0, parts });
    }
    Ok(TraceRow {
        iter: 0,
        parts,
        total,
        step: 0.0,
    })
}

/// Refines `fx`, `fy` by `T` rounds of block-coordinate descent: entropic
/// couplings from the current features, then `inner_steps` gradient steps
/// (five by default) on the total loss with those couplings held fixed. A round is accepted only if
/// the loss (re-evaluated with the couplings of the new features) does not
/// increase; otherwise its step is halved and the round retried. Returns the
/// refined normalized features, their nearest-neighbour map and the trace
/// of accepted losses.
pub fn adaptive_refine(
    basis_x: &SpectralBasis,
    basis_y: &SpectralBasis,
    fx: &DMatrix<f64>,
    fy: &DMatrix<f64>,
    config: &RefineConfig,
) -> Result<RefineOutput, RefineError> {
    config.validate()?;
    if config.iterations == 0 {
        return Ok(RefineOutput {
            fx: fx.clone(),
            fy: fy.clone(),
            map: nn_map(fx, fy)?,
            trace: Vec::new(),
        });
    }
    if fx.ncols() != fy.ncols() {
        return Err(AlignError::DimensionMismatch(format!("feature dims {} and {}", fx.ncols(), fy.ncols())).into());
    }
    let ctx = LossContext::new(basis_x, basis_y, &config.fmap, &config.loss, config.weights, fx.ncols())?;
    let run = Refinement { ctx, config };
    let mut x = normalize_rows(fx);
    let mut y = normalize_rows(fy);
    let (parts, mut current, mut pi) = run.objective(&x, &y)?;
    if !current.is_finite() {
        return Err(RefineError::NonFinite { iter: 0, parts });
    }
    let mut trace = vec![TraceRow {
        iter: 0,
        parts,
        total: current,
        step: 0.0,
    }];
    let mut step = config.step_size;
    for iter in 1..=config.iterations {
        let mut accepted = None;
        let mut eta = step;
        for _ in 0..=config.max_halvings {
            let Some((cx, cy)) = run.inner_descent(&x, &y, &pi, eta)? else {
                break;
            };
            match run.objective(&cx, &cy) {
                Ok((p, v, cpi)) if v.is_finite() && v <= current => {
                    accepted = Some((cx, cy, p, v, cpi));
                    break;
                }
                Ok((p, v, _)) if !v.is_finite() => log::debug!("iteration {iter}: non-finite trial loss {p:?}"),
                Ok(_) => {}
                Err(e) => log::debug!("iteration {iter}: trial rejected: {e}"),
            }
            eta *= 0.5;
        }
        let row = match accepted {
            Some((cx, cy, p, v, cpi)) => {
                x = cx;
                y = cy;
                pi = cpi;
                current = v;
                step = (eta * 2.0).min(config.step_size);
                TraceRow {
                    iter,
                    parts: p,
                    total: v,
                    step: eta,
                }
            }
            None => TraceRow {
                step: 0.0,
                iter,
                ..*trace.last().expect("trace starts with the initial loss")
            },
        };
        log::debug!("refine iteration {iter}: loss {:.6e} (step {:.2e})", row.total, row.step);
        trace.push(row);
    }
    let map = nn_map(&x, &y)?;
    Ok(RefineOutput { fx: x, fy: y, map, trace })
}
