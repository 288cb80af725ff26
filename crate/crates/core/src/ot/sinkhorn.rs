use nalgebra::DMatrix;

use super::{check_weights, Coupling, OtError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions {
    /// Entropic regularization relative to the largest cost entry.
    pub epsilon_rel: f64,
    pub max_iters: usize,
    /// Stop once the largest marginal violation drops below this.
    pub tol: f64,
    /// Warm-start from coarser ε values (counts toward `max_iters`).
    pub epsilon_scaling: bool,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            epsilon_rel: 1e-2,
            max_iters: 100,
            tol: 1e-6,
            epsilon_scaling: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornResult {
    pub coupling: Coupling,
    /// `⟨π, c⟩`.
    pub cost: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub converged: bool,
    pub marginal_error: f64,
    /// Dual potentials `f`, `g` with `π_ij = exp((f_i + g_j − c_ij)/ε)`.
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

/// Squared Euclidean cost between feature rows.
pub fn sq_euclidean_cost(fx: &DMatrix<f64>, fy: &DMatrix<f64>) -> DMatrix<f64> {
    let nx: Vec<f64> = fx.row_iter().map(|r| r.norm_squared()).collect();
    let ny: Vec<f64> = fy.row_iter().map(|r| r.norm_squared()).collect();
    let mut c = fx * fy.transpose();
    for j in 0..c.ncols() {
        for i in 0..c.nrows() {
            // clamp cancellation noise so the cost stays non-negative
            c[(i, j)] = (nx[i] + ny[j] - 2.0 * c[(i, j)]).max(0.0);
        }
    }
    c
}

/// Geometric decay of ε between warm-start stages.
const EPS_DECAY: f64 = 0.5;
/// Iteration budget of each intermediate stage.
const STAGE_ITERS: usize = 50;

/// Scalings are folded back into the potentials once they leave
/// `[e^-ABSORB, e^ABSORB]`.
const ABSORB: f64 = 50.0;

/// Log-domain `f` update: rows of the plan get mass `μ_i` exactly.
fn log_update(cost_t: &DMatrix<f64>, log_mu: &[f64], eps: f64, f: &mut [f64], g: &[f64]) {
    let mut buf = vec![0.0; g.len()];
    for (i, fi) in f.iter_mut().enumerate() {
        let mut max = f64::NEG_INFINITY;
        for ((b, c), gj) in buf.iter_mut().zip(cost_t.column(i).iter()).zip(g) {
            *b = (gj - c) / eps;
            max = max.max(*b);
        }
        let s: f64 = buf.iter().map(|b| (b - max).exp()).sum();
        *fi = eps * (log_mu[i] - max - s.ln());
    }
}

/// Gibbs kernel scaled by the current potentials.
fn kernel(cost: &DMatrix<f64>, eps: f64, f: &[f64], g: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(cost.nrows(), cost.ncols(), |i, j| ((f[i] + g[j] - cost[(i, j)]) / eps).exp())
}

struct Problem<'a> {
    cost: &'a DMatrix<f64>,
    cost_t: DMatrix<f64>,
    mu: &'a [f64],
    nu: &'a [f64],
    log_mu: Vec<f64>,
    log_nu: Vec<f64>,
}

impl Problem<'_> {
    /// Alternating projections at a fixed `eps`, run as scaling iterations on
    /// a stabilized kernel that is rebuilt whenever the scalings grow large.
    /// Stops below `tol` row violation (columns are exact after each
    /// iteration) or after `budget` iterations; returns (iterations, error).
    fn solve(&self, eps: f64, f: &mut [f64], g: &mut [f64], budget: usize, tol: f64) -> (usize, f64) {
        let (nx, ny) = self.cost.shape();
        let mut used = 0;
        let mut error = f64::INFINITY;
        while used < budget {
            // a log-domain pass keeps every kernel row away from underflow
            log_update(&self.cost_t, &self.log_mu, eps, f, g);
            log_update(self.cost, &self.log_nu, eps, g, f);
            used += 1;
            let k = kernel(self.cost, eps, f, g);
            let mut u = nalgebra::DVector::from_element(nx, 1.0);
            let mut v = nalgebra::DVector::from_element(ny, 1.0);
            let mut stable = true;
            loop {
                let kv = &k * &v;
                error = (0..nx).map(|i| (u[i] * kv[i] - self.mu[i]).abs()).fold(0.0, f64::max);
                if error < tol || used >= budget {
                    break;
                }
                for i in 0..nx {
                    u[i] = self.mu[i] / kv[i];
                }
                let ktu = k.tr_mul(&u);
                for j in 0..ny {
                    v[j] = self.nu[j] / ktu[j];
                }
                used += 1;
                let out = |x: &f64| !(x.is_finite() && x.ln().abs() < ABSORB);
                if u.iter().any(out) || v.iter().any(out) {
                    stable = false;
                    break;
                }
            }
            if stable || u.iter().chain(v.iter()).all(|x| x.is_finite() && *x > 0.0) {
                for (fi, ui) in f.iter_mut().zip(u.iter()) {
                    *fi += eps * ui.ln();
                }
                for (gj, vj) in g.iter_mut().zip(v.iter()) {
                    *gj += eps * vj.ln();
                }
            }
            if stable {
                break;
            }
        }
        (used, error)
    }
}

/// Entropic OT by log-domain alternating marginal projections.
///
/// Reaching `max_iters` without meeting `tol` is reported through
/// `converged`, not as an error.
pub fn sinkhorn(cost: &DMatrix<f64>, mu: &[f64], nu: &[f64], opts: &SinkhornOptions) -> Result<SinkhornResult, OtError> {
    let (nx, ny) = cost.shape();
    if mu.len() != nx || nu.len() != ny {
        return Err(OtError::DimensionMismatch(format!(
            "cost {nx}×{ny}, marginals {} and {}",
            mu.len(),
            nu.len()
        )));
    }
    check_weights(mu, "mu")?;
    check_weights(nu, "nu")?;
    if !(opts.epsilon_rel > 0.0 && opts.epsilon_rel.is_finite()) {
        return Err(OtError::InvalidParameter(format!("epsilon_rel = {}", opts.epsilon_rel)));
    }
    let mut max_cost: f64 = 0.0;
    for j in 0..ny {
        for i in 0..nx {
            let c = cost[(i, j)];
            if !c.is_finite() {
                return Err(OtError::NonFiniteCost { row: i, col: j });
            }
            max_cost = max_cost.max(c.abs());
        }
    }
    let eps = if max_cost > 0.0 { opts.epsilon_rel * max_cost } else { opts.epsilon_rel };
    let problem = Problem {
        cost,
        cost_t: cost.transpose(),
        mu,
        nu,
        log_mu: mu.iter().map(|m| m.ln()).collect(),
        log_nu: nu.iter().map(|m| m.ln()).collect(),
    };
    let mut f = vec![0.0; nx];
    let mut g = vec![0.0; ny];
    let mut iterations = 0;
    let mut error;
    // ε-scaling: warm-start the target problem from a geometric sequence of
    // coarser regularizations, each solved to a loose tolerance
    let mut stage_eps = if opts.epsilon_scaling { eps.max(max_cost) } else { eps };
    loop {
        let last = stage_eps <= eps;
        let (budget, tol) = if last {
            (opts.max_iters - iterations, opts.tol)
        } else {
            (STAGE_ITERS.min(opts.max_iters - iterations), opts.tol.max(1e-3))
        };
        let (used, e) = problem.solve(stage_eps, &mut f, &mut g, budget, tol);
        iterations += used;
        error = e;
        if last || iterations >= opts.max_iters {
            if !last {
                // budget exhausted before reaching the target ε
                log_update(&problem.cost_t, &problem.log_mu, eps, &mut f, &g);
                log_update(cost, &problem.log_nu, eps, &mut g, &f);
                error = f64::INFINITY;
            }
            break;
        }
        stage_eps = (stage_eps * EPS_DECAY).max(eps);
    }
    let matrix = DMatrix::from_fn(nx, ny, |i, j| ((f[i] + g[j] - cost[(i, j)]) / eps).exp());
    let coupling = Coupling {
        matrix,
        source: mu.to_vec(),
        target: nu.to_vec(),
    };
    let marginal_error = coupling.marginal_error();
    Ok(SinkhornResult {
        cost: coupling.cost(cost),
        converged: error < opts.tol,
        coupling,
        epsilon: eps,
        iterations,
        marginal_error,
        f,
        g,
    })
}
