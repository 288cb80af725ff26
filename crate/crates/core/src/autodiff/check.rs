use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{value_and_grad, AutodiffError, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdOptions {
    /// Step `h = h_rel · max(1, |x_i|)` for central differences.
    pub h_rel: f64,
    /// Number of sampled coordinates (all of them if fewer exist).
    pub samples: usize,
    pub tolerance: f64,
    /// Relative errors are measured against at least `abs_floor · (1 + |f|)`
    /// so coordinates with vanishing gradient do not divide by zero.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            h_rel: 1e-5,
            samples: 10,
            tolerance: 1e-4,
            abs_floor: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdEntry {
    pub param: usize,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub entries: Vec<FdEntry>,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Compares `analytic` gradients of `f` against central differences on a
/// seeded sample of coordinates.
pub fn finite_difference_check<F>(f: F, params: &[DMatrix<f64>], analytic: &[DMatrix<f64>], opts: &FdOptions) -> FdReport
where
    F: Fn(&[DMatrix<f64>]) -> f64,
{
    let sizes: Vec<usize> = params.iter().map(|p| p.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut picks = sample(&mut rng, total, opts.samples.min(total)).into_vec();
    picks.sort_unstable();
    let f0 = f(params);
    let floor = opts.abs_floor * (1.0 + f0.abs());
    let mut work = params.to_vec();
    let mut entries = Vec::with_capacity(picks.len());
    for flat in picks {
        let (mut param, mut idx) = (0, flat);
        while idx >= sizes[param] {
            idx -= sizes[param];
            param += 1;
        }
        let rows = params[param].nrows();
        let (row, col) = (idx % rows, idx / rows);
        let x = params[param][(row, col)];
        let h = opts.h_rel * x.abs().max(1.0);
        work[param][(row, col)] = x + h;
        let up = f(&work);
        work[param][(row, col)] = x - h;
        let down = f(&work);
        work[param][(row, col)] = x;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[param][(row, col)];
        let rel_err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        entries.push(FdEntry {
            param,
            row,
            col,
            analytic: a,
            numeric,
            rel_err,
        });
    }
    let max_rel_err = entries.iter().map(|e| e.rel_err).fold(0.0, f64::max);
    FdReport {
        passed: max_rel_err <= opts.tolerance && max_rel_err.is_finite(),
        entries,
        max_rel_err,
    }
}

/// Runs [`finite_difference_check`] on a tape program against its own
/// reverse-mode gradients.
pub fn check_program<F>(params: &[DMatrix<f64>], program: F, opts: &FdOptions) -> Result<FdReport, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let (_, grads) = value_and_grad(params, &program)?;
    let eval = |p: &[DMatrix<f64>]| {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = p.iter().map(|m| tape.constant(m.clone())).collect();
        let root = program(&mut tape, &leaves);
        tape.scalar(root)
    };
    Ok(finite_difference_check(eval, params, &grads, opts))
}
