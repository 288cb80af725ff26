//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records operations eagerly; [`Tape::backward`] sweeps it once in
//! reverse. Sort permutations of the 1D transport plans and row factorizations
//! of the functional-map solve are captured in the forward pass and reused as
//! constants by the backward pass.

mod check;

pub use check::{check_program, finite_difference_check, FdEntry, FdOptions, FdReport};

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::fmap::{solve_masked, RowFactors};
use crate::ot::{quantile_plan, PlanEntry};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("loss root must be 1×1, got {rows}×{cols}")]
    NonScalarRoot { rows: usize, cols: usize },
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op} failed: {detail}")]
    Primitive { op: &'static str, detail: String },
    #[error("non-finite loss value {0}")]
    NonFinite(f64),
}

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

struct SliceData {
    x: usize,
    y: usize,
    directions: DMatrix<f64>,
    p: f64,
    px: DMatrix<f64>,
    py: DMatrix<f64>,
    plans: Vec<Vec<PlanEntry>>,
}

struct SolveData {
    a: usize,
    b: usize,
    factors: RowFactors,
}

enum Op {
    Leaf,
    Const,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Scale(usize, f64),
    Hadamard(usize, usize),
    /// `a + 1 rᵀ` with `r` a 1×m row.
    AddRow(usize, usize),
    /// `a + c 1ᵀ` with `c` an n×1 column.
    AddCol(usize, usize),
    RowSoftmax(usize),
    RowNormalize(usize),
    RowLogSumExp(usize),
    Exp(usize),
    Tanh(usize),
    Powf(usize, f64),
    Sum(usize),
    SumSquares(usize),
    SliceWpp(Box<SliceData>),
    MaskedSolve(Box<SolveData>),
}

struct Node {
    value: DMatrix<f64>,
    op: Op,
    requires_grad: bool,
}

/// Operation recorder. Shape errors poison the tape: later operations still
/// return handles, and [`Tape::backward`] reports the first error.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    error: Option<AutodiffError>,
}

/// Gradients of a scalar root with respect to the leaves of a tape.
pub struct Gradients {
    grads: Vec<Option<DMatrix<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; zeros if the root does not depend on it.
    pub fn wrt(&self, v: Var) -> DMatrix<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                DMatrix::zeros(r, c)
            }
        }
    }
}

fn accumulate(slot: &mut Option<DMatrix<f64>>, g: DMatrix<f64>) {
    match slot {
        Some(acc) => *acc += g,
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn error(&self) -> Option<&AutodiffError> {
        self.error.as_ref()
    }

    pub fn value(&self, v: Var) -> &DMatrix<f64> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = &self.nodes[v.0].value;
        if m.shape() == (1, 1) {
            m[(0, 0)]
        } else {
            f64::NAN
        }
    }

    fn push(&mut self, value: DMatrix<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn fail(&mut self, op: &'static str, detail: String) -> Var {
        if self.error.is_none() {
            self.error = Some(AutodiffError::ShapeMismatch { op, detail });
        }
        self.push(DMatrix::zeros(0, 0), Op::Const, false)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable parameter.
    pub fn leaf(&mut self, value: DMatrix<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant of differentiation.
    pub fn constant(&mut self, value: DMatrix<f64>) -> Var {
        self.push(value, Op::Const, false)
    }

    pub fn scalar_constant(&mut self, v: f64) -> Var {
        self.constant(DMatrix::from_element(1, 1, v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return self.fail("matmul", format!("{sa:?} · {sb:?}"));
        }
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMul(a.0, b.0), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.transpose();
        let rg = self.rg(a);
        self.push(v, Op::Transpose(a.0), rg)
    }

    fn same_shape(&mut self, op: &'static str, a: Var, b: Var) -> bool {
        if self.shape(a) != self.shape(b) {
            let detail = format!("{:?} vs {:?}", self.shape(a), self.shape(b));
            self.fail(op, detail);
            false
        } else {
            true
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        if !self.same_shape("add", a, b) {
            return Var(self.nodes.len() - 1);
        }
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a.0, b.0), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        if !self.same_shape("sub", a, b) {
            return Var(self.nodes.len() - 1);
        }
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a.0, b.0), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = &self.nodes[a.0].value * s;
        let rg = self.rg(a);
        self.push(v, Op::Scale(a.0, s), rg)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        if !self.same_shape("hadamard", a, b) {
            return Var(self.nodes.len() - 1);
        }
        let v = self.nodes[a.0].value.component_mul(&self.nodes[b.0].value);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Hadamard(a.0, b.0), rg)
    }

    /// Adds the 1×m row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let (sa, sr) = (self.shape(a), self.shape(r));
        if sr != (1, sa.1) {
            return self.fail("add_row", format!("{sa:?} + row {sr:?}"));
        }
        let mut v = self.nodes[a.0].value.clone();
        let row = &self.nodes[r.0].value;
        for j in 0..sa.1 {
            v.column_mut(j).add_scalar_mut(row[(0, j)]);
        }
        let rg = self.rg(a) || self.rg(r);
        self.push(v, Op::AddRow(a.0, r.0), rg)
    }

    /// Adds the n×1 column `c` to every column of `a`.
    pub fn add_col(&mut self, a: Var, c: Var) -> Var {
        let (sa, sc) = (self.shape(a), self.shape(c));
        if sc != (sa.0, 1) {
            return self.fail("add_col", format!("{sa:?} + column {sc:?}"));
        }
        let mut v = self.nodes[a.0].value.clone();
        let col = self.nodes[c.0].value.column(0).into_owned();
        for mut column in v.column_iter_mut() {
            column += &col;
        }
        let rg = self.rg(a) || self.rg(c);
        self.push(v, Op::AddCol(a.0, c.0), rg)
    }

    /// Softmax across each row, with row-max subtraction.
    pub fn row_softmax(&mut self, a: Var) -> Var {
        let mut v = self.nodes[a.0].value.clone();
        for mut row in v.row_iter_mut() {
            let max = row.max();
            row.apply(|x| *x = (*x - max).exp());
            let total = row.sum();
            row /= total;
        }
        let rg = self.rg(a);
        self.push(v, Op::RowSoftmax(a.0), rg)
    }

    /// Scales every nonzero row to unit Euclidean norm.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let mut v = self.nodes[a.0].value.clone();
        for mut row in v.row_iter_mut() {
            let n = row.norm();
            if n > 0.0 {
                row /= n;
            }
        }
        let rg = self.rg(a);
        self.push(v, Op::RowNormalize(a.0), rg)
    }

    /// `log Σ_j exp(a_ij)` per row (n×1).
    pub fn row_logsumexp(&mut self, a: Var) -> Var {
        let m = &self.nodes[a.0].value;
        let v = DMatrix::from_fn(m.nrows(), 1, |i, _| {
            let row = m.row(i);
            let max = row.max();
            if max == f64::NEG_INFINITY {
                return max;
            }
            max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
        });
        let rg = self.rg(a);
        self.push(v, Op::RowLogSumExp(a.0), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.map(f64::exp);
        let rg = self.rg(a);
        self.push(v, Op::Exp(a.0), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.map(f64::tanh);
        let rg = self.rg(a);
        self.push(v, Op::Tanh(a.0), rg)
    }

    /// Elementwise power. At a zero base with exponent below one the
    /// derivative is taken as zero (the subgradient used at a perfect fit).
    pub fn powf(&mut self, a: Var, e: f64) -> Var {
        let v = self.nodes[a.0].value.map(|x| x.powf(e));
        let rg = self.rg(a);
        self.push(v, Op::Powf(a.0, e), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = DMatrix::from_element(1, 1, self.nodes[a.0].value.sum());
        let rg = self.rg(a);
        self.push(v, Op::Sum(a.0), rg)
    }

    /// Squared Frobenius norm.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = DMatrix::from_element(1, 1, self.nodes[a.0].value.norm_squared());
        let rg = self.rg(a);
        self.push(v, Op::SumSquares(a.0), rg)
    }

    /// `‖a‖²` for the difference of two same-shaped values.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        self.sum_squares(d)
    }

    /// Per-slice `W_p^p(θ_l♯x, θ_l♯y)` as an L×1 column; `x`, `y` carry
    /// probability weights `wx`, `wy`. The monotone plans are frozen.
    pub fn slice_wpp(&mut self, x: Var, y: Var, wx: &[f64], wy: &[f64], directions: &DMatrix<f64>, p: f64) -> Var {
        let (sx, sy) = (self.shape(x), self.shape(y));
        if sx.1 != sy.1 || sx.1 != directions.nrows() || wx.len() != sx.0 || wy.len() != sy.0 {
            return self.fail(
                "slice_wpp",
                format!(
                    "x {sx:?}, y {sy:?}, directions {:?}, weights {}/{}",
                    directions.shape(),
                    wx.len(),
                    wy.len()
                ),
            );
        }
        let px = &self.nodes[x.0].value * directions;
        let py = &self.nodes[y.0].value * directions;
        let plans: Vec<Vec<PlanEntry>> = (0..directions.ncols())
            .into_par_iter()
            .map(|l| quantile_plan(px.column(l).as_slice(), wx, py.column(l).as_slice(), wy))
            .collect();
        let values = DMatrix::from_fn(plans.len(), 1, |l, _| {
            plans[l]
                .iter()
                .map(|e| e.mass * crate::ot::cost_1d(px[(e.a, l)] - py[(e.b, l)], p))
                .sum()
        });
        let rg = self.rg(x) || self.rg(y);
        let data = SliceData {
            x: x.0,
            y: y.0,
            directions: directions.clone(),
            p,
            px,
            py,
            plans,
        };
        self.push(values, Op::SliceWpp(Box::new(data)), rg)
    }

    /// Row-wise masked least squares `C = argmin ‖CA − B‖² + λ Σ D_ij C_ij²`,
    /// differentiated through the adjoint system.
    pub fn masked_solve(&mut self, a: Var, b: Var, mask: &DMatrix<f64>, lambda: f64) -> Var {
        let result = solve_masked(&self.nodes[a.0].value, &self.nodes[b.0].value, mask, lambda);
        match result {
            Ok((c, factors)) => {
                let rg = self.rg(a) || self.rg(b);
                let data = SolveData { a: a.0, b: b.0, factors };
                self.push(c, Op::MaskedSolve(Box::new(data)), rg)
            }
            Err(e) => {
                if self.error.is_none() {
                    self.error = Some(AutodiffError::Primitive {
                        op: "masked_solve",
                        detail: e.to_string(),
                    });
                }
                self.push(DMatrix::zeros(0, 0), Op::Const, false)
            }
        }
    }

    /// Reverse sweep from a 1×1 root.
    pub fn backward(&self, root: Var) -> Result<Gradients, AutodiffError> {
        if let Some(e) = &self.error {
            return Err(e.clone());
        }
        let (rows, cols) = self.shape(root);
        if (rows, cols) != (1, 1) {
            return Err(AutodiffError::NonScalarRoot { rows, cols });
        }
        let mut grads: Vec<Option<DMatrix<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(DMatrix::from_element(1, 1, 1.0));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf | Op::Const) {
                continue;
            }
            // interior gradients are consumed; leaf gradients stay for the caller
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let val = |i: usize| &self.nodes[i].value;
            let wants = |i: usize| self.nodes[i].requires_grad;
            match &node.op {
                Op::Leaf | Op::Const => {}
                Op::MatMul(a, b) => {
                    if wants(*a) {
                        accumulate(&mut grads[*a], &g * val(*b).transpose());
                    }
                    if wants(*b) {
                        accumulate(&mut grads[*b], val(*a).transpose() * &g);
                    }
                }
                Op::Transpose(a) => accumulate(&mut grads[*a], g.transpose()),
                Op::Add(a, b) => {
                    if wants(*a) {
                        accumulate(&mut grads[*a], g.clone());
                    }
                    if wants(*b) {
                        accumulate(&mut grads[*b], g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if wants(*a) {
                        accumulate(&mut grads[*a], g.clone());
                    }
                    if wants(*b) {
                        accumulate(&mut grads[*b], -&g);
                    }
                }
                Op::Scale(a, s) => accumulate(&mut grads[*a], &g * *s),
                Op::Hadamard(a, b) => {
                    if wants(*a) {
                        accumulate(&mut grads[*a], g.component_mul(val(*b)));
                    }
                    if wants(*b) {
                        accumulate(&mut grads[*b], g.component_mul(val(*a)));
                    }
                }
                Op::AddRow(a, r) => {
                    if wants(*r) {
                        let row = DMatrix::from_fn(1, g.ncols(), |_, j| g.column(j).sum());
                        accumulate(&mut grads[*r], row);
                    }
                    if wants(*a) {
                        accumulate(&mut grads[*a], g);
                    }
                }
                Op::AddCol(a, c) => {
                    if wants(*c) {
                        let col = DMatrix::from_fn(g.nrows(), 1, |i, _| g.row(i).sum());
                        accumulate(&mut grads[*c], col);
                    }
                    if wants(*a) {
                        accumulate(&mut grads[*a], g);
                    }
                }
                Op::RowSoftmax(a) => {
                    let y = &node.value;
                    let mut out = g.component_mul(y);
                    for i in 0..out.nrows() {
                        let s = out.row(i).sum();
                        for j in 0..out.ncols() {
                            out[(i, j)] -= y[(i, j)] * s;
                        }
                    }
                    accumulate(&mut grads[*a], out);
                }
                Op::RowNormalize(a) => {
                    let x = val(*a);
                    let y = &node.value;
                    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
                    for i in 0..x.nrows() {
                        let n = x.row(i).norm();
                        if n == 0.0 {
                            continue;
                        }
                        let dot = g.row(i).dot(&y.row(i));
                        for j in 0..x.ncols() {
                            out[(i, j)] = (g[(i, j)] - y[(i, j)] * dot) / n;
                        }
                    }
                    accumulate(&mut grads[*a], out);
                }
                Op::RowLogSumExp(a) => {
                    let x = val(*a);
                    let lse = &node.value;
                    let out = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
                        if lse[(i, 0)] == f64::NEG_INFINITY {
                            0.0
                        } else {
                            g[(i, 0)] * (x[(i, j)] - lse[(i, 0)]).exp()
                        }
                    });
                    accumulate(&mut grads[*a], out);
                }
                Op::Exp(a) => accumulate(&mut grads[*a], g.component_mul(&node.value)),
                Op::Tanh(a) => {
                    let d = node.value.map(|t| 1.0 - t * t);
                    accumulate(&mut grads[*a], g.component_mul(&d));
                }
                Op::Powf(a, e) => {
                    let x = val(*a);
                    let d = x.map(|v| if v == 0.0 && *e < 1.0 { 0.0 } else { e * v.powf(e - 1.0) });
                    accumulate(&mut grads[*a], g.component_mul(&d));
                }
                Op::Sum(a) => {
                    let (r, c) = val(*a).shape();
                    accumulate(&mut grads[*a], DMatrix::from_element(r, c, g[(0, 0)]));
                }
                Op::SumSquares(a) => accumulate(&mut grads[*a], val(*a) * (2.0 * g[(0, 0)])),
                Op::SliceWpp(data) => {
                    let (gx, gy) = slice_backward(data, &g);
                    if wants(data.x) {
                        accumulate(&mut grads[data.x], gx);
                    }
                    if wants(data.y) {
                        accumulate(&mut grads[data.y], gy);
                    }
                }
                Op::MaskedSolve(data) => {
                    let (ga, gb) = solve_backward(data, val(data.a), val(data.b), &node.value, &g);
                    if wants(data.a) {
                        accumulate(&mut grads[data.a], ga);
                    }
                    if wants(data.b) {
                        accumulate(&mut grads[data.b], gb);
                    }
                }
            }
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }
}

fn slice_backward(data: &SliceData, g: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (nx, ny, l) = (data.px.nrows(), data.py.nrows(), data.plans.len());
    let mut dpx = DMatrix::zeros(nx, l);
    let mut dpy = DMatrix::zeros(ny, l);
    for (s, plan) in data.plans.iter().enumerate() {
        let gs = g[(s, 0)];
        if gs == 0.0 {
            continue;
        }
        for e in plan {
            let diff = data.px[(e.a, s)] - data.py[(e.b, s)];
            let d = if data.p == 2.0 {
                2.0 * diff
            } else if diff == 0.0 {
                0.0
            } else {
                data.p * diff.abs().powf(data.p - 1.0) * diff.signum()
            };
            let v = gs * e.mass * d;
            dpx[(e.a, s)] += v;
            dpy[(e.b, s)] -= v;
        }
    }
    let dt = data.directions.transpose();
    (dpx * &dt, dpy * &dt)
}

/// Adjoint of the row solves `G_i c_i = A b_i`, `G_i = AAᵀ + λ diag(D_i)`:
/// with `z_i = G_i⁻¹ ḡ_i`, `Ā = Σ_i z_i b_i − z_i (Aᵀc_i)ᵀ − c_i (Aᵀz_i)ᵀ`
/// and `B̄_i = (Aᵀ z_i)ᵀ`.
fn solve_backward(
    data: &SolveData,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    g: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (kb, ka) = c.shape();
    let mut z = DMatrix::zeros(kb, ka);
    for i in 0..kb {
        let zi = data.factors[i].solve(&g.row(i).transpose());
        z.row_mut(i).copy_from(&zi.transpose());
    }
    // rows of Z, C hold z_iᵀ, c_iᵀ
    let at_z = z.clone() * a; // row i: (Aᵀ z_i)ᵀ
    let at_c = c * a;
    let ga = z.transpose() * b - z.transpose() * &at_c - c.transpose() * &at_z;
    (ga, at_z)
}

/// Evaluates `program` on fresh leaves holding `params` and returns the
/// loss value with one gradient per parameter.
pub fn value_and_grad<F>(params: &[DMatrix<f64>], program: F) -> Result<(f64, Vec<DMatrix<f64>>), AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let leaves: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let root = program(&mut tape, &leaves);
    let grads = tape.backward(root)?;
    let value = tape.scalar(root);
    if !value.is_finite() {
        return Err(AutodiffError::NonFinite(value));
    }
    Ok((value, leaves.iter().map(|&v| grads.wrt(v)).collect()))
}
