use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::RefineError;
use crate::align::{AlignError, LossConfig, LossContext, WeightScheme};
use crate::autodiff::{Tape, Var};
use crate::fmap::FmapConfig;
use crate::formats::LayerWeights;
use crate::spectral::SpectralBasis;

/// Per-vertex MLP: every layer is `tanh(X W + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRefiner {
    layers: Vec<LayerWeights>,
}

/// Matrix with orthonormal rows or columns (whichever is shorter).
fn semi_orthogonal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = rows.max(cols);
    let g = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let q = g.qr().q();
    q.view((0, 0), (rows, cols)).into_owned()
}

impl FeatureRefiner {
    /// Layers of widths `dims[0] → dims[1] → …`. Weights start
    /// semi-orthogonal with zero biases, so the initial map is close to a
    /// distance-preserving linear embedding of unit-norm inputs.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self, RefineError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(RefineError::InvalidConfig(format!("layer widths {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| LayerWeights {
                weight: semi_orthogonal(w[0], w[1], &mut rng),
                bias: DMatrix::zeros(1, w[1]),
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<LayerWeights>) -> Result<Self, RefineError> {
        if layers.is_empty() {
            return Err(RefineError::InvalidConfig("refiner without layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.shape() != (1, l.weight.ncols()) {
                return Err(RefineError::InvalidConfig(format!("layer {i}: bias shape {:?}", l.bias.shape())));
            }
            if i > 0 && layers[i - 1].weight.ncols() != l.weight.nrows() {
                return Err(RefineError::InvalidConfig(format!("layer {i}: input width {}", l.weight.nrows())));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[LayerWeights] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.ncols()
    }

    fn params(&self) -> Vec<DMatrix<f64>> {
        self.layers.iter().flat_map(|l| [l.weight.clone(), l.bias.clone()]).collect()
    }

    fn with_params(&self, params: &[DMatrix<f64>]) -> Self {
        Self {
            layers: params
                .chunks_exact(2)
                .map(|c| LayerWeights {
                    weight: c[0].clone(),
                    bias: c[1].clone(),
                })
                .collect(),
        }
    }

    /// Input rows are unit-normalized before the first layer and output rows
    /// after the last, matching what the losses see during training.
    pub fn forward(&self, input: &DMatrix<f64>) -> Result<DMatrix<f64>, RefineError> {
        if input.ncols() != self.input_dim() {
            return Err(AlignError::DimensionMismatch(format!(
                "refiner expects {} input features, got {}",
                self.input_dim(),
                input.ncols()
            ))
            .into());
        }
        let mut h = normalize_rows(input);
        for l in &self.layers {
            h *= &l.weight;
            for (j, mut col) in h.column_iter_mut().enumerate() {
                let b = l.bias[(0, j)];
                col.apply(|x| *x = (*x + b).tanh());
            }
        }
        Ok(normalize_rows(&h))
    }

    /// Records the forward pass with the weights given as tape variables
    /// (weight, bias, weight, bias, …).
    pub fn record(t: &mut Tape, input: Var, params: &[Var]) -> Var {
        let mut h = input;
        for c in params.chunks_exact(2) {
            let z = t.matmul(h, c[0]);
            let z = t.add_row(z, c[1]);
            h = t.tanh(z);
        }
        h
    }
}

/// One unlabeled training pair: bases and raw descriptors of both shapes.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub basis_x: SpectralBasis,
    pub basis_y: SpectralBasis,
    pub input_x: DMatrix<f64>,
    pub input_y: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub hidden: usize,
    pub output: usize,
    /// Cosine annealing from `lr_max` to `lr_min` over the epochs.
    pub lr_max: f64,
    pub lr_min: f64,
    pub max_halvings: usize,
    /// Loss above which training aborts.
    pub divergence: f64,
    pub loss: LossConfig,
    pub fmap: FmapConfig,
    pub weights: WeightScheme,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            hidden: 256,
            output: 256,
            lr_max: 1e-3,
            lr_min: 1e-4,
            max_halvings: 10,
            divergence: 1e6,
            loss: LossConfig::default(),
            fmap: FmapConfig::default(),
            weights: WeightScheme::Uniform,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub refiner: FeatureRefiner,
    /// Mean training loss before the first epoch and after every epoch.
    pub trace: Vec<f64>,
}

fn normalize_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    super::normalize_rows(m)
}

struct Objective {
    contexts: Vec<LossContext>,
    inputs: Vec<(DMatrix<f64>, DMatrix<f64>)>,
}

impl Objective {
    fn program(ctx: &LossContext, x: &DMatrix<f64>, y: &DMatrix<f64>, params: &[DMatrix<f64>], grad: bool) -> Result<(f64, Vec<DMatrix<f64>>), AlignError> {
        let mut t = Tape::new();
        let vars: Vec<Var> = params
            .iter()
            .map(|p| if grad { t.leaf(p.clone()) } else { t.constant(p.clone()) })
            .collect();
        let (ix, iy) = (t.constant(x.clone()), t.constant(y.clone()));
        let fx = FeatureRefiner::record(&mut t, ix, &vars);
        let fy = FeatureRefiner::record(&mut t, iy, &vars);
        let v = ctx.record(&mut t, fx, fy, None);
        if !grad {
            if let Some(e) = t.error() {
                return Err(e.clone().into());
            }
            return Ok((t.scalar(v.total), Vec::new()));
        }
        let g = t.backward(v.total)?;
        Ok((t.scalar(v.total), vars.iter().map(|&p| g.wrt(p)).collect()))
    }

    /// Mean loss over pairs, with its gradient when `grad` is set.
    fn eval(&self, params: &[DMatrix<f64>], grad: bool) -> Result<(f64, Vec<DMatrix<f64>>), AlignError> {
        let per_pair: Vec<Result<(f64, Vec<DMatrix<f64>>), AlignError>> = self
            .contexts
            .par_iter()
            .zip(&self.inputs)
            .map(|(ctx, (x, y))| Self::program(ctx, x, y, params, grad))
            .collect();
        let n = self.contexts.len() as f64;
        let mut loss = 0.0;
        let mut total: Vec<DMatrix<f64>> = if grad {
            params.iter().map(|p| DMatrix::zeros(p.nrows(), p.ncols())).collect()
        } else {
            Vec::new()
        };
        for r in per_pair {
            let (l, g) = r?;
            loss += l / n;
            for (acc, gi) in total.iter_mut().zip(g) {
                *acc += gi / n;
            }
        }
        Ok((loss, total))
    }
}

/// Trains a refiner on unlabeled pairs by minimizing the mean total loss
/// with Adam steps under a cosine-annealed learning rate; a step that raises
/// the loss is halved until it does not (or skipped). Deterministic for a
/// fixed seed and pair order.
pub fn train_refiner(pairs: &[TrainingPair], config: &TrainConfig, seed: u64) -> Result<TrainReport, RefineError> {
    if pairs.is_empty() {
        return Err(RefineError::InvalidConfig("no training pairs".into()));
    }
    let input_dim = pairs[0].input_x.ncols();
    if pairs.iter().any(|p| p.input_x.ncols() != input_dim || p.input_y.ncols() != input_dim) {
        return Err(AlignError::DimensionMismatch("training descriptors differ in dimension".into()).into());
    }
    let contexts = pairs
        .iter()
        .map(|p| LossContext::new(&p.basis_x, &p.basis_y, &config.fmap, &config.loss, config.weights, config.output))
        .collect::<Result<Vec<_>, _>>()?;
    let objective = Objective {
        contexts,
        inputs: pairs
            .iter()
            .map(|p| (normalize_rows(&p.input_x), normalize_rows(&p.input_y)))
            .collect(),
    };
    let mut refiner = FeatureRefiner::new(&[input_dim, config.hidden, config.output], seed)?;
    let mut params = refiner.params();
    let (mut loss, _) = objective.eval(&params, false)?;
    let mut trace = vec![loss];
    let (beta1, beta2, eps) = (0.9, 0.999, 1e-8);
    let mut m: Vec<DMatrix<f64>> = params.iter().map(|p| DMatrix::zeros(p.nrows(), p.ncols())).collect();
    let mut v = m.clone();
    for epoch in 0..config.epochs {
        let (_, grads) = objective.eval(&params, true)?;
        for ((mi, vi), g) in m.iter_mut().zip(v.iter_mut()).zip(&grads) {
            *mi = &*mi * beta1 + g * (1.0 - beta1);
            *vi = &*vi * beta2 + g.component_mul(g) * (1.0 - beta2);
        }
        let progress = epoch as f64 / config.epochs.max(1) as f64;
        let lr = config.lr_min + 0.5 * (config.lr_max - config.lr_min) * (1.0 + (std::f64::consts::PI * progress).cos());
        let (c1, c2) = (1.0 - beta1.powi(epoch as i32 + 1), 1.0 - beta2.powi(epoch as i32 + 1));
        let direction: Vec<DMatrix<f64>> = m
            .iter()
            .zip(&v)
            .map(|(mi, vi)| mi.zip_map(vi, |a, b| (a / c1) / ((b / c2).sqrt() + eps)))
            .collect();
        let mut scale = lr;
        for _ in 0..=config.max_halvings {
            let trial: Vec<DMatrix<f64>> = params.iter().zip(&direction).map(|(p, d)| p - d * scale).collect();
            let (l, _) = objective.eval(&trial, false)?;
            if l > config.divergence || !l.is_finite() {
                return Err(RefineError::Diverged { epoch, loss: l });
            }
            if l <= loss {
                params = trial;
                loss = l;
                break;
            }
            scale *= 0.5;
        }
        log::debug!("epoch {epoch}: loss {loss:.6e} (lr {lr:.2e})");
        trace.push(loss);
    }
    refiner = refiner.with_params(&params);
    Ok(TrainReport { refiner, trace })
}
