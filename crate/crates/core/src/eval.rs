//! Correspondence quality: normalized mean geodesic error, label transfer and
//! segmentation mIoU.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::mesh::{geodesic_distances, MeshError, TriMesh};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("index {index} out of range for a target with {count} vertices")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Point map from a source mesh into a target mesh with `n_target` vertices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Correspondence {
    map: Vec<usize>,
    n_target: usize,
}

impl Correspondence {
    pub fn new(map: Vec<usize>, n_target: usize) -> Result<Self, EvalError> {
        if let Some(&index) = map.iter().find(|&&i| i >= n_target) {
            return Err(EvalError::IndexOutOfRange { index, count: n_target });
        }
        Ok(Self { map, n_target })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            map: (0..n).collect(),
            n_target: n,
        }
    }

    pub fn map(&self) -> &[usize] {
        &self.map
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn n_target(&self) -> usize {
        self.n_target
    }

    /// Fraction of source vertices mapped exactly as in `other`.
    pub fn agreement(&self, other: &Correspondence) -> f64 {
        if self.map.is_empty() {
            return 1.0;
        }
        let same = self.map.iter().zip(&other.map).filter(|(a, b)| a == b).count();
        same as f64 / self.map.len() as f64
    }
}

/// Per-vertex class labels in `[0, classes)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelField {
    labels: Vec<usize>,
    classes: usize,
}

impl LabelField {
    pub fn new(labels: Vec<usize>, classes: usize) -> Result<Self, EvalError> {
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(EvalError::LabelOutOfRange { label, classes });
        }
        Ok(Self { labels, classes })
    }

    /// Class count taken as one past the largest label.
    pub fn from_labels(labels: Vec<usize>) -> Self {
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        Self { labels, classes }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Mean over source vertices of `d_geo(pred[i], gt[i])` on `mesh_y`, divided
/// by `sqrt(area(mesh_y))` and multiplied by 100. Geodesics are edge-graph
/// shortest paths.
pub fn mean_geodesic_error(pred: &Correspondence, gt: &Correspondence, mesh_y: &TriMesh) -> Result<f64, EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::SizeMismatch(format!(
            "{} predicted vs {} ground-truth matches",
            pred.len(),
            gt.len()
        )));
    }
    let n = mesh_y.num_vertices();
    for c in [pred, gt] {
        if let Some(&index) = c.map.iter().find(|&&i| i >= n) {
            return Err(EvalError::IndexOutOfRange { index, count: n });
        }
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    // one Dijkstra per distinct ground-truth target that is actually missed
    let sources: Vec<usize> = pred
        .map
        .iter()
        .zip(&gt.map)
        .filter(|(p, g)| p != g)
        .map(|(_, &g)| g)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut total = 0.0;
    if !sources.is_empty() {
        let dist = geodesic_distances(mesh_y, &sources)?;
        for (&p, &g) in pred.map.iter().zip(&gt.map) {
            if p != g {
                let row = sources.binary_search(&g).expect("source recorded");
                total += dist[(row, p)];
            }
        }
    }
    Ok(100.0 * total / (pred.len() as f64 * mesh_y.total_area().sqrt()))
}

/// Each vertex of the unlabeled mesh pulls the label of its match on the
/// labeled mesh: `out[i] = source[corr[i]]`.
pub fn transfer_labels(corr: &Correspondence, source_labels: &LabelField) -> Result<LabelField, EvalError> {
    if corr.n_target != source_labels.len() {
        return Err(EvalError::SizeMismatch(format!(
            "correspondence targets {} vertices, label field has {}",
            corr.n_target,
            source_labels.len()
        )));
    }
    Ok(LabelField {
        labels: corr.map.iter().map(|&j| source_labels.labels[j]).collect(),
        classes: source_labels.classes,
    })
}

/// Mean intersection-over-union over the classes present in `gt`, in percent.
pub fn segmentation_miou(pred: &LabelField, gt: &LabelField) -> Result<f64, EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::SizeMismatch(format!(
            "{} predicted vs {} ground-truth labels",
            pred.len(),
            gt.len()
        )));
    }
    let present: BTreeSet<usize> = gt.labels.iter().copied().collect();
    if present.is_empty() {
        return Ok(100.0);
    }
    let mut sum = 0.0;
    for &c in &present {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
            let (a, b) = (p == c, g == c);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        sum += inter as f64 / union as f64;
    }
    Ok(100.0 * sum / present.len() as f64)
}

/// Averages per-mesh class-mean IoUs over meshes.
pub fn mean_over_meshes(per_mesh: &[f64]) -> f64 {
    if per_mesh.is_empty() {
        return f64::NAN;
    }
    per_mesh.iter().sum::<f64>() / per_mesh.len() as f64
}
