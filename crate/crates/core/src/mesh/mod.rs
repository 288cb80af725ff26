//! Triangle meshes: validated storage, file I/O, discrete operators and
//! edge-graph geodesics.

mod geodesic;
mod io;
mod laplacian;
pub mod shapes;

pub use geodesic::{geodesic_distances, EdgeGraph};
pub use io::{load_mesh, read_mesh, write_off, write_ply, MeshFormat};
pub use laplacian::cotangent_laplacian;

use nalgebra::Vector3;
use thiserror::Error;

/// Relative area below which a face counts as degenerate.
pub const DEGENERATE_AREA_TOL: f64 = 1e-12;

/// Where in a source file an offending record lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Offset(u64),
    Unknown,
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Location::Line(l) => write!(f, "line {l}"),
            Location::Offset(o) => write!(f, "byte offset {o}"),
            Location::Unknown => write!(f, "unknown location"),
        }
    }
}

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at {at}: {message}")]
    Parse { at: Location, message: String },
    #[error("unsupported mesh format: {0}")]
    UnsupportedFormat(String),
    #[error("face {face} at {at} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        count: usize,
        at: Location,
    },
    #[error("face {face} at {at} repeats a vertex")]
    RepeatedVertex { face: usize, at: Location },
    #[error("face {face} at {at} is degenerate (area {area:e})")]
    DegenerateFace { face: usize, area: f64, at: Location },
    #[error("mesh has {components} connected components, expected 1")]
    Disconnected { components: usize },
    #[error("mesh is empty")]
    Empty,
    #[error("source index {index} out of range for {count} vertices")]
    InvalidSource { index: usize, count: usize },
}

/// Triangle mesh satisfying the validity invariants checked by [`TriMesh::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
    face_areas: Vec<f64>,
    total_area: f64,
}

impl TriMesh {
    /// Builds a mesh, rejecting out-of-range indices, repeated vertices,
    /// degenerate faces and disconnected edge graphs.
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        Self::with_locations(vertices, faces, &[])
    }

    pub(crate) fn with_locations(
        vertices: Vec<Vector3<f64>>,
        faces: Vec<[usize; 3]>,
        locations: &[Location],
    ) -> Result<Self, MeshError> {
        let at = |f: usize| locations.get(f).copied().unwrap_or(Location::Unknown);
        if vertices.is_empty() || faces.is_empty() {
            return Err(MeshError::Empty);
        }
        let n = vertices.len();
        for (fi, face) in faces.iter().enumerate() {
            if let Some(&index) = face.iter().find(|&&v| v >= n) {
                return Err(MeshError::IndexOutOfRange {
                    face: fi,
                    index,
                    count: n,
                    at: at(fi),
                });
            }
            if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
                return Err(MeshError::RepeatedVertex { face: fi, at: at(fi) });
            }
        }
        let face_areas: Vec<f64> = faces
            .iter()
            .map(|f| triangle_area(&vertices[f[0]], &vertices[f[1]], &vertices[f[2]]))
            .collect();
        let total_area: f64 = face_areas.iter().sum();
        for (fi, &area) in face_areas.iter().enumerate() {
            if !(area >= DEGENERATE_AREA_TOL * total_area) || total_area <= 0.0 {
                return Err(MeshError::DegenerateFace {
                    face: fi,
                    area,
                    at: at(fi),
                });
            }
        }
        let components = count_components(n, &faces);
        if components != 1 {
            return Err(MeshError::Disconnected { components });
        }
        Ok(Self {
            vertices,
            faces,
            face_areas,
            total_area,
        })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn face_areas(&self) -> &[f64] {
        &self.face_areas
    }

    pub fn total_area(&self) -> f64 {
        self.total_area
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    /// Per-vertex area: one third of the incident face areas.
    pub fn vertex_areas(&self) -> Vec<f64> {
        let mut areas = vec![0.0; self.vertices.len()];
        for (face, &a) in self.faces.iter().zip(&self.face_areas) {
            for &v in face {
                areas[v] += a / 3.0;
            }
        }
        areas
    }

    /// Returns a copy with every vertex mapped through `f`. Connectivity is kept.
    pub fn map_vertices(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> Result<Self, MeshError> {
        Self::new(self.vertices.iter().map(f).collect(), self.faces.clone())
    }

    /// Uniformly rescaled copy with total area one.
    pub fn with_unit_area(&self) -> Result<Self, MeshError> {
        let s = self.total_area().sqrt();
        self.map_vertices(|p| p / s)
    }

    /// Relabels vertices so that new vertex `j` is old vertex `order[j]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self, MeshError> {
        assert_eq!(order.len(), self.vertices.len(), "permutation length");
        let mut inverse = vec![usize::MAX; order.len()];
        for (new, &old) in order.iter().enumerate() {
            inverse[old] = new;
        }
        let vertices = order.iter().map(|&o| self.vertices[o]).collect();
        let faces = self
            .faces
            .iter()
            .map(|f| [inverse[f[0]], inverse[f[1]], inverse[f[2]]])
            .collect();
        Self::new(vertices, faces)
    }
}

pub(crate) fn triangle_area(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

fn count_components(n: usize, faces: &[[usize; 3]]) -> usize {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for f in faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2])] {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    (0..n).filter(|&v| find(&mut parent, v) == v).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> TriMesh {
        let v = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ];
        TriMesh::new(v, vec![[0, 1, 2], [0, 2, 3]]).unwrap()
    }

    #[test]
    fn unit_square_area() {
        let m = square();
        assert!((m.total_area() - 1.0).abs() < 1e-15);
        let va: f64 = m.vertex_areas().iter().sum();
        assert!((va - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_out_of_range_and_repeats() {
        let v = vec![Vector3::zeros(), Vector3::x(), Vector3::y()];
        assert!(matches!(
            TriMesh::new(v.clone(), vec![[0, 1, 9]]),
            Err(MeshError::IndexOutOfRange { index: 9, .. })
        ));
        assert!(matches!(
            TriMesh::new(v, vec![[0, 1, 1]]),
            Err(MeshError::RepeatedVertex { face: 0, .. })
        ));
    }

    #[test]
    fn rejects_degenerate_face() {
        let v = vec![
            Vector3::zeros(),
            Vector3::x(),
            Vector3::y(),
            Vector3::new(2.0, 0.0, 0.0),
        ];
        // face 1 is collinear
        let err = TriMesh::new(v, vec![[0, 1, 2], [0, 1, 3]]).unwrap_err();
        assert!(matches!(err, MeshError::DegenerateFace { face: 1, .. }));
    }

    #[test]
    fn rejects_disconnected() {
        let mut v = vec![Vector3::zeros(), Vector3::x(), Vector3::y()];
        v.extend(v.clone().iter().map(|p| p + Vector3::new(5.0, 0.0, 0.0)));
        let err = TriMesh::new(v, vec![[0, 1, 2], [3, 4, 5]]).unwrap_err();
        assert!(matches!(err, MeshError::Disconnected { components: 2 }));
    }

    #[test]
    fn permutation_keeps_geometry() {
        let m = square();
        let p = m.permuted(&[2, 0, 3, 1]).unwrap();
        assert_eq!(p.vertices()[0], m.vertices()[2]);
        assert!((p.total_area() - 1.0).abs() < 1e-15);
    }
}
