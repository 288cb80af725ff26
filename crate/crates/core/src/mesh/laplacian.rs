use super::TriMesh;
use crate::sparse::SparseOperator;

/// Cotangent stiffness `W` (positive semidefinite, zero row sums) and the
/// barycentric lumped mass `M`.
///
/// Off-diagonal entries are `-(cot α + cot β) / 2` summed over every face
/// incident to the edge, so non-manifold edges simply accumulate.
pub fn cotangent_laplacian(mesh: &TriMesh) -> (SparseOperator, SparseOperator) {
    let n = mesh.num_vertices();
    let v = mesh.vertices();
    let mut trip = Vec::with_capacity(mesh.num_faces() * 12);
    let mut diag = vec![0.0; n];
    for f in mesh.faces() {
        for c in 0..3 {
            let (i, j, k) = (f[c], f[(c + 1) % 3], f[(c + 2) % 3]);
            let (a, b) = (v[i] - v[k], v[j] - v[k]);
            let cot = a.dot(&b) / a.cross(&b).norm();
            let w = 0.5 * cot;
            trip.push((i, j, -w));
            trip.push((j, i, -w));
            diag[i] += w;
            diag[j] += w;
        }
    }
    trip.extend(diag.iter().enumerate().map(|(i, &d)| (i, i, d)));
    let stiffness = SparseOperator::from_triplets(n, trip);
    let mass = SparseOperator::from_diagonal(&mesh.vertex_areas());
    (stiffness, mass)
}
