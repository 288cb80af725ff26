use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;

use super::{MeshError, TriMesh};

/// Undirected edge graph with Euclidean edge lengths.
#[derive(Debug, Clone)]
pub struct EdgeGraph {
    adjacency: Vec<Vec<(usize, f64)>>,
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl EdgeGraph {
    pub fn new(mesh: &TriMesh) -> Self {
        let v = mesh.vertices();
        let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); v.len()];
        for f in mesh.faces() {
            for c in 0..3 {
                let (a, b) = (f[c], f[(c + 1) % 3]);
                let len = (v[a] - v[b]).norm();
                adjacency[a].push((b, len));
                adjacency[b].push((a, len));
            }
        }
        for nbrs in &mut adjacency {
            nbrs.sort_by(|x, y| x.0.cmp(&y.0));
            nbrs.dedup_by_key(|e| e.0);
        }
        Self { adjacency }
    }

    pub fn num_vertices(&self) -> usize {
        self.adjacency.len()
    }

    /// Single-source shortest paths.
    pub fn distances_from(&self, source: usize) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.adjacency.len()];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Entry(0.0, source));
        while let Some(Entry(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &(w, len) in &self.adjacency[u] {
                let nd = d + len;
                if nd < dist[w] {
                    dist[w] = nd;
                    heap.push(Entry(nd, w));
                }
            }
        }
        assert!(
            dist.iter().all(|d| d.is_finite()),
            "unreachable vertex in a mesh validated as connected"
        );
        dist
    }
}

/// Edge-graph geodesic distances, one row per source.
pub fn geodesic_distances(mesh: &TriMesh, sources: &[usize]) -> Result<DMatrix<f64>, MeshError> {
    let n = mesh.num_vertices();
    if let Some(&index) = sources.iter().find(|&&s| s >= n) {
        return Err(MeshError::InvalidSource { index, count: n });
    }
    let graph = EdgeGraph::new(mesh);
    let mut out = DMatrix::zeros(sources.len(), n);
    for (r, &s) in sources.iter().enumerate() {
        for (c, d) in graph.distances_from(s).into_iter().enumerate() {
            out[(r, c)] = d;
        }
    }
    Ok(out)
}
