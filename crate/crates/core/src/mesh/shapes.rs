//! Procedural meshes used by tests, benchmarks and the synthetic
//! near-isometric pairs.

use std::collections::HashMap;

use nalgebra::Vector3;

use super::TriMesh;

pub fn unit_square() -> TriMesh {
    let v = vec![
        Vector3::new(0.0, 0.0, 0.0),
        Vector3::new(1.0, 0.0, 0.0),
        Vector3::new(1.0, 1.0, 0.0),
        Vector3::new(0.0, 1.0, 0.0),
    ];
    TriMesh::new(v, vec![[0, 1, 2], [0, 2, 3]]).expect("valid square")
}

/// Regular tetrahedron with unit edges.
pub fn tetrahedron() -> TriMesh {
    let h = 3f64.sqrt() / 2.0;
    let v = vec![
        Vector3::new(0.0, 0.0, 0.0),
        Vector3::new(1.0, 0.0, 0.0),
        Vector3::new(0.5, h, 0.0),
        Vector3::new(0.5, h / 3.0, (2.0f64 / 3.0).sqrt()),
    ];
    TriMesh::new(v, vec![[0, 2, 1], [0, 1, 3], [1, 2, 3], [2, 0, 3]]).expect("valid tetrahedron")
}

/// Planar `nx × ny` cell grid over `[0, width] × [0, height]`, vertex `j*(nx+1)+i`.
pub fn grid(nx: usize, ny: usize, width: f64, height: f64) -> TriMesh {
    let mut v = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            v.push(Vector3::new(width * i as f64 / nx as f64, height * j as f64 / ny as f64, 0.0));
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut f = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            f.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            f.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    TriMesh::new(v, f).expect("valid grid")
}

/// Subdivided icosahedron projected onto a sphere of the given radius.
pub fn icosphere(subdivisions: usize, radius: f64) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vector3<f64>> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vector3::new(p[0], p[1], p[2]).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, v: &mut Vec<Vector3<f64>>| -> usize {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                v.push(((v[a] + v[b]) * 0.5).normalize());
                v.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let a = midpoint(f[0], f[1], &mut v);
            let b = midpoint(f[1], f[2], &mut v);
            let c = midpoint(f[2], f[0], &mut v);
            next.extend([[f[0], a, c], [f[1], b, a], [f[2], c, b], [a, b, c]]);
        }
        faces = next;
    }
    let v = v.into_iter().map(|p| p * radius).collect();
    TriMesh::new(v, faces).expect("valid icosphere")
}

/// Asymmetric closed surface: an anisotropically stretched icosphere carrying
/// a few Gaussian bumps of different sizes.
pub fn bumpy_blob(subdivisions: usize) -> TriMesh {
    let bumps = [
        (Vector3::new(1.0, 0.2, 0.1).normalize(), 0.45, 0.35),
        (Vector3::new(-0.3, 1.0, 0.4).normalize(), 0.30, 0.30),
        (Vector3::new(-0.8, -0.5, 0.6).normalize(), 0.20, 0.25),
        (Vector3::new(0.1, -0.3, -1.0).normalize(), 0.15, 0.40),
    ];
    let scale = Vector3::new(1.6, 1.0, 0.8);
    icosphere(subdivisions, 1.0)
        .map_vertices(|p| {
            let r: f64 = 1.0
                + bumps
                    .iter()
                    .map(|(dir, height, width)| height * (-(p - dir).norm_squared() / (width * width)).exp())
                    .sum::<f64>();
            (p * r).component_mul(&scale)
        })
        .expect("valid blob")
}

/// Bends a mesh around the y axis: the x axis is wrapped onto an arc of
/// curvature `curvature`. Lengths along the arc are preserved exactly on the
/// `z = 0` plane, so thin shapes deform near-isometrically.
pub fn bend(mesh: &TriMesh, curvature: f64) -> TriMesh {
    if curvature == 0.0 {
        return mesh.clone();
    }
    let r = 1.0 / curvature;
    mesh.map_vertices(|p| {
        let angle = p.x / r;
        Vector3::new((r - p.z) * angle.sin(), p.y, r - (r - p.z) * angle.cos())
    })
    .expect("bending keeps faces non-degenerate")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn icosphere_counts() {
        let m = icosphere(3, 1.0);
        assert_eq!(m.num_vertices(), 642);
        assert_eq!(m.num_faces(), 1280);
        assert!((m.total_area() - 4.0 * PI).abs() < 0.1);
    }

    #[test]
    fn tetrahedron_area() {
        assert!((tetrahedron().total_area() - 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bending_preserves_centerline_lengths() {
        let g = grid(10, 1, 2.0, 0.2);
        let b = bend(&g, 0.8);
        // bottom row lies at z = 0 and is mapped onto an arc: edges become chords
        let r = 1.0 / 0.8;
        for i in 0..10 {
            let l0 = (g.vertices()[i + 1] - g.vertices()[i]).norm();
            let l1 = (b.vertices()[i + 1] - b.vertices()[i]).norm();
            assert!((2.0 * r * (l0 / (2.0 * r)).sin() - l1).abs() < 1e-12);
        }
    }
}
