use super::sparse::SparseMatrix;
use crate::geom;
use crate::mesh::{TriMesh, DEGENERATE_AREA};

/// Cotangent Laplacian in the positive semi-definite convention:
/// `L_ij = -w_ij`, `L_ii = sum_j w_ij`, `w_ij = (cot a + cot b) / 2`.
/// Boundary edges get a single cotangent term; slivers are skipped; negative
/// weights are kept.
pub fn cotan_laplacian(mesh: &TriMesh) -> SparseMatrix {
    let n = mesh.num_vertices();
    let v = mesh.vertices();
    let mut entries = Vec::with_capacity(mesh.num_faces() * 9);
    for f in mesh.faces() {
        let p = f.map(|i| v[i]);
        if 0.5 * geom::norm(geom::tri_cross(p[0], p[1], p[2])) < DEGENERATE_AREA {
            continue;
        }
        for k in 0..3 {
            let (i, j, o) = (f[(k + 1) % 3], f[(k + 2) % 3], k);
            let a = geom::sub(p[(k + 1) % 3], p[o]);
            let b = geom::sub(p[(k + 2) % 3], p[o]);
            let cot = geom::dot(a, b) / geom::norm(geom::cross(a, b));
            let w = 0.5 * cot;
            entries.push((i, j, -w));
            entries.push((j, i, -w));
            entries.push((i, i, w));
            entries.push((j, j, w));
        }
    }
    SparseMatrix::from_triplets(n, n, entries)
}

/// Lumped (barycentric) mass: one third of the incident triangle areas.
pub fn lumped_mass(mesh: &TriMesh) -> Vec<f64> {
    let mut m = vec![0.0; mesh.num_vertices()];
    for (fi, f) in mesh.faces().iter().enumerate() {
        let a = mesh.face_area(fi);
        if a < DEGENERATE_AREA {
            continue;
        }
        for &i in f {
            m[i] += a / 3.0;
        }
    }
    m
}
