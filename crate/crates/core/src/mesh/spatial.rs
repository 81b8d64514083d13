//! Nearest-neighbor queries over 3D point sets.

use kiddo::{ImmutableKdTree, SquaredEuclidean};

use super::TriMesh;
use crate::geom::{self, Vec3};

pub struct PointIndex {
    tree: ImmutableKdTree<f64, 3>,
}

impl PointIndex {
    pub fn new(points: &[Vec3]) -> Self {
        PointIndex {
            tree: ImmutableKdTree::new_from_slice(points),
        }
    }

    /// Index of the closest stored point and its squared distance.
    pub fn nearest(&self, q: &Vec3) -> (usize, f64) {
        let nn = self.tree.nearest_one::<SquaredEuclidean>(q);
        (nn.item as usize, nn.distance)
    }
}

/// For each source vertex, the index of the closest target vertex.
pub fn nearest_correspondence(source: &TriMesh, target: &TriMesh) -> Vec<usize> {
    let index = PointIndex::new(target.vertices());
    source
        .vertices()
        .iter()
        .map(|v| index.nearest(v).0)
        .collect()
}

/// A point on a mesh surface: a face and barycentric weights of its corners.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfacePoint {
    pub face: usize,
    pub weights: [f64; 3],
}

impl SurfacePoint {
    /// The same surface point on per-vertex data laid out like the mesh.
    pub fn interpolate(&self, faces: &[[usize; 3]], values: &[Vec3]) -> Vec3 {
        let f = faces[self.face];
        let mut out = [0.0; 3];
        for (c, &w) in f.iter().zip(&self.weights) {
            out = geom::add(out, geom::scale(values[*c], w));
        }
        out
    }
}

/// Closest point of triangle `(a, b, c)` to `p` as barycentric weights.
pub fn closest_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> [f64; 3] {
    let ab = geom::sub(b, a);
    let ac = geom::sub(c, a);
    let ap = geom::sub(p, a);
    let d1 = geom::dot(ab, ap);
    let d2 = geom::dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return [1.0, 0.0, 0.0];
    }
    let bp = geom::sub(p, b);
    let d3 = geom::dot(ab, bp);
    let d4 = geom::dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return [0.0, 1.0, 0.0];
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return [1.0 - v, v, 0.0];
    }
    let cp = geom::sub(p, c);
    let d5 = geom::dot(ab, cp);
    let d6 = geom::dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return [0.0, 0.0, 1.0];
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return [1.0 - w, 0.0, w];
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return [0.0, 1.0 - w, w];
    }
    let denom = va + vb + vc;
    if denom.abs() < f64::MIN_POSITIVE {
        return [1.0, 0.0, 0.0];
    }
    let v = vb / denom;
    let w = vc / denom;
    [1.0 - v - w, v, w]
}

/// Closest point on `mesh` for every query. The search is restricted to the faces
/// within two rings of the nearest vertex, which is exact unless the surface folds
/// back closer than that neighbourhood.
pub fn closest_surface_points(mesh: &TriMesh, queries: &[Vec3]) -> Vec<SurfacePoint> {
    let index = PointIndex::new(mesh.vertices());
    let neighbors = mesh.vertex_neighbors();
    let mut incident = vec![Vec::new(); mesh.num_vertices()];
    for (fi, f) in mesh.faces().iter().enumerate() {
        for &v in f {
            incident[v].push(fi);
        }
    }
    let verts = mesh.vertices();
    let faces = mesh.faces();
    let mut candidates = Vec::new();
    queries
        .iter()
        .map(|q| {
            let (v0, _) = index.nearest(q);
            candidates.clear();
            candidates.extend_from_slice(&incident[v0]);
            for &n in &neighbors[v0] {
                candidates.extend_from_slice(&incident[n]);
            }
            candidates.sort_unstable();
            candidates.dedup();
            let mut best = SurfacePoint {
                face: usize::MAX,
                weights: [0.0; 3],
            };
            let mut best_d = f64::INFINITY;
            for &fi in &candidates {
                let [a, b, c] = faces[fi].map(|i| verts[i]);
                let w = closest_on_triangle(*q, a, b, c);
                let sp = SurfacePoint { face: fi, weights: w };
                let d = geom::dist2(*q, sp.interpolate(faces, verts));
                if d < best_d {
                    best_d = d;
                    best = sp;
                }
            }
            if best.face == usize::MAX {
                // Isolated vertex: fall back to a corner of any face using it.
                best = SurfacePoint {
                    face: 0,
                    weights: [1.0, 0.0, 0.0],
                };
            }
            best
        })
        .collect()
}
