use super::sparse::SparseMatrix;
use crate::geom::{self, Vec3};
use crate::mesh::{vertex_normals, TriMesh};

/// Per-vertex tangent basis `[e1, e2, n]`.
pub type Frame = [Vec3; 3];

pub struct GradientOperators {
    pub grad_x: SparseMatrix,
    pub grad_y: SparseMatrix,
    pub frames: Vec<Frame>,
    /// Vertices whose one-ring cannot support a gradient fit (their rows are zero).
    pub degenerate: Vec<bool>,
}

/// Tangent frame whose first axis is the projection of global x onto the tangent
/// plane, or of global y when x is nearly normal.
pub fn tangent_frame(n: Vec3) -> Frame {
    let project = |a: Vec3| geom::sub(a, geom::scale(n, geom::dot(a, n)));
    let px = project([1.0, 0.0, 0.0]);
    let e1 = if geom::norm(px) > 0.1 {
        geom::normalize(px).unwrap()
    } else {
        geom::normalize(project([0.0, 1.0, 0.0])).unwrap()
    };
    [e1, geom::cross(n, e1), n]
}

/// Least-squares fit of a linear function over each one-ring, expressed in the
/// vertex tangent frame: `grad f(i) = sum_j c_ij (f_j - f_i)`.
pub fn gradient_operators(mesh: &TriMesh) -> GradientOperators {
    let n = mesh.num_vertices();
    let normals = vertex_normals(mesh);
    let nbrs = mesh.vertex_neighbors();
    let v = mesh.vertices();
    let mut ex = Vec::new();
    let mut ey = Vec::new();
    let mut frames = Vec::with_capacity(n);
    let mut degenerate = vec![false; n];
    let mut no_normal = vec![false; n];
    for &i in &normals.zero {
        no_normal[i] = true;
    }
    for i in 0..n {
        let normal = if no_normal[i] {
            [0.0, 0.0, 1.0]
        } else {
            normals.normals[i]
        };
        let frame = tangent_frame(normal);
        frames.push(frame);
        let ring = &nbrs[i];
        if ring.len() < 2 || no_normal[i] {
            degenerate[i] = true;
            continue;
        }
        let d: Vec<[f64; 2]> = ring
            .iter()
            .map(|&j| {
                let e = geom::sub(v[j], v[i]);
                [geom::dot(e, frame[0]), geom::dot(e, frame[1])]
            })
            .collect();
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for p in &d {
            a += p[0] * p[0];
            b += p[0] * p[1];
            c += p[1] * p[1];
        }
        let det = a * c - b * b;
        if det <= 1e-12 * (a + c) * (a + c) {
            degenerate[i] = true;
            continue;
        }
        let (mut sx, mut sy) = (0.0, 0.0);
        for (&j, p) in ring.iter().zip(&d) {
            // (DᵀD)^-1 Dᵀ, column for neighbor j
            let gx = (c * p[0] - b * p[1]) / det;
            let gy = (a * p[1] - b * p[0]) / det;
            ex.push((i, j, gx));
            ey.push((i, j, gy));
            sx += gx;
            sy += gy;
        }
        ex.push((i, i, -sx));
        ey.push((i, i, -sy));
    }
    let flagged = degenerate.iter().filter(|&&d| d).count();
    if flagged > 0 {
        log::warn!("{flagged} vertices have no usable one-ring; their gradients are zero");
    }
    GradientOperators {
        grad_x: SparseMatrix::from_triplets(n, n, ex),
        grad_y: SparseMatrix::from_triplets(n, n, ey),
        frames,
        degenerate,
    }
}
