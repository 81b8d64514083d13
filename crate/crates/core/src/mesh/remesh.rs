//! Re-triangulation operators: edge-collapse decimation, longest-edge refinement and
//! the split-density variant built from both.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{RemeshVariant, TriMesh};
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

/// Density change applied on each side of the splitting plane by [`RemeshVariant::Vd`]:
/// one half is refined to this many times its vertex count, the other decimated to
/// the reciprocal.
pub const VD_DENSITY_FACTOR: f64 = 2.5;

const MIN_VERTICES: usize = 10;

pub fn remesh(mesh: &TriMesh, variant: RemeshVariant, seed: u64) -> Result<TriMesh> {
    let n = mesh.num_vertices();
    match variant {
        RemeshVariant::Original => Ok(mesh.clone()),
        RemeshVariant::Ds2 => decimate_to(mesh, (n + 1) / 2, seed),
        RemeshVariant::Us2 => refine_to(mesh, 2 * n, seed),
        RemeshVariant::Vd => variable_density(mesh, seed),
    }
}

/// Shortest-edge-first collapse to `target` vertices, placing the merged vertex at the
/// edge midpoint.
pub fn decimate_to(mesh: &TriMesh, target: usize, seed: u64) -> Result<TriMesh> {
    if target < MIN_VERTICES {
        return Err(Error::validation(format!(
            "refusing to decimate below {MIN_VERTICES} vertices (target {target})"
        )));
    }
    let mut em = EditMesh::new(mesh);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let removed = em.decimate(mesh.num_vertices().saturating_sub(target), &|_| true, &mut rng);
    let reached = mesh.num_vertices() - removed;
    if reached as f64 > target as f64 * 1.05 + 1.0 {
        return Err(Error::validation(format!(
            "decimation stalled at {reached} vertices (target {target})"
        )));
    }
    em.into_mesh(mesh.name())
}

/// Longest-edge-first midpoint splits until the mesh has `target` vertices.
pub fn refine_to(mesh: &TriMesh, target: usize, seed: u64) -> Result<TriMesh> {
    let mut em = EditMesh::new(mesh);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    em.refine(target.saturating_sub(mesh.num_vertices()), &|_| true, &mut rng);
    em.into_mesh(mesh.name())
}

/// Splits the mesh by the plane through the vertex centroid normal to the longest
/// bounding-box axis; refines the positive half and decimates the negative half.
fn variable_density(mesh: &TriMesh, seed: u64) -> Result<TriMesh> {
    let (lo, hi) = mesh.bounding_box();
    let ext = geom::sub(hi, lo);
    let axis = (0..3)
        .max_by(|&a, &b| ext[a].partial_cmp(&ext[b]).unwrap_or(Ordering::Equal))
        .unwrap_or(0);
    let c = geom::centroid(mesh.vertices())[axis];
    let plus = mesh.vertices().iter().filter(|v| v[axis] > c).count();
    let minus = mesh.num_vertices() - plus;

    let mut em = EditMesh::new(mesh);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let to_remove = minus - (minus as f64 / VD_DENSITY_FACTOR).round() as usize;
    em.decimate(to_remove, &|p: Vec3| p[axis] < c, &mut rng);
    let to_add = (plus as f64 * (VD_DENSITY_FACTOR - 1.0)).round() as usize;
    em.refine(to_add, &|p: Vec3| p[axis] > c, &mut rng);
    em.into_mesh(mesh.name())
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    cost: f64,
    a: usize,
    b: usize,
    stamp_a: u32,
    stamp_b: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; callers negate costs for min-first order.
        self.cost
            .partial_cmp(&other.cost)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct EditMesh {
    pos: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    vert_faces: Vec<Vec<usize>>,
    vert_alive: Vec<bool>,
    stamp: Vec<u32>,
}

impl EditMesh {
    fn new(mesh: &TriMesh) -> Self {
        let mut vert_faces = vec![Vec::new(); mesh.num_vertices()];
        for (fi, f) in mesh.faces().iter().enumerate() {
            for &v in f {
                vert_faces[v].push(fi);
            }
        }
        EditMesh {
            pos: mesh.vertices().to_vec(),
            faces: mesh.faces().to_vec(),
            face_alive: vec![true; mesh.num_faces()],
            vert_faces,
            vert_alive: vec![true; mesh.num_vertices()],
            stamp: vec![0; mesh.num_vertices()],
        }
    }

    fn neighbors(&self, v: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.vert_faces[v]
            .iter()
            .flat_map(|&f| self.faces[f])
            .filter(|&u| u != v)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn shared_faces(&self, a: usize, b: usize) -> Vec<usize> {
        self.vert_faces[a]
            .iter()
            .copied()
            .filter(|&f| self.faces[f].contains(&b))
            .collect()
    }

    fn is_boundary_vertex(&self, v: usize) -> bool {
        self.neighbors(v)
            .into_iter()
            .any(|u| self.shared_faces(v, u).len() == 1)
    }

    fn push_edges(
        &self,
        heap: &mut BinaryHeap<Candidate>,
        v: usize,
        sign: f64,
        region: &dyn Fn(Vec3) -> bool,
        endpoints_in_region: bool,
        rng: &mut ChaCha8Rng,
    ) {
        for u in self.neighbors(v) {
            let (a, b) = (v.min(u), v.max(u));
            let ok = if endpoints_in_region {
                region(self.pos[a]) && region(self.pos[b])
            } else {
                region(geom::midpoint(self.pos[a], self.pos[b]))
            };
            if !ok {
                continue;
            }
            let jitter = 1.0 + 0.2 * rng.gen::<f64>();
            heap.push(Candidate {
                cost: sign * geom::dist2(self.pos[a], self.pos[b]) * jitter,
                a,
                b,
                stamp_a: self.stamp[a],
                stamp_b: self.stamp[b],
            });
        }
    }

    fn is_current(&self, c: &Candidate) -> bool {
        self.vert_alive[c.a]
            && self.vert_alive[c.b]
            && self.stamp[c.a] == c.stamp_a
            && self.stamp[c.b] == c.stamp_b
    }

    /// Collapses up to `count` edges whose endpoints both satisfy `region`.
    fn decimate(
        &mut self,
        count: usize,
        region: &dyn Fn(Vec3) -> bool,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let mut heap = BinaryHeap::new();
        for v in 0..self.pos.len() {
            self.push_edges(&mut heap, v, -1.0, region, true, rng);
        }
        let mut removed = 0;
        while removed < count {
            let Some(c) = heap.pop() else { break };
            if !self.is_current(&c) {
                continue;
            }
            if self.try_collapse(c.a, c.b) {
                removed += 1;
                self.push_edges(&mut heap, c.a, -1.0, region, true, rng);
            }
        }
        removed
    }

    fn try_collapse(&mut self, a: usize, b: usize) -> bool {
        let shared = self.shared_faces(a, b);
        if shared.is_empty() || shared.len() > 2 {
            return false;
        }
        // Link condition: the only common neighbors are the apexes of the shared faces.
        let na = self.neighbors(a);
        let nb = self.neighbors(b);
        let common: Vec<usize> = na.iter().copied().filter(|u| nb.contains(u)).collect();
        let mut apexes: Vec<usize> = shared
            .iter()
            .flat_map(|&f| self.faces[f])
            .filter(|&u| u != a && u != b)
            .collect();
        apexes.sort_unstable();
        apexes.dedup();
        if common != apexes {
            return false;
        }
        if shared.len() == 2 && self.is_boundary_vertex(a) && self.is_boundary_vertex(b) {
            return false;
        }
        // Keep every apex at valence >= 3 after it loses an edge.
        if apexes.iter().any(|&u| self.neighbors(u).len() <= 3) {
            return false;
        }
        let p = geom::midpoint(self.pos[a], self.pos[b]);
        for &v in &[a, b] {
            for &f in &self.vert_faces[v] {
                if shared.contains(&f) {
                    continue;
                }
                let old = self.faces[f];
                let before = geom::tri_cross(self.pos[old[0]], self.pos[old[1]], self.pos[old[2]]);
                let moved: Vec<Vec3> = old
                    .iter()
                    .map(|&i| if i == a || i == b { p } else { self.pos[i] })
                    .collect();
                let after = geom::tri_cross(moved[0], moved[1], moved[2]);
                let (lb, la) = (geom::norm(before), geom::norm(after));
                if la < 1e-14 || geom::dot(before, after) < 0.2 * lb * la {
                    return false;
                }
            }
        }

        for &f in &shared {
            self.face_alive[f] = false;
            for &v in &self.faces[f] {
                self.vert_faces[v].retain(|&g| g != f);
            }
        }
        let moved_faces = std::mem::take(&mut self.vert_faces[b]);
        for f in moved_faces {
            for slot in self.faces[f].iter_mut() {
                if *slot == b {
                    *slot = a;
                }
            }
            self.vert_faces[a].push(f);
        }
        self.pos[a] = p;
        self.vert_alive[b] = false;
        self.stamp[a] += 1;
        true
    }

    /// Splits `count` edges whose midpoints satisfy `region`, longest first.
    fn refine(&mut self, count: usize, region: &dyn Fn(Vec3) -> bool, rng: &mut ChaCha8Rng) {
        let mut heap = BinaryHeap::new();
        for v in 0..self.pos.len() {
            self.push_edges(&mut heap, v, 1.0, region, false, rng);
        }
        let mut added = 0;
        while added < count {
            let Some(c) = heap.pop() else { break };
            if !self.is_current(&c) {
                continue;
            }
            let shared = self.shared_faces(c.a, c.b);
            if shared.is_empty() {
                continue;
            }
            let m = self.split(c.a, c.b, &shared);
            added += 1;
            for v in [c.a, c.b, m] {
                self.push_edges(&mut heap, v, 1.0, region, false, rng);
            }
        }
    }

    fn split(&mut self, a: usize, b: usize, shared: &[usize]) -> usize {
        let m = self.pos.len();
        self.pos.push(geom::midpoint(self.pos[a], self.pos[b]));
        self.vert_faces.push(Vec::new());
        self.vert_alive.push(true);
        self.stamp.push(0);
        for &f in shared {
            let tri = self.faces[f];
            // Rotate so the split edge is (x, y) in winding order.
            let k = (0..3)
                .find(|&k| {
                    let (x, y) = (tri[k], tri[(k + 1) % 3]);
                    (x == a && y == b) || (x == b && y == a)
                })
                .expect("shared face contains the edge");
            let (x, y, z) = (tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]);
            self.faces[f] = [x, m, z];
            let g = self.faces.len();
            self.faces.push([m, y, z]);
            self.face_alive.push(true);
            self.vert_faces[y].retain(|&h| h != f);
            self.vert_faces[y].push(g);
            self.vert_faces[z].push(g);
            self.vert_faces[m].push(f);
            self.vert_faces[m].push(g);
        }
        self.stamp[a] += 1;
        self.stamp[b] += 1;
        m
    }

    fn into_mesh(self, name: Option<&str>) -> Result<TriMesh> {
        let mut remap = vec![usize::MAX; self.pos.len()];
        let mut vertices = Vec::new();
        for (i, p) in self.pos.iter().enumerate() {
            if self.vert_alive[i] && !self.vert_faces[i].is_empty() {
                remap[i] = vertices.len();
                vertices.push(*p);
            }
        }
        let faces = self
            .faces
            .iter()
            .zip(&self.face_alive)
            .filter(|(_, &alive)| alive)
            .map(|(f, _)| [remap[f[0]], remap[f[1]], remap[f[2]]])
            .collect();
        let mesh = TriMesh::new(vertices, faces)?;
        Ok(match name {
            Some(n) => mesh.with_name(n),
            None => mesh,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::edge_list;
    use crate::mesh::fixtures::{grid, icosphere};

    /// Mean edge length on each side of the plane `x[axis] = c`.
    fn edge_lengths_by_side(m: &TriMesh, axis: usize, c: f64) -> (f64, f64) {
        let (mut sp, mut np, mut sm, mut nm) = (0.0, 0, 0.0, 0);
        for &[i, j] in edge_list(m).iter() {
            let (a, b) = (m.vertices()[i], m.vertices()[j]);
            let l = geom::norm(geom::sub(a, b));
            if geom::midpoint(a, b)[axis] > c {
                sp += l;
                np += 1;
            } else {
                sm += l;
                nm += 1;
            }
        }
        (sp / np as f64, sm / nm as f64)
    }

    fn assert_closed_manifold(m: &TriMesh) {
        assert_eq!(edge_list(m).len(), m.num_vertices() + m.num_faces() - 2);
        assert_eq!(m.connected_components(), 1);
    }

    #[test]
    fn original_is_identical() {
        let m = icosphere(2);
        assert_eq!(remesh(&m, RemeshVariant::Original, 9).unwrap(), m);
    }

    #[test]
    fn ds2_halves_vertex_count() {
        let m = icosphere(4); // 2562 vertices
        let d = remesh(&m, RemeshVariant::Ds2, 1).unwrap();
        let r = d.num_vertices() as f64 / m.num_vertices() as f64;
        assert!((0.45..=0.55).contains(&r), "ratio {r}");
        assert_closed_manifold(&d);

        let body = crate::synth::build_body(&crate::synth::IdentitySpec::default())
            .unwrap()
            .mesh()
            .clone();
        let d = remesh(&body, RemeshVariant::Ds2, 5).unwrap();
        let r = d.num_vertices() as f64 / body.num_vertices() as f64;
        assert!((0.45..=0.55).contains(&r), "ratio {r}");
        assert_closed_manifold(&d);
    }

    #[test]
    fn us2_doubles_vertex_count() {
        let m = icosphere(3);
        let u = remesh(&m, RemeshVariant::Us2, 1).unwrap();
        let r = u.num_vertices() as f64 / m.num_vertices() as f64;
        assert!((1.9..=2.1).contains(&r), "ratio {r}");
        assert_closed_manifold(&u);
    }

    #[test]
    fn vd_creates_density_contrast() {
        let m = icosphere(4);
        let v = remesh(&m, RemeshVariant::Vd, 2).unwrap();
        assert_closed_manifold(&v);
        let (lo, hi) = m.bounding_box();
        let ext = geom::sub(hi, lo);
        let axis = (0..3).max_by(|&a, &b| ext[a].partial_cmp(&ext[b]).unwrap()).unwrap();
        let c = geom::centroid(m.vertices())[axis];
        let (fine, coarse) = edge_lengths_by_side(&v, axis, c);
        assert!(coarse / fine >= 2.0, "coarse {coarse} fine {fine}");
    }

    #[test]
    fn seeds_change_connectivity_not_validity() {
        let m = icosphere(3);
        let a = remesh(&m, RemeshVariant::Ds2, 1).unwrap();
        let b = remesh(&m, RemeshVariant::Ds2, 2).unwrap();
        assert_ne!(a.faces(), b.faces());
        assert_eq!(a, remesh(&m, RemeshVariant::Ds2, 1).unwrap());
    }

    #[test]
    fn open_grid_stays_valid() {
        let g = grid(20);
        for v in [RemeshVariant::Ds2, RemeshVariant::Us2, RemeshVariant::Vd] {
            let r = remesh(&g, v, 4).unwrap();
            assert!(r.faces().iter().all(|f| f.iter().all(|&i| i < r.num_vertices())));
            assert_eq!(r.connected_components(), 1);
        }
    }

    #[test]
    fn refuses_tiny_targets() {
        let m = icosphere(0);
        assert!(matches!(
            remesh(&m, RemeshVariant::Ds2, 0),
            Err(Error::Validation(_))
        ));
    }
}
