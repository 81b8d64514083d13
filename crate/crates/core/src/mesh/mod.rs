//! Triangle mesh data model and derived per-vertex quantities.

mod io;
mod remesh;
pub mod spatial;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

pub use io::{
    frame_file_name, load_mesh, load_sequence, save_mesh, save_ply, save_sequence, PlyEncoding,
};
pub use remesh::{decimate_to, refine_to, remesh, VD_DENSITY_FACTOR};
pub use spatial::{
    closest_on_triangle, closest_surface_points, nearest_correspondence, PointIndex, SurfacePoint,
};

/// Faces with an area below this are treated as slivers and ignored by normal and
/// cotangent accumulation.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// One frame of a surface: vertex positions plus counter-clockwise triangle connectivity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::validation(format!(
                "mesh needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if faces.is_empty() {
            return Err(Error::validation("mesh has no faces"));
        }
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= n) {
                return Err(Error::validation(format!(
                    "face {fi} references vertex out of range: {f:?} (mesh has {n} vertices)"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::validation(format!(
                    "face {fi} repeats a vertex index: {f:?}"
                )));
            }
        }
        if let Some(i) = vertices
            .iter()
            .position(|v| v.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::validation(format!("vertex {i} is not finite")));
        }
        Ok(TriMesh {
            vertices,
            faces,
            name: None,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    /// Same connectivity, new positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::validation(format!(
                "expected {} vertex positions, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        if let Some(i) = vertices
            .iter()
            .position(|v| v.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::numerical(format!("vertex {i} is not finite")));
        }
        Ok(TriMesh {
            vertices,
            faces: self.faces.clone(),
            name: self.name.clone(),
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        geom::tri_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    pub fn mean_edge_length(&self) -> f64 {
        let edges = edge_list(self);
        if edges.is_empty() {
            return 0.0;
        }
        edges
            .iter()
            .map(|&[i, j]| geom::norm(geom::sub(self.vertices[i], self.vertices[j])))
            .sum::<f64>()
            / edges.len() as f64
    }

    /// Sorted one-ring neighbor lists.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nbrs = vec![Vec::new(); self.vertices.len()];
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                nbrs[a].push(b);
                nbrs[b].push(a);
            }
        }
        for n in &mut nbrs {
            n.sort_unstable();
            n.dedup();
        }
        nbrs
    }

    /// Number of connected components, counting vertices that no face references.
    pub fn connected_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for f in &self.faces {
            for k in 1..3 {
                let (ra, rb) = (find(&mut parent, f[0]), find(&mut parent, f[k]));
                if ra != rb {
                    parent[ra] = rb;
                }
            }
        }
        (0..self.vertices.len())
            .filter(|&i| find(&mut parent, i) == i)
            .count()
    }

    /// SHA-256 over positions and connectivity (little-endian), hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.vertices.len() as u64).to_le_bytes());
        h.update((self.faces.len() as u64).to_le_bytes());
        for v in &self.vertices {
            for c in v {
                h.update(c.to_le_bytes());
            }
        }
        for f in &self.faces {
            for &i in f {
                h.update((i as u64).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Reflect through the x = 0 plane, flipping winding so normals stay outward.
    pub fn mirrored_x(&self) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|v| [-v[0], v[1], v[2]]).collect(),
            faces: self.faces.iter().map(|f| [f[0], f[2], f[1]]).collect(),
            name: self.name.clone(),
        }
    }

    pub fn transformed(&self, f: impl Fn(Vec3) -> Vec3) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
            faces: self.faces.clone(),
            name: self.name.clone(),
        }
    }
}

/// Unique undirected edges, each stored as a sorted index pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeList {
    edges: Vec<[usize; 2]>,
}

impl EdgeList {
    pub fn as_slice(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, [usize; 2]> {
        self.edges.iter()
    }
}

pub fn edge_list(mesh: &TriMesh) -> EdgeList {
    edges_of(mesh.faces())
}

/// Unique edges of a face list.
pub fn edges_of(faces: &[[usize; 3]]) -> EdgeList {
    let mut edges: Vec<[usize; 2]> = faces
        .iter()
        .flat_map(|f| {
            (0..3).map(move |k| {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                [a.min(b), a.max(b)]
            })
        })
        .collect();
    edges.sort_unstable();
    edges.dedup();
    EdgeList { edges }
}

/// Area-weighted vertex normals together with the vertices that received none.
#[derive(Clone, Debug)]
pub struct VertexNormals {
    pub normals: Vec<Vec3>,
    /// Vertices with no non-degenerate incident face; their normal is the zero vector.
    pub zero: Vec<usize>,
}

pub fn vertex_normals(mesh: &TriMesh) -> VertexNormals {
    let out = normals_from_positions(mesh.vertices(), mesh.faces());
    if !out.zero.is_empty() {
        log::warn!(
            "{} vertices have no non-degenerate incident face; using zero normals",
            out.zero.len()
        );
    }
    out
}

/// Area-weighted normals for arbitrary positions over a fixed connectivity.
pub fn normals_from_positions(positions: &[Vec3], faces: &[[usize; 3]]) -> VertexNormals {
    let mut acc = vec![[0.0; 3]; positions.len()];
    for f in faces {
        let c = geom::tri_cross(positions[f[0]], positions[f[1]], positions[f[2]]);
        if 0.5 * geom::norm(c) < DEGENERATE_AREA {
            continue;
        }
        for &i in f {
            acc[i] = geom::add(acc[i], c);
        }
    }
    let mut zero = Vec::new();
    let normals = acc
        .into_iter()
        .enumerate()
        .map(|(i, n)| match geom::normalize(n) {
            Some(u) => u,
            None => {
                zero.push(i);
                [0.0; 3]
            }
        })
        .collect();
    VertexNormals { normals, zero }
}

/// Similarity transform mapping a mesh into the unit-diagonal frame:
/// `normalized = (p + translation) * scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizeTransform {
    pub translation: Vec3,
    pub scale: f64,
}

impl NormalizeTransform {
    pub fn identity() -> Self {
        NormalizeTransform {
            translation: [0.0; 3],
            scale: 1.0,
        }
    }

    /// Centers on the vertex centroid and scales the bounding-box diagonal to 1.
    pub fn fit(mesh: &TriMesh) -> Result<Self> {
        let (lo, hi) = mesh.bounding_box();
        let diag = geom::norm(geom::sub(hi, lo));
        if !(diag > 1e-12) {
            return Err(Error::validation(
                "cannot normalize a mesh whose bounding box has zero diagonal",
            ));
        }
        let c = geom::centroid(mesh.vertices());
        Ok(NormalizeTransform {
            translation: geom::scale(c, -1.0),
            scale: 1.0 / diag,
        })
    }

    pub fn apply_point(&self, p: Vec3) -> Vec3 {
        geom::scale(geom::add(p, self.translation), self.scale)
    }

    pub fn invert_point(&self, q: Vec3) -> Vec3 {
        geom::sub(geom::scale(q, 1.0 / self.scale), self.translation)
    }

    pub fn apply(&self, mesh: &TriMesh) -> TriMesh {
        mesh.transformed(|p| self.apply_point(p))
    }

    pub fn invert(&self, mesh: &TriMesh) -> TriMesh {
        mesh.transformed(|q| self.invert_point(q))
    }
}

pub fn normalize(mesh: &TriMesh) -> Result<(TriMesh, NormalizeTransform)> {
    let t = NormalizeTransform::fit(mesh)?;
    Ok((t.apply(mesh), t))
}

/// Re-triangulations used by the robustness protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemeshVariant {
    Original,
    Ds2,
    Us2,
    Vd,
}

impl RemeshVariant {
    pub const ALL: [RemeshVariant; 4] = [
        RemeshVariant::Original,
        RemeshVariant::Ds2,
        RemeshVariant::Us2,
        RemeshVariant::Vd,
    ];
}

impl fmt::Display for RemeshVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RemeshVariant::Original => "original",
            RemeshVariant::Ds2 => "ds2",
            RemeshVariant::Us2 => "us2",
            RemeshVariant::Vd => "vd",
        };
        f.write_str(s)
    }
}

impl FromStr for RemeshVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "original" | "orig" => Ok(RemeshVariant::Original),
            "ds2" => Ok(RemeshVariant::Ds2),
            "us2" => Ok(RemeshVariant::Us2),
            "vd" => Ok(RemeshVariant::Vd),
            other => Err(Error::validation(format!("unknown remesh variant `{other}`"))),
        }
    }
}

/// An ordered list of frames; frames may differ in connectivity and vertex count.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    pub frames: Vec<TriMesh>,
}

impl MotionSequence {
    pub fn new(frames: Vec<TriMesh>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::validation("motion sequence has no frames"));
        }
        Ok(MotionSequence { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// True when every frame shares the connectivity of the first.
    pub fn is_registered(&self) -> bool {
        let f0 = self.frames[0].faces();
        let n0 = self.frames[0].num_vertices();
        self.frames
            .iter()
            .all(|m| m.num_vertices() == n0 && m.faces() == f0)
    }
}
