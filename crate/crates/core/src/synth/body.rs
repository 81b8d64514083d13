//! Humanoid surface built by box modelling a quad cage and smoothing it with
//! Catmull-Clark subdivision. Skinning weights live on the cage and are
//! subdivided alongside the positions.
//!
//! Thin limbs keep four cage faces around, so the subdivided surface is several
//! times denser at wrists and ankles than on the torso. The body is therefore
//! subdivided one round further and decimated back to the vertex budget, which
//! evens out the sampling the way a scanner would.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::mesh::{closest_surface_points, decimate_to, TriMesh};

pub(crate) const NUM_BONES: usize = 10;

/// Bone indices into the skinning weight rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Bone {
    Root = 0,
    Head = 1,
    LeftUpperArm = 2,
    LeftForearm = 3,
    RightUpperArm = 4,
    RightForearm = 5,
    LeftThigh = 6,
    LeftShin = 7,
    RightThigh = 8,
    RightShin = 9,
}

impl Bone {
    pub(crate) fn parent(self) -> Option<Bone> {
        use Bone::*;
        match self {
            Root => None,
            Head | LeftUpperArm | RightUpperArm | LeftThigh | RightThigh => Some(Root),
            LeftForearm => Some(LeftUpperArm),
            RightForearm => Some(RightUpperArm),
            LeftShin => Some(LeftThigh),
            RightShin => Some(RightThigh),
        }
    }

    pub(crate) const ALL: [Bone; NUM_BONES] = [
        Bone::Root,
        Bone::Head,
        Bone::LeftUpperArm,
        Bone::LeftForearm,
        Bone::RightUpperArm,
        Bone::RightForearm,
        Bone::LeftThigh,
        Bone::LeftShin,
        Bone::RightThigh,
        Bone::RightShin,
    ];
}

/// Body proportions. The body faces +z with +y up; its left side is +x.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentitySpec {
    /// Upper arm, forearm, thigh, shin.
    pub limb_lengths: [f64; 4],
    /// Half-thickness of the same four segments.
    pub limb_radii: [f64; 4],
    /// Torso width (x), height (y), depth (z).
    pub torso: [f64; 3],
    /// 0, 1 or 2 for roughly 1k, 4k or 7k vertices.
    pub level: u8,
    /// Seed the proportions were drawn from (0 for hand-written specs).
    pub seed: u64,
}

impl Default for IdentitySpec {
    fn default() -> Self {
        IdentitySpec {
            limb_lengths: [0.28, 0.26, 0.42, 0.40],
            limb_radii: [0.05, 0.04, 0.075, 0.055],
            torso: [0.34, 0.56, 0.20],
            level: 0,
            seed: 0,
        }
    }
}

impl IdentitySpec {
    /// Random proportions around the default body.
    pub fn sample(seed: u64, level: u8) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = IdentitySpec::default();
        let mut jitter = |v: f64, lo: f64, hi: f64| v * rng.gen_range(lo..hi);
        let limb_scale = jitter(1.0, 0.88, 1.12);
        let girth = jitter(1.0, 0.85, 1.2);
        IdentitySpec {
            limb_lengths: base.limb_lengths.map(|l| l * limb_scale * jitter(1.0, 0.95, 1.05)),
            limb_radii: base.limb_radii.map(|r| r * girth),
            torso: [
                jitter(base.torso[0], 0.9, 1.15),
                jitter(base.torso[1], 0.9, 1.1),
                jitter(base.torso[2], 0.9, 1.15),
            ],
            level,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let all = self
            .limb_lengths
            .iter()
            .chain(&self.limb_radii)
            .chain(&self.torso);
        if let Some(v) = all.clone().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::validation(format!(
                "body dimensions must be positive, got {v}"
            )));
        }
        if self.level > 2 {
            return Err(Error::validation(format!(
                "resolution level must be 0, 1 or 2, got {}",
                self.level
            )));
        }
        let [w, h, d] = self.torso;
        for (l, r) in self.limb_lengths.iter().zip(&self.limb_radii) {
            if 2.5 * r > *l {
                return Err(Error::validation(format!(
                    "limb radius {r} too large for length {l}: joints would self-intersect"
                )));
            }
        }
        if self.limb_radii[2] >= w / 3.0 {
            return Err(Error::validation(
                "thighs wider than a third of the torso would intersect each other",
            ));
        }
        if self.limb_radii[0] > 0.5 * (0.4 * h).min(d) {
            return Err(Error::validation(
                "upper arm thicker than the shoulder it is attached to",
            ));
        }
        Ok(())
    }
}

/// A generated body: the surface plus the private rig used to pose it.
#[derive(Clone, Debug)]
pub struct Body {
    mesh: TriMesh,
    pub(crate) joints: [Vec3; NUM_BONES],
    /// Per-vertex skinning weights, rows sum to one.
    pub(crate) weights: Vec<[f64; NUM_BONES]>,
    pub(crate) spec: IdentitySpec,
}

impl Body {
    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn spec(&self) -> &IdentitySpec {
        &self.spec
    }

    /// Total leg length, used to scale gait strides.
    pub(crate) fn leg_length(&self) -> f64 {
        self.spec.limb_lengths[2] + self.spec.limb_lengths[3]
    }
}

const ATTR: usize = 3 + NUM_BONES;

/// Polygon cage with per-vertex attributes `[x, y, z, w_0..w_9]`.
struct Cage {
    attrs: Vec<[f64; ATTR]>,
    quads: Vec<[usize; 4]>,
}

fn bone_weights(pairs: &[(Bone, f64)]) -> [f64; NUM_BONES] {
    let mut w = [0.0; NUM_BONES];
    for &(b, v) in pairs {
        w[b as usize] += v;
    }
    w
}

impl Cage {
    fn pos(&self, i: usize) -> Vec3 {
        let a = &self.attrs[i];
        [a[0], a[1], a[2]]
    }

    fn push(&mut self, p: Vec3, w: [f64; NUM_BONES]) -> usize {
        let mut a = [0.0; ATTR];
        a[..3].copy_from_slice(&p);
        a[3..].copy_from_slice(&w);
        self.attrs.push(a);
        self.attrs.len() - 1
    }

    fn set_weights(&mut self, i: usize, w: [f64; NUM_BONES]) {
        self.attrs[i][3..].copy_from_slice(&w);
    }

    fn face_center(&self, f: usize) -> Vec3 {
        let q = self.quads[f];
        geom::centroid(&q.map(|i| self.pos(i)))
    }

    fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c, d] = self.quads[f].map(|i| self.pos(i));
        geom::cross(geom::sub(c, a), geom::sub(d, b))
    }

    /// The face whose center is closest to `p`.
    fn face_near(&self, p: Vec3) -> usize {
        (0..self.quads.len())
            .min_by(|&a, &b| {
                geom::dist2(self.face_center(a), p).total_cmp(&geom::dist2(self.face_center(b), p))
            })
            .unwrap()
    }

    /// Replaces face `f` by a prism ending in a new rectangular ring centred at
    /// `center` and spanned by `u * hu` and `v * hv`. Returns the new cap face.
    fn extrude(
        &mut self,
        f: usize,
        center: Vec3,
        (u, hu): (Vec3, f64),
        (v, hv): (Vec3, f64),
        w: [f64; NUM_BONES],
    ) -> usize {
        let old = self.quads[f];
        let c0 = self.face_center(f);
        let mut ring = [0usize; 4];
        for (k, &i) in old.iter().enumerate() {
            let off = geom::sub(self.pos(i), c0);
            let su = geom::dot(off, u).signum();
            let sv = geom::dot(off, v).signum();
            let p = geom::add(
                center,
                geom::add(geom::scale(u, su * hu), geom::scale(v, sv * hv)),
            );
            ring[k] = self.push(p, w);
        }
        for k in 0..4 {
            let (a, b) = (old[k], old[(k + 1) % 4]);
            self.quads.push([a, b, ring[(k + 1) % 4], ring[k]]);
        }
        self.quads[f] = ring;
        f
    }
}

/// Surface quads of an axis-aligned box split into a lattice, oriented outward.
fn lattice_box(xs: &[f64], ys: &[f64], zs: &[f64]) -> Cage {
    let (nx, ny, nz) = (xs.len(), ys.len(), zs.len());
    let mut cage = Cage {
        attrs: Vec::new(),
        quads: Vec::new(),
    };
    let mut index = HashMap::new();
    let root = bone_weights(&[(Bone::Root, 1.0)]);
    let mut id = |cage: &mut Cage, i: usize, j: usize, k: usize| {
        *index
            .entry((i, j, k))
            .or_insert_with(|| cage.push([xs[i], ys[j], zs[k]], root))
    };
    let center = [
        0.5 * (xs[0] + xs[nx - 1]),
        0.5 * (ys[0] + ys[ny - 1]),
        0.5 * (zs[0] + zs[nz - 1]),
    ];
    // Each side: fixed axis and its extreme index, plus the two in-plane axes.
    let dims = [nx, ny, nz];
    for axis in 0..3 {
        let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in [0, dims[axis] - 1] {
            for s in 0..dims[a1] - 1 {
                for t in 0..dims[a2] - 1 {
                    let mut corners = [0usize; 4];
                    for (c, (ds, dt)) in [(0, 0), (1, 0), (1, 1), (0, 1)].into_iter().enumerate() {
                        let mut ijk = [0; 3];
                        ijk[axis] = side;
                        ijk[a1] = s + ds;
                        ijk[a2] = t + dt;
                        corners[c] = id(&mut cage, ijk[0], ijk[1], ijk[2]);
                    }
                    cage.quads.push(corners);
                    let f = cage.quads.len() - 1;
                    let out = geom::sub(cage.face_center(f), center);
                    if geom::dot(cage.face_normal(f), out) < 0.0 {
                        cage.quads[f].reverse();
                    }
                }
            }
        }
    }
    cage
}

fn lerp(a: Vec3, b: Vec3, t: f64) -> Vec3 {
    geom::add(a, geom::scale(geom::sub(b, a), t))
}

/// Rings along one limb: (position along the chain, half extents, weights).
struct Ring {
    at: Vec3,
    half: [f64; 2],
    weights: [f64; NUM_BONES],
}

fn extrude_chain(cage: &mut Cage, mut face: usize, rings: &[Ring], u: Vec3, v: Vec3) {
    for r in rings {
        face = cage.extrude(face, r.at, (u, r.half[0]), (v, r.half[1]), r.weights);
    }
}

fn build_cage(spec: &IdentitySpec) -> (Cage, [Vec3; NUM_BONES]) {
    let [w, h, d] = spec.torso;
    let [ua, fa, th, sh] = spec.limb_lengths;
    let [rua, rfa, rth, rsh] = spec.limb_radii;
    let rich = spec.level == 2;
    let xs = [-w / 2.0, -w / 6.0, w / 6.0, w / 2.0];
    let ys = [0.0, 0.6 * h, h];
    let zs = [-d / 2.0, d / 2.0];
    let mut cage = lattice_box(&xs, &ys, &zs);
    let mut joints = [[0.0; 3]; NUM_BONES];
    let x_axis = [1.0, 0.0, 0.0];
    let y_axis = [0.0, 1.0, 0.0];
    let z_axis = [0.0, 0.0, 1.0];
    let half = |a: Bone, wa: f64, b: Bone| bone_weights(&[(a, wa), (b, 1.0 - wa)]);
    let one = |a: Bone| bone_weights(&[(a, 1.0)]);

    for (sign, upper, fore, thigh, shin) in [
        (1.0, Bone::LeftUpperArm, Bone::LeftForearm, Bone::LeftThigh, Bone::LeftShin),
        (-1.0, Bone::RightUpperArm, Bone::RightForearm, Bone::RightThigh, Bone::RightShin),
    ] {
        // Arm from the upper cell of the side wall, straight out along x (T-pose).
        let y_sh = 0.8 * h;
        let shoulder = [sign * (w / 2.0 + 0.6 * rua), y_sh, 0.0];
        let elbow = geom::add(shoulder, [sign * ua, 0.0, 0.0]);
        let wrist = geom::add(elbow, [sign * fa, 0.0, 0.0]);
        joints[upper as usize] = shoulder;
        joints[fore as usize] = elbow;
        let mut rings = vec![Ring {
            at: shoulder,
            half: [1.1 * rua, 1.1 * rua],
            weights: half(Bone::Root, 0.5, upper),
        }];
        if rich {
            rings.push(Ring {
                at: lerp(shoulder, elbow, 0.5),
                half: [rua, rua],
                weights: one(upper),
            });
        }
        rings.push(Ring {
            at: elbow,
            half: [0.5 * (rua + rfa), 0.5 * (rua + rfa)],
            weights: half(upper, 0.5, fore),
        });
        if rich {
            rings.push(Ring {
                at: lerp(elbow, wrist, 0.5),
                half: [rfa, rfa],
                weights: one(fore),
            });
        }
        rings.push(Ring {
            at: wrist,
            half: [0.8 * rfa, 1.0 * rfa],
            weights: one(fore),
        });
        let f = cage.face_near([sign * w / 2.0, 0.8 * h, 0.0]);
        extrude_chain(&mut cage, f, &rings, y_axis, z_axis);

        // Leg from the outer bottom cell, straight down.
        let cx = sign * w / 3.0;
        let hip = [cx, 0.0, 0.0];
        let knee = [cx, -th, 0.0];
        let ankle = [cx, -th - sh, 0.0];
        joints[thigh as usize] = hip;
        joints[shin as usize] = knee;
        let f = cage.face_near([cx, 0.0, 0.0]);
        for &i in &cage.quads[f].clone() {
            // The corners shared with the crotch stay on the torso.
            if (cage.pos(i)[0].abs() - w / 2.0).abs() < 1e-12 {
                cage.set_weights(i, half(Bone::Root, 0.5, thigh));
            }
        }
        let mut rings = Vec::new();
        if rich {
            rings.push(Ring {
                at: lerp(hip, knee, 0.5),
                half: [rth, rth],
                weights: one(thigh),
            });
        }
        rings.push(Ring {
            at: knee,
            half: [0.5 * (rth + rsh), 0.5 * (rth + rsh)],
            weights: half(thigh, 0.5, shin),
        });
        if rich {
            rings.push(Ring {
                at: lerp(knee, ankle, 0.5),
                half: [rsh, rsh],
                weights: one(shin),
            });
        }
        rings.push(Ring {
            at: ankle,
            half: [0.8 * rsh, 1.3 * rsh],
            weights: one(shin),
        });
        extrude_chain(&mut cage, f, &rings, x_axis, z_axis);
    }

    // Neck and head from the top centre cell.
    let neck = [0.0, h + 0.04 * h, 0.0];
    joints[Bone::Head as usize] = neck;
    let head_r = 0.3 * w;
    let mut rings = vec![Ring {
        at: neck,
        half: [0.35 * head_r, 0.35 * head_r],
        weights: half(Bone::Root, 0.5, Bone::Head),
    }];
    if rich {
        rings.push(Ring {
            at: geom::add(neck, [0.0, 0.6 * head_r, 0.0]),
            half: [0.9 * head_r, head_r],
            weights: one(Bone::Head),
        });
    }
    rings.push(Ring {
        at: geom::add(neck, [0.0, 1.6 * head_r, 0.0]),
        half: [0.8 * head_r, 0.9 * head_r],
        weights: one(Bone::Head),
    });
    let f = cage.face_near([0.0, h, 0.0]);
    extrude_chain(&mut cage, f, &rings, x_axis, z_axis);
    joints[Bone::Root as usize] = [0.0, 0.0, 0.0];
    (cage, joints)
}

/// One round of Catmull-Clark subdivision on a closed quad cage.
fn catmull_clark(cage: &Cage) -> Cage {
    let nv = cage.attrs.len();
    let mut edge_id: HashMap<(usize, usize), usize> = HashMap::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut edge_faces: Vec<Vec<usize>> = Vec::new();
    for (fi, q) in cage.quads.iter().enumerate() {
        for k in 0..4 {
            let (a, b) = (q[k], q[(k + 1) % 4]);
            let key = (a.min(b), a.max(b));
            let e = *edge_id.entry(key).or_insert_with(|| {
                edges.push(key);
                edge_faces.push(Vec::new());
                edges.len() - 1
            });
            edge_faces[e].push(fi);
        }
    }
    let avg = |items: &mut dyn Iterator<Item = [f64; ATTR]>| {
        let mut acc = [0.0; ATTR];
        let mut n = 0.0;
        for a in items {
            for (s, v) in acc.iter_mut().zip(a) {
                *s += v;
            }
            n += 1.0;
        }
        acc.map(|s| s / n)
    };
    let face_pts: Vec<[f64; ATTR]> = cage
        .quads
        .iter()
        .map(|q| avg(&mut q.iter().map(|&i| cage.attrs[i])))
        .collect();
    let edge_pts: Vec<[f64; ATTR]> = edges
        .iter()
        .zip(&edge_faces)
        .map(|(&(a, b), fs)| {
            let ends = [cage.attrs[a], cage.attrs[b]];
            if fs.len() == 2 {
                avg(&mut ends.into_iter().chain(fs.iter().map(|&f| face_pts[f])))
            } else {
                avg(&mut ends.into_iter())
            }
        })
        .collect();
    let mut v_faces = vec![Vec::new(); nv];
    for (fi, q) in cage.quads.iter().enumerate() {
        for &i in q {
            v_faces[i].push(fi);
        }
    }
    let mut v_edges = vec![Vec::new(); nv];
    for (e, &(a, b)) in edges.iter().enumerate() {
        v_edges[a].push(e);
        v_edges[b].push(e);
    }
    let mut attrs = Vec::with_capacity(nv + edges.len() + cage.quads.len());
    for i in 0..nv {
        let n = v_edges[i].len() as f64;
        let f = avg(&mut v_faces[i].iter().map(|&f| face_pts[f]));
        let r = avg(&mut v_edges[i].iter().map(|&e| {
            let (a, b) = edges[e];
            avg(&mut [cage.attrs[a], cage.attrs[b]].into_iter())
        }));
        let p = cage.attrs[i];
        let mut out = [0.0; ATTR];
        for c in 0..ATTR {
            out[c] = (f[c] + 2.0 * r[c] + (n - 3.0) * p[c]) / n;
        }
        attrs.push(out);
    }
    let e0 = attrs.len();
    attrs.extend_from_slice(&edge_pts);
    let f0 = attrs.len();
    attrs.extend_from_slice(&face_pts);
    let mut quads = Vec::with_capacity(4 * cage.quads.len());
    for (fi, q) in cage.quads.iter().enumerate() {
        let e = |a: usize, b: usize| e0 + edge_id[&(a.min(b), a.max(b))];
        for k in 0..4 {
            let prev = q[(k + 3) % 4];
            let next = q[(k + 1) % 4];
            quads.push([q[k], e(q[k], next), f0 + fi, e(prev, q[k])]);
        }
    }
    Cage { attrs, quads }
}

fn triangulate(cage: &Cage) -> Result<TriMesh> {
    let vertices: Vec<Vec3> = (0..cage.attrs.len()).map(|i| cage.pos(i)).collect();
    let mut faces = Vec::with_capacity(2 * cage.quads.len());
    for &[a, b, c, d] in &cage.quads {
        if geom::dist2(vertices[a], vertices[c]) <= geom::dist2(vertices[b], vertices[d]) {
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        } else {
            faces.push([a, b, d]);
            faces.push([b, c, d]);
        }
    }
    TriMesh::new(vertices, faces)
}

/// Builds the posed-at-rest body for an identity (T-pose, feet below the origin).
pub fn build_body(spec: &IdentitySpec) -> Result<Body> {
    spec.validate()?;
    let (mut cage, joints) = build_cage(spec);
    let rounds = if spec.level == 0 { 2 } else { 3 };
    let mut budget = 0;
    for r in 0..=rounds {
        cage = catmull_clark(&cage);
        if r + 1 == rounds {
            budget = cage.attrs.len();
        }
    }
    let dense = triangulate(&cage)?;
    let mesh = decimate_to(&dense, budget, spec.seed)?;
    let faces = dense.faces();
    let weights = closest_surface_points(&dense, mesh.vertices())
        .iter()
        .map(|s| {
            let mut w = [0.0; NUM_BONES];
            for (&v, &b) in faces[s.face].iter().zip(&s.weights) {
                for (acc, x) in w.iter_mut().zip(&cage.attrs[v][3..]) {
                    *acc += b.max(0.0) * x;
                }
            }
            let total: f64 = w.iter().sum();
            w.map(|x| x / total)
        })
        .collect();
    Ok(Body {
        mesh: mesh.with_name("body"),
        joints,
        weights,
        spec: spec.clone(),
    })
}
