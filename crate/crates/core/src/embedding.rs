//! Motion codes: a shared point encoder with max pooling per frame, followed by a
//! bidirectional GRU over the sequence and a linear projection.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::mesh::{MotionSequence, TriMesh};
use crate::nn::{BiGru, Linear, Mlp, Params, SerdeActivation};
use crate::spectral::symmetric_eigen;

pub const MIN_SAMPLE_POINTS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    /// Surface samples per frame.
    pub points: usize,
    pub width: usize,
    pub point_layers: usize,
    pub code: usize,
    pub gru_hidden: usize,
    pub gru_layers: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            points: 1024,
            width: 128,
            point_layers: 4,
            code: 64,
            gru_hidden: 64,
            gru_layers: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionEmbedder {
    /// Per-point layers; every layer, including the last, is followed by a leaky ReLU.
    pub point_mlp: Mlp,
    /// Pooled frame descriptor to the per-frame code.
    pub pool_head: Linear,
    pub gru: BiGru,
    /// Both GRU directions to the final code.
    pub projection: Linear,
}

impl MotionEmbedder {
    pub fn new(cfg: &EmbedderConfig, rng: &mut impl Rng) -> Result<Self> {
        if cfg.point_layers == 0 || cfg.width == 0 || cfg.code == 0 || cfg.gru_hidden == 0 {
            return Err(Error::validation("embedder widths and depths must be positive"));
        }
        if cfg.gru_layers == 0 {
            return Err(Error::validation("embedder needs at least one GRU layer"));
        }
        let mut widths = vec![3];
        widths.extend(std::iter::repeat(cfg.width).take(cfg.point_layers));
        let point_mlp = Mlp::new(&widths, SerdeActivation::LeakyRelu, rng);
        let pool_head = Linear::new(cfg.width, cfg.code, rng);
        let gru = BiGru::new(cfg.code, cfg.gru_hidden, cfg.gru_layers, rng);
        let projection = Linear::new(gru.output_width(), cfg.code, rng);
        Ok(MotionEmbedder {
            point_mlp,
            pool_head,
            gru,
            projection,
        })
    }

    pub fn code_width(&self) -> usize {
        self.projection.output_width()
    }

    /// Per-frame codes (T x d) before the recurrent pass.
    pub fn encode_frames_var(&self, g: &mut Graph, frames: &[Vec<Vec3>]) -> Result<Var> {
        if frames.is_empty() {
            return Err(Error::validation("cannot encode an empty sequence"));
        }
        let mut stacked = Vec::with_capacity(frames.iter().map(|f| f.len()).sum());
        for (t, pts) in frames.iter().enumerate() {
            if pts.is_empty() {
                return Err(Error::validation(format!("frame {t} has no points")));
            }
            if pts.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::numerical(format!("frame {t} has non-finite points")));
            }
            stacked.extend_from_slice(pts);
        }
        let x = g.constant(Tensor::from_points(&stacked));
        let mlp = self.point_mlp.bind(g);
        let h = mlp.forward(g, x);
        let h = g.activation(h, Activation::LEAKY);
        let mut pooled = Vec::with_capacity(frames.len());
        let mut start = 0;
        for pts in frames {
            let rows = g.slice_rows(h, start, pts.len());
            pooled.push(g.max_rows(rows));
            start += pts.len();
        }
        let pooled = g.concat_rows(&pooled);
        let head = self.pool_head.bind(g);
        Ok(head.forward(g, pooled, Activation::Identity))
    }

    /// Final motion codes (T x d) from sampled points of each frame.
    pub fn forward(&self, g: &mut Graph, frames: &[Vec<Vec3>]) -> Result<Var> {
        let z = self.encode_frames_var(g, frames)?;
        let h = self.gru.forward(g, z);
        let proj = self.projection.bind(g);
        let out = proj.forward(g, h, Activation::Identity);
        if !g.value(out).is_finite() {
            return Err(Error::numerical("motion embedder produced non-finite codes"));
        }
        Ok(out)
    }
}

impl Params for MotionEmbedder {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.point_mlp.tensors();
        v.extend(self.pool_head.tensors());
        v.extend(self.gru.tensors());
        v.extend(self.projection.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.point_mlp.tensors_mut();
        v.extend(self.pool_head.tensors_mut());
        v.extend(self.gru.tensors_mut());
        v.extend(self.projection.tensors_mut());
        v
    }
}

/// A T x d vector time series.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionCode {
    pub values: Tensor,
}

impl MotionCode {
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn width(&self) -> usize {
        self.values.cols()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut s = String::from("t");
        for c in 0..self.width() {
            s.push_str(&format!(",z{c}"));
        }
        s.push('\n');
        for t in 0..self.len() {
            s.push_str(&t.to_string());
            for x in self.values.row(t) {
                s.push_str(&format!(",{x:?}"));
            }
            s.push('\n');
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Seed for the samples of frame `t` of a sequence sampled with `seed`.
pub fn frame_seed(seed: u64, t: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(t as u64)
}

/// Area-weighted uniform samples on the surface.
pub fn sample_points(mesh: &TriMesh, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    if n < MIN_SAMPLE_POINTS {
        return Err(Error::validation(format!(
            "need at least {MIN_SAMPLE_POINTS} sample points, got {n}"
        )));
    }
    let v = mesh.vertices();
    let mut cumulative = Vec::with_capacity(mesh.num_faces());
    let mut total = 0.0;
    for fi in 0..mesh.num_faces() {
        total += mesh.face_area(fi);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::validation("cannot sample a mesh with zero surface area"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.gen::<f64>() * total;
        let fi = cumulative.partition_point(|&c| c <= r).min(cumulative.len() - 1);
        let [a, b, c] = mesh.faces()[fi].map(|i| v[i]);
        let (u, w): (f64, f64) = (rng.gen(), rng.gen());
        let su = u.sqrt();
        // Uniform barycentric sample: (1 - sqrt u, sqrt u (1 - w), sqrt u w).
        let p = geom::add(
            geom::add(geom::scale(a, 1.0 - su), geom::scale(b, su * (1.0 - w))),
            geom::scale(c, su * w),
        );
        out.push(p);
    }
    Ok(out)
}

/// Samples every frame of a sequence with per-frame seeds.
pub fn sample_sequence(seq: &MotionSequence, n: usize, seed: u64) -> Result<Vec<Vec<Vec3>>> {
    seq.frames
        .iter()
        .enumerate()
        .map(|(t, f)| sample_points(f, n, frame_seed(seed, t)))
        .collect()
}

/// Pooled per-frame code of one point set (no recurrent pass).
pub fn encode_frame(points: &[Vec3], params: &MotionEmbedder) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let z = params.encode_frames_var(&mut g, &[points.to_vec()])?;
    Ok(g.value(z).data().to_vec())
}

pub fn embed_motion(
    sequence: &MotionSequence,
    params: &MotionEmbedder,
    n: usize,
    seed: u64,
) -> Result<MotionCode> {
    let frames = sample_sequence(sequence, n, seed)?;
    let mut g = Graph::new();
    let out = params.forward(&mut g, &frames)?;
    Ok(MotionCode {
        values: g.value(out).clone(),
    })
}

/// Classical multidimensional scaling of all code rows into the plane, returned
/// per input code as a polyline. Missing dimensions (rank below 2) are zero.
pub fn mds_project(codes: &[MotionCode]) -> Result<Vec<Vec<[f64; 2]>>> {
    let rows: Vec<&[f64]> = codes
        .iter()
        .flat_map(|c| (0..c.len()).map(move |t| c.values.row(t)))
        .collect();
    let p = rows.len();
    if p < 2 {
        return Err(Error::validation("MDS needs at least two code vectors"));
    }
    if codes.iter().any(|c| c.width() != codes[0].width()) {
        return Err(Error::validation("MDS inputs have different code widths"));
    }
    let mut d2 = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        for j in 0..i {
            let s: f64 = rows[i].iter().zip(rows[j]).map(|(a, b)| (a - b).powi(2)).sum();
            d2[(i, j)] = s;
            d2[(j, i)] = s;
        }
    }
    let row_mean: Vec<f64> = (0..p).map(|i| d2.row(i).sum() / p as f64).collect();
    let grand = row_mean.iter().sum::<f64>() / p as f64;
    let b = DMatrix::from_fn(p, p, |i, j| -0.5 * (d2[(i, j)] - row_mean[i] - row_mean[j] + grand));
    let eig = symmetric_eigen(b);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let mut coords = vec![[0.0; 2]; p];
    for (axis, &k) in order.iter().take(2).enumerate() {
        let lam = eig.eigenvalues[k];
        if !(lam > 1e-12 * top.max(1e-300)) {
            continue;
        }
        let s = lam.sqrt();
        for (i, c) in coords.iter_mut().enumerate() {
            c[axis] = eig.eigenvectors[(i, k)] * s;
        }
    }
    let mut out = Vec::with_capacity(codes.len());
    let mut it = coords.into_iter();
    for c in codes {
        out.push(it.by_ref().take(c.len()).collect());
    }
    Ok(out)
}

/// Polylines as CSV with columns `motion,t,x,y`.
pub fn write_mds_csv(
    names: &[String],
    polylines: &[Vec<[f64; 2]>],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    let io = |e| Error::io(path, e);
    writeln!(buf, "motion,t,x,y").map_err(io)?;
    for (name, line) in names.iter().zip(polylines) {
        for (t, p) in line.iter().enumerate() {
            writeln!(buf, "{name},{t},{:?},{:?}", p[0], p[1]).map_err(io)?;
        }
    }
    std::fs::write(path, buf).map_err(io)
}
