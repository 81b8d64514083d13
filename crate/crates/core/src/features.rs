//! Per-vertex feature fields from stacked heat-diffusion blocks.
//!
//! Input signal is normalized positions plus vertex normals (6 channels). A linear
//! lift lifts it to `width` channels, each block diffuses, mixes tangent gradients
//! into rotation-invariant scalars and applies a residual pointwise perceptron, and
//! a final linear layer maps to the output width.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, Activation, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::mesh::{vertex_normals, TriMesh};
use crate::nn::{BoundMlp, Linear, Mlp, Params, SerdeActivation};
use crate::spectral::{diffuse_var, gradient_var, SpectralOps};

pub const INPUT_CHANNELS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorConfig {
    pub width: usize,
    pub blocks: usize,
    pub output: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            width: 128,
            blocks: 4,
            output: 64,
        }
    }
}

/// One diffusion block over `C` channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionBlock {
    /// Unconstrained diffusion times (1 x C); the time used is `softplus(time_raw)`.
    pub time_raw: Tensor,
    /// Real and imaginary parts of the complex C x C gradient mixing.
    pub grad_re: Tensor,
    pub grad_im: Tensor,
    /// 3C -> C -> C.
    pub mlp: Mlp,
}

struct BoundBlock {
    time_raw: Var,
    grad_re: Var,
    grad_im: Var,
    mlp: BoundMlp,
}

impl DiffusionBlock {
    pub fn new(channels: usize, init_time: f64, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (channels as f64).sqrt();
        let mut mix = || {
            Tensor::from_vec(
                channels,
                channels,
                (0..channels * channels)
                    .map(|_| rng.gen_range(-bound..=bound))
                    .collect(),
            )
        };
        let grad_re = mix();
        let grad_im = mix();
        DiffusionBlock {
            time_raw: Tensor::filled(1, channels, autodiff::softplus_inv(init_time)),
            grad_re,
            grad_im,
            mlp: Mlp::new(&[3 * channels, channels, channels], SerdeActivation::Relu, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.time_raw.cols()
    }

    pub fn diffusion_times(&self) -> Vec<f64> {
        self.time_raw.data().iter().map(|&r| autodiff::softplus(r)).collect()
    }

    fn bind(&self, g: &mut Graph) -> BoundBlock {
        BoundBlock {
            time_raw: g.param(&self.time_raw),
            grad_re: g.param(&self.grad_re),
            grad_im: g.param(&self.grad_im),
            mlp: self.mlp.bind(g),
        }
    }

    /// Applies the block to an N x C field.
    pub fn forward(&self, g: &mut Graph, ops: &Arc<SpectralOps>, x: Var) -> Var {
        let b = self.bind(g);
        b.forward(g, ops, x)
    }
}

impl BoundBlock {
    fn forward(&self, g: &mut Graph, ops: &Arc<SpectralOps>, x: Var) -> Var {
        let times = g.softplus(self.time_raw);
        let xd = diffuse_var(g, ops, x, times);
        let (gx, gy) = gradient_var(g, ops, xd);
        // b = A g in complex form, with g = gx + i gy per channel.
        let xr = g.matmul(gx, self.grad_re);
        let yi = g.matmul(gy, self.grad_im);
        let b_re = g.sub(xr, yi);
        let yr = g.matmul(gy, self.grad_re);
        let xi = g.matmul(gx, self.grad_im);
        let b_im = g.add(yr, xi);
        // Re(conj(g) b) is unchanged by a rotation of the tangent frame.
        let p = g.mul(gx, b_re);
        let q = g.mul(gy, b_im);
        let dot = g.add(p, q);
        let feat = g.tanh(dot);
        let cat = g.concat_cols(&[x, xd, feat]);
        let h = self.mlp.forward(g, cat);
        g.add(x, h)
    }
}

impl Params for DiffusionBlock {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.time_raw, &self.grad_re, &self.grad_im];
        v.extend(self.mlp.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.time_raw, &mut self.grad_re, &mut self.grad_im];
        v.extend(self.mlp.tensors_mut());
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    pub lift: Linear,
    pub blocks: Vec<DiffusionBlock>,
    pub head: Linear,
}

impl FeatureExtractor {
    /// `init_time` seeds every diffusion time; the mean squared edge length of a
    /// typical (normalized) input keeps the initial receptive field local.
    pub fn new(cfg: &ExtractorConfig, init_time: f64, rng: &mut impl Rng) -> Result<Self> {
        if cfg.width == 0 || cfg.output == 0 {
            return Err(Error::validation("feature widths must be positive"));
        }
        if !(init_time > 0.0 && init_time.is_finite()) {
            return Err(Error::validation(format!(
                "initial diffusion time must be positive, got {init_time}"
            )));
        }
        let lift = Linear::new(INPUT_CHANNELS, cfg.width, rng);
        let blocks = (0..cfg.blocks)
            .map(|_| DiffusionBlock::new(cfg.width, init_time, rng))
            .collect();
        let head = Linear::new(cfg.width, cfg.output, rng);
        Ok(FeatureExtractor { lift, blocks, head })
    }

    pub fn output_width(&self) -> usize {
        self.head.output_width()
    }

    /// Differentiable forward pass from an N x 6 input signal. Fails, naming the
    /// stage, as soon as a non-finite value appears.
    pub fn forward(&self, g: &mut Graph, ops: &Arc<SpectralOps>, input: Var) -> Result<Var> {
        let (n, c) = g.shape(input);
        if c != INPUT_CHANNELS || n != ops.num_vertices() {
            return Err(Error::validation(format!(
                "feature input is {n}x{c}, expected {}x{INPUT_CHANNELS}",
                ops.num_vertices()
            )));
        }
        let lift = self.lift.bind(g);
        let mut x = lift.forward(g, input, Activation::Identity);
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(g, ops, x);
            if !g.value(x).is_finite() {
                return Err(Error::numerical(format!(
                    "diffusion block {i} produced non-finite values"
                )));
            }
        }
        let head = self.head.bind(g);
        let out = head.forward(g, x, Activation::Identity);
        if !g.value(out).is_finite() {
            return Err(Error::numerical("feature head produced non-finite values"));
        }
        Ok(out)
    }
}

impl Params for FeatureExtractor {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.lift.tensors();
        for b in &self.blocks {
            v.extend(b.tensors());
        }
        v.extend(self.head.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.lift.tensors_mut();
        for b in &mut self.blocks {
            v.extend(b.tensors_mut());
        }
        v.extend(self.head.tensors_mut());
        v
    }
}

/// Per-vertex features of a source mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureField {
    pub values: Tensor,
    pub source_hash: String,
}

/// Positions and unit normals, N x 6.
pub fn input_signal(mesh: &TriMesh) -> Tensor {
    let normals = vertex_normals(mesh).normals;
    let mut t = Tensor::zeros(mesh.num_vertices(), INPUT_CHANNELS);
    for (i, (p, n)) in mesh.vertices().iter().zip(&normals).enumerate() {
        let row = t.row_mut(i);
        row[..3].copy_from_slice(p);
        row[3..].copy_from_slice(n);
    }
    t
}

/// Initial diffusion time for meshes like `mesh`: its mean squared edge length.
pub fn default_init_time(mesh: &TriMesh) -> f64 {
    let e = mesh.mean_edge_length();
    e * e
}

pub fn extract_features(
    mesh: &TriMesh,
    ops: &Arc<SpectralOps>,
    params: &FeatureExtractor,
) -> Result<FeatureField> {
    if ops.mesh_hash != mesh.content_hash() {
        return Err(Error::validation("spectral operators were built for a different mesh"));
    }
    let mut g = Graph::new();
    let input = g.constant(input_signal(mesh));
    let out = params.forward(&mut g, ops, input)?;
    Ok(FeatureField {
        values: g.value(out).clone(),
        source_hash: ops.mesh_hash.clone(),
    })
}
