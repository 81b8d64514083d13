//! Recursive per-vertex displacement decoder and trajectory rollout.
//!
//! At step `t` every vertex sees `(f_i, code[t-1], v_{i,t-1})`; a shared perceptron
//! predicts a displacement which is added to the previous position. Frame 0 is the
//! source mesh itself.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Graph, Tensor, Var};
use crate::embedding::MotionCode;
use crate::error::{Error, Result};
use crate::features::FeatureField;
use crate::mesh::TriMesh;
use crate::nn::{Mlp, Params, SerdeActivation};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub width: usize,
    pub hidden_layers: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            width: 128,
            hidden_layers: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeformationGenerator {
    pub feature_width: usize,
    pub code_width: usize,
    /// (F + d + 3) -> width x hidden_layers -> 3, last layer zero-initialized.
    pub mlp: Mlp,
}

impl DeformationGenerator {
    pub fn new(
        cfg: &GeneratorConfig,
        feature_width: usize,
        code_width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if cfg.width == 0 || cfg.hidden_layers == 0 {
            return Err(Error::validation("generator width and depth must be positive"));
        }
        let mut widths = vec![feature_width + code_width + 3];
        widths.extend(std::iter::repeat(cfg.width).take(cfg.hidden_layers));
        widths.push(3);
        let mut mlp = Mlp::new(&widths, SerdeActivation::LeakyRelu, rng);
        mlp.zero_last_layer();
        Ok(DeformationGenerator {
            feature_width,
            code_width,
            mlp,
        })
    }

    pub fn input_width(&self) -> usize {
        self.feature_width + self.code_width + 3
    }

    /// Differentiable rollout. `features` is N x F, `code` is T x d and `source` is
    /// N x 3. Returns the predicted positions of frames 1..=T.
    ///
    /// With `teacher` set (ground-truth frames 1..T), step `t` starts from the true
    /// frame `t - 1` instead of its own previous prediction.
    pub fn rollout_var(
        &self,
        g: &mut Graph,
        features: Var,
        code: Var,
        source: Var,
        teacher: Option<&[Tensor]>,
    ) -> Result<Vec<Var>> {
        let (n, f) = g.shape(features);
        let (steps, d) = g.shape(code);
        if f != self.feature_width || d != self.code_width || g.shape(source) != (n, 3) {
            return Err(Error::validation(format!(
                "generator expects features N x {}, code T x {}, source N x 3; got {n} x {f}, {steps} x {d}, {:?}",
                self.feature_width,
                self.code_width,
                g.shape(source)
            )));
        }
        if let Some(tf) = teacher {
            if tf.len() < steps.saturating_sub(1) || tf.iter().any(|t| t.shape() != (n, 3)) {
                return Err(Error::validation("teacher frames do not match the rollout"));
            }
        }
        let bound = self.mlp.bind(g);
        let layers = bound.layers();
        let act: Activation = self.mlp.hidden_act.into();
        // The first layer acts on [f, code, prev]; split it so the feature block is
        // applied once per rollout and the code block once per frame.
        let w0 = layers[0].weight;
        let wf = g.slice_rows(w0, 0, f);
        let wc = g.slice_rows(w0, f, d);
        let wp = g.slice_rows(w0, f + d, 3);
        let base = g.matmul(features, wf);
        let code_terms = g.linear(code, wc, Some(layers[0].bias), Activation::Identity);
        let mut prev = source;
        let mut out = Vec::with_capacity(steps);
        for t in 1..=steps {
            let input_prev = match (teacher, t) {
                (Some(tf), t) if t >= 2 => g.constant(tf[t - 2].clone()),
                _ => prev,
            };
            let p = g.matmul(input_prev, wp);
            let h = g.add(base, p);
            let ct = g.slice_rows(code_terms, t - 1, 1);
            let h = g.add_row(h, ct);
            let mut h = g.activation(h, act);
            for (i, l) in layers.iter().enumerate().skip(1) {
                let a = if i + 1 < layers.len() {
                    act
                } else {
                    Activation::Identity
                };
                h = l.forward(g, h, a);
            }
            let next = g.add(input_prev, h);
            if !g.value(next).is_finite() {
                return Err(Error::numerical(format!("rollout became non-finite at step {t}")));
            }
            out.push(next);
            prev = next;
        }
        Ok(out)
    }
}

impl Params for DeformationGenerator {
    fn tensors(&self) -> Vec<&Tensor> {
        self.mlp.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.mlp.tensors_mut()
    }
}

/// Rows `(f_i, code, prev_i)`.
pub fn augment(features: &Tensor, code: &[f64], prev: &Tensor) -> Result<Tensor> {
    let (n, f) = features.shape();
    if prev.shape() != (n, 3) {
        return Err(Error::validation(format!(
            "previous positions are {:?}, expected {n} x 3",
            prev.shape()
        )));
    }
    let d = code.len();
    let mut out = Tensor::zeros(n, f + d + 3);
    for i in 0..n {
        let row = out.row_mut(i);
        row[..f].copy_from_slice(features.row(i));
        row[f..f + d].copy_from_slice(code);
        row[f + d..].copy_from_slice(prev.row(i));
    }
    Ok(out)
}

/// Displacements for one augmented field.
pub fn step(augmented: &Tensor, params: &DeformationGenerator) -> Result<Tensor> {
    if augmented.cols() != params.input_width() {
        return Err(Error::validation(format!(
            "augmented field has {} columns, generator expects {}",
            augmented.cols(),
            params.input_width()
        )));
    }
    let mut g = Graph::new();
    let x = g.constant(augmented.clone());
    let m = params.mlp.bind(&mut g);
    let out = m.forward(&mut g, x);
    let v = g.value(out).clone();
    if !v.is_finite() {
        return Err(Error::numerical("generator step produced non-finite displacements"));
    }
    Ok(v)
}

/// Predicted trajectory: `positions[0]` is the source, `positions[t] =
/// positions[t-1] + displacements[t-1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationRollout {
    pub positions: Vec<Tensor>,
    pub displacements: Vec<Tensor>,
}

impl DeformationRollout {
    pub fn num_steps(&self) -> usize {
        self.displacements.len()
    }

    /// Frame `t` as a mesh with the source connectivity.
    pub fn frame(&self, source: &TriMesh, t: usize) -> Result<TriMesh> {
        source.with_vertices(self.positions[t].to_points())
    }
}

pub fn rollout(
    source: &TriMesh,
    features: &FeatureField,
    code: &MotionCode,
    params: &DeformationGenerator,
) -> Result<DeformationRollout> {
    if features.source_hash != source.content_hash() {
        return Err(Error::validation("features were extracted from a different mesh"));
    }
    let start = Tensor::from_points(source.vertices());
    if code.is_empty() {
        return Ok(DeformationRollout {
            positions: vec![start],
            displacements: Vec::new(),
        });
    }
    let (n, steps) = (source.num_vertices(), code.len());
    let (f, d) = (params.feature_width, params.code_width);
    if features.values.shape() != (n, f) || code.width() != d {
        return Err(Error::validation(format!(
            "generator expects features {n} x {f} and codes of width {d}; got {:?} and {}",
            features.values.shape(),
            code.width()
        )));
    }
    // Same arithmetic as `rollout_var` without recording a graph, so memory stays
    // at one frame of activations.
    let layers = &params.mlp.layers;
    let act: Activation = params.mlp.hidden_act.into();
    let w0 = &layers[0].weight;
    let width = w0.cols();
    let rows = |start: usize, len: usize| {
        Tensor::from_vec(len, width, w0.data()[start * width..(start + len) * width].to_vec())
    };
    let base = features.values.matmul(&rows(0, f));
    let mut code_terms = code.values.matmul(&rows(f, d));
    for r in 0..steps {
        for (o, b) in code_terms.row_mut(r).iter_mut().zip(layers[0].bias.data()) {
            *o += b;
        }
    }
    let wp = rows(f + d, 3);
    let mut positions = vec![start];
    let mut displacements = Vec::with_capacity(steps);
    for t in 1..=steps {
        let prev = positions.last().unwrap();
        let mut h = prev.matmul(&wp);
        h.add_assign(&base);
        let ct = code_terms.row(t - 1);
        for row in h.data_mut().chunks_exact_mut(width) {
            for (o, c) in row.iter_mut().zip(ct) {
                *o = act.apply(*o + c);
            }
        }
        for (i, l) in layers.iter().enumerate().skip(1) {
            let a = if i + 1 < layers.len() { act } else { Activation::Identity };
            let mut out = h.matmul(&l.weight);
            let cols = out.cols();
            for row in out.data_mut().chunks_exact_mut(cols) {
                for (o, b) in row.iter_mut().zip(l.bias.data()) {
                    *o = a.apply(*o + b);
                }
            }
            h = out;
        }
        let mut next = prev.clone();
        next.add_assign(&h);
        if !next.is_finite() {
            return Err(Error::numerical(format!("rollout became non-finite at step {t}")));
        }
        displacements.push(h);
        positions.push(next);
    }
    Ok(DeformationRollout {
        positions,
        displacements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::fixtures::icosphere;
    use crate::nn::testing::check_param_grads;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(r: usize, c: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn perturbed(g: &mut DeformationGenerator, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in g.tensors_mut() {
            for x in t.data_mut() {
                *x += rng.gen_range(-0.05..0.05);
            }
        }
    }

    fn small() -> DeformationGenerator {
        let cfg = GeneratorConfig {
            width: 8,
            hidden_layers: 2,
        };
        DeformationGenerator::new(&cfg, 4, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn augment_concatenates_rows() {
        let f = Tensor::from_vec(1, 2, vec![1.0, 2.0]);
        let prev = Tensor::from_vec(1, 3, vec![5.0, 6.0, 7.0]);
        let a = augment(&f, &[3.0, 4.0], &prev).unwrap();
        assert_eq!(a.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let z = augment(&f, &[0.0, 0.0], &prev).unwrap();
        assert_eq!(z.data(), &[1.0, 2.0, 0.0, 0.0, 5.0, 6.0, 7.0]);
        let big = augment(&random(1000, 64, 0), &[0.0; 64], &random(1000, 3, 1)).unwrap();
        assert_eq!(big.shape(), (1000, 131));
        assert!(augment(&f, &[1.0], &random(2, 3, 0)).is_err());
    }

    #[test]
    fn zero_last_layer_is_static() {
        let g = DeformationGenerator::new(
            &GeneratorConfig::default(),
            64,
            64,
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        let aug = random(50, 131, 3);
        assert!(step(&aug, &g).unwrap().data().iter().all(|&x| x == 0.0));
        let m = icosphere(1);
        let features = FeatureField {
            values: random(m.num_vertices(), 64, 4),
            source_hash: m.content_hash(),
        };
        let code = MotionCode {
            values: random(6, 64, 5),
        };
        let r = rollout(&m, &features, &code, &g).unwrap();
        assert_eq!(r.positions.len(), 7);
        assert!(r.positions.iter().all(|p| p.data() == r.positions[0].data()));
        let empty = MotionCode {
            values: Tensor::zeros(0, 64),
        };
        let r0 = rollout(&m, &features, &empty, &g).unwrap();
        assert_eq!((r0.positions.len(), r0.num_steps()), (1, 0));
    }

    #[test]
    fn split_first_layer_matches_augmented_step() {
        let mut gen = small();
        perturbed(&mut gen, 6);
        let m = icosphere(1);
        let n = m.num_vertices();
        let features = FeatureField {
            values: random(n, 4, 7),
            source_hash: m.content_hash(),
        };
        let code = MotionCode {
            values: random(4, 2, 8),
        };
        let r = rollout(&m, &features, &code, &gen).unwrap();
        let mut prev = Tensor::from_points(m.vertices());
        for t in 1..=4 {
            let delta = step(&augment(&features.values, code.values.row(t - 1), &prev).unwrap(), &gen).unwrap();
            for (a, b) in delta.data().iter().zip(r.displacements[t - 1].data()) {
                assert!((a - b).abs() < 1e-12);
            }
            prev = r.positions[t].clone();
        }
        // Telescoping.
        let mut sum = r.positions[0].clone();
        for d in &r.displacements {
            sum.add_assign(d);
        }
        for (a, b) in sum.data().iter().zip(r.positions[4].data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn permuting_vertices_permutes_rollout() {
        use rand::seq::SliceRandom;
        let mut gen = small();
        perturbed(&mut gen, 9);
        let m = icosphere(1);
        let n = m.num_vertices();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(10));
        let feats = random(n, 4, 11);
        let code = random(5, 2, 12);
        let src = Tensor::from_points(m.vertices());
        let run = |f: Tensor, s: Tensor| {
            let mut g = Graph::new();
            let fv = g.constant(f);
            let cv = g.constant(code.clone());
            let sv = g.constant(s);
            let out = gen.rollout_var(&mut g, fv, cv, sv, None).unwrap();
            out.iter().map(|v| g.value(*v).clone()).collect::<Vec<_>>()
        };
        let a = run(feats.clone(), src.clone());
        let b = run(feats.select_rows(&perm), src.select_rows(&perm));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(&x.select_rows(&perm), y);
        }
    }

    #[test]
    fn step_gradients_match_finite_differences() {
        let mut gen = small();
        perturbed(&mut gen, 13);
        let aug = random(12, 9, 14);
        check_param_grads(&mut gen, 60, 1e-5, 1e-4, 15, &|p: &DeformationGenerator| {
            let mut g = Graph::new();
            let x = g.constant(aug.clone());
            let m = p.mlp.bind(&mut g);
            let o = m.forward(&mut g, x);
            let sq = g.mul(o, o);
            let s = g.sum(sq);
            (g, s)
        });
    }

    #[test]
    fn rollout_gradients_match_finite_differences() {
        let mut gen = small();
        perturbed(&mut gen, 16);
        let feats = random(20, 4, 17);
        let code = random(5, 2, 18);
        let src = random(20, 3, 19);
        let target = random(20, 3, 20);
        check_param_grads(&mut gen, 10, 1e-5, 1e-3, 21, &|p: &DeformationGenerator| {
            let mut g = Graph::new();
            let f = g.constant(feats.clone());
            let c = g.constant(code.clone());
            let s = g.constant(src.clone());
            let tv = g.constant(target.clone());
            let frames = p.rollout_var(&mut g, f, c, s, None).unwrap();
            let mut total = None;
            for v in frames {
                let d = g.sub(v, tv);
                let sq = g.mul(d, d);
                let s = g.sum(sq);
                total = Some(match total {
                    None => s,
                    Some(acc) => g.add(acc, s),
                });
            }
            (g, total.unwrap())
        });
    }

    #[test]
    fn teacher_forcing_reads_true_previous_frame() {
        let mut gen = small();
        perturbed(&mut gen, 22);
        let feats = random(10, 4, 23);
        let code = random(3, 2, 24);
        let src = random(10, 3, 25);
        let truth: Vec<Tensor> = (0..3).map(|t| random(10, 3, 26 + t)).collect();
        let mut g = Graph::new();
        let f = g.constant(feats.clone());
        let c = g.constant(code.clone());
        let s = g.constant(src.clone());
        let out = gen.rollout_var(&mut g, f, c, s, Some(&truth)).unwrap();
        let delta = step(&augment(&feats, code.row(2), &truth[1]).unwrap(), &gen).unwrap();
        for i in 0..30 {
            let expect = truth[1].data()[i] + delta.data()[i];
            assert!((g.value(out[2]).data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn plain_rollout_matches_graph_rollout() {
        let mut gen = small();
        perturbed(&mut gen, 9);
        let mesh = icosphere(1);
        let n = mesh.num_vertices();
        let features = FeatureField {
            values: random(n, 4, 2),
            source_hash: mesh.content_hash(),
        };
        let code = MotionCode {
            values: random(5, 2, 3),
        };
        let plain = rollout(&mesh, &features, &code, &gen).unwrap();
        let mut g = Graph::new();
        let f = g.constant(features.values.clone());
        let c = g.constant(code.values.clone());
        let s = g.constant(Tensor::from_points(mesh.vertices()));
        let frames = gen.rollout_var(&mut g, f, c, s, None).unwrap();
        for (t, v) in frames.iter().enumerate() {
            assert_eq!(g.value(*v), &plain.positions[t + 1]);
        }
    }
}
