//! Trainable building blocks: dense layers, perceptrons and a bidirectional GRU stack.
//!
//! Each module owns its weights as plain [`Tensor`]s and is bound into a [`Graph`]
//! per forward pass. `bind` registers parameters in exactly the order returned by
//! `tensors`, which is the order optimizers and gradients use.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Graph, Tensor, Var};

/// Anything that owns trainable tensors.
pub trait Params {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect(),
    )
}

/// `y = x W + b` with `W` stored as (in x out).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    /// Uniform init in `±1/sqrt(fan_in)` for weights and bias.
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Linear {
            weight: uniform(input, output, bound, rng),
            bias: uniform(1, output, bound, rng),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Tensor::zeros(input, output),
            bias: Tensor::zeros(1, output),
        }
    }

    pub fn input_width(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_width(&self) -> usize {
        self.weight.cols()
    }

    pub fn bind(&self, g: &mut Graph) -> BoundLinear {
        BoundLinear {
            weight: g.param(&self.weight),
            bias: g.param(&self.bias),
        }
    }
}

impl BoundLinear {
    pub fn forward(&self, g: &mut Graph, x: Var, act: Activation) -> Var {
        g.linear(x, self.weight, Some(self.bias), act)
    }
}

impl Params for Linear {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Row-wise perceptron. Hidden layers use `hidden_act`; the last layer is linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden_act: SerdeActivation,
}

/// Serializable mirror of [`Activation`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SerdeActivation {
    Relu,
    LeakyRelu,
}

impl From<SerdeActivation> for Activation {
    fn from(a: SerdeActivation) -> Self {
        match a {
            SerdeActivation::Relu => Activation::Relu,
            SerdeActivation::LeakyRelu => Activation::LEAKY,
        }
    }
}

pub struct BoundMlp {
    layers: Vec<BoundLinear>,
    act: Activation,
}

impl Mlp {
    /// `widths` lists every layer boundary, e.g. `[in, h, h, out]` gives three layers.
    pub fn new(widths: &[usize], hidden_act: SerdeActivation, rng: &mut impl Rng) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        Mlp {
            layers: widths
                .windows(2)
                .map(|w| Linear::new(w[0], w[1], rng))
                .collect(),
            hidden_act,
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().output_width()
    }

    pub fn zero_last_layer(&mut self) {
        let last = self.layers.last_mut().unwrap();
        *last = Linear::zeros(last.input_width(), last.output_width());
    }

    pub fn bind(&self, g: &mut Graph) -> BoundMlp {
        BoundMlp {
            layers: self.layers.iter().map(|l| l.bind(g)).collect(),
            act: self.hidden_act.into(),
        }
    }
}

impl BoundMlp {
    pub fn forward(&self, g: &mut Graph, mut x: Var) -> Var {
        let n = self.layers.len();
        for (i, l) in self.layers.iter().enumerate() {
            let act = if i + 1 < n {
                self.act
            } else {
                Activation::Identity
            };
            x = l.forward(g, x, act);
        }
        x
    }

    pub fn layers(&self) -> &[BoundLinear] {
        &self.layers
    }
}

impl Params for Mlp {
    fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }
}

/// One direction of one GRU layer. Gate order in the stacked weights is
/// reset, update, candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub b_ih: Tensor,
    pub b_hh: Tensor,
}

struct BoundGruCell {
    w_ih: Var,
    w_hh: Var,
    b_ih: Var,
    b_hh: Var,
    hidden: usize,
}

impl GruCell {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        GruCell {
            w_ih: uniform(input, 3 * hidden, bound, rng),
            w_hh: uniform(hidden, 3 * hidden, bound, rng),
            b_ih: uniform(1, 3 * hidden, bound, rng),
            b_hh: uniform(1, 3 * hidden, bound, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.rows()
    }

    fn bind(&self, g: &mut Graph) -> BoundGruCell {
        BoundGruCell {
            w_ih: g.param(&self.w_ih),
            w_hh: g.param(&self.w_hh),
            b_ih: g.param(&self.b_ih),
            b_hh: g.param(&self.b_hh),
            hidden: self.hidden(),
        }
    }
}

impl Params for GruCell {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w_ih, &self.w_hh, &self.b_ih, &self.b_hh]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.b_ih, &mut self.b_hh]
    }
}

impl BoundGruCell {
    /// Runs the cell over the rows of `gi` (precomputed input projections) in the
    /// given order, starting from a zero state. Returns one hidden row per step,
    /// indexed like the input rows.
    fn run(&self, g: &mut Graph, gi: Var, order: impl Iterator<Item = usize>) -> Vec<Var> {
        let h_dim = self.hidden;
        let steps = g.shape(gi).0;
        let mut h = g.constant(Tensor::zeros(1, h_dim));
        let mut out = vec![h; steps];
        for t in order {
            let gi_t = g.slice_rows(gi, t, 1);
            let gh = g.linear(h, self.w_hh, Some(self.b_hh), Activation::Identity);
            let (i_r, i_z, i_n) = (
                g.slice_cols(gi_t, 0, h_dim),
                g.slice_cols(gi_t, h_dim, h_dim),
                g.slice_cols(gi_t, 2 * h_dim, h_dim),
            );
            let (h_r, h_z, h_n) = (
                g.slice_cols(gh, 0, h_dim),
                g.slice_cols(gh, h_dim, h_dim),
                g.slice_cols(gh, 2 * h_dim, h_dim),
            );
            let r = g.add(i_r, h_r);
            let r = g.sigmoid(r);
            let z = g.add(i_z, h_z);
            let z = g.sigmoid(z);
            let rn = g.mul(r, h_n);
            let n = g.add(i_n, rn);
            let n = g.tanh(n);
            // h' = n + z * (h - n)
            let d = g.sub(h, n);
            let zd = g.mul(z, d);
            h = g.add(n, zd);
            out[t] = h;
        }
        out
    }
}

/// Stack of bidirectional GRU layers. Each layer's output is the per-step
/// concatenation of the forward and backward hidden states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiGru {
    pub layers: Vec<[GruCell; 2]>,
}

impl BiGru {
    pub fn new(input: usize, hidden: usize, num_layers: usize, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let w = if l == 0 { input } else { 2 * hidden };
            layers.push([GruCell::new(w, hidden, rng), GruCell::new(w, hidden, rng)]);
        }
        BiGru { layers }
    }

    pub fn hidden(&self) -> usize {
        self.layers[0][0].hidden()
    }

    pub fn output_width(&self) -> usize {
        2 * self.hidden()
    }

    /// `x` is T x input; the result is T x (2 * hidden).
    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let bound: Vec<[BoundGruCell; 2]> = self
            .layers
            .iter()
            .map(|[f, b]| [f.bind(g), b.bind(g)])
            .collect();
        let steps = g.shape(x).0;
        let mut input = x;
        for [fwd, bwd] in &bound {
            let gi_f = g.linear(input, fwd.w_ih, Some(fwd.b_ih), Activation::Identity);
            let gi_b = g.linear(input, bwd.w_ih, Some(bwd.b_ih), Activation::Identity);
            let hf = fwd.run(g, gi_f, 0..steps);
            let hb = bwd.run(g, gi_b, (0..steps).rev());
            let fwd_seq = g.concat_rows(&hf);
            let bwd_seq = g.concat_rows(&hb);
            input = g.concat_cols(&[fwd_seq, bwd_seq]);
        }
        input
    }
}

impl Params for BiGru {
    fn tensors(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|pair| pair.iter().flat_map(|c| c.tensors()))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|pair| pair.iter_mut().flat_map(|c| c.tensors_mut()))
            .collect()
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    /// Relative error between an analytic and a central-difference derivative.
    pub fn rel_err(a: f64, n: f64) -> f64 {
        (a - n).abs() / (a.abs().max(n.abs())).max(1e-8)
    }

    /// Checks `d loss / d param` for `count` randomly chosen scalar parameters.
    /// `loss` runs a fresh forward pass and returns the graph, the loss node and
    /// the ordered parameter list as bound.
    pub fn check_param_grads<M: Params>(
        model: &mut M,
        count: usize,
        h: f64,
        tol: f64,
        seed: u64,
        loss: &dyn Fn(&M) -> (Graph, Var),
    ) {
        use rand::SeedableRng;
        let (g, out) = loss(model);
        let grads = g.backward(out).params(&g);
        let sizes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
        assert_eq!(grads.len(), sizes.len(), "bound parameter count");
        for (gr, &s) in grads.iter().zip(&sizes) {
            assert_eq!(gr.len(), s, "bound parameter order differs from tensors()");
        }
        let total: usize = sizes.iter().sum();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..count {
            let mut flat = rng.gen_range(0..total);
            let mut ti = 0;
            while flat >= sizes[ti] {
                flat -= sizes[ti];
                ti += 1;
            }
            let analytic = grads[ti].data()[flat];
            let orig = model.tensors()[ti].data()[flat];
            model.tensors_mut()[ti].data_mut()[flat] = orig + h;
            let (gp, op) = loss(model);
            let lp = gp.value(op).item();
            model.tensors_mut()[ti].data_mut()[flat] = orig - h;
            let (gm, om) = loss(model);
            let lm = gm.value(om).item();
            model.tensors_mut()[ti].data_mut()[flat] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            // Entries with negligible sensitivity are dominated by rounding noise.
            if analytic.abs().max(numeric.abs()) < 1e-7 {
                continue;
            }
            let e = rel_err(analytic, numeric);
            worst = worst.max(e);
            assert!(
                e < tol,
                "tensor {ti} entry {flat}: analytic {analytic:e} numeric {numeric:e} rel {e:e}"
            );
        }
        assert!(worst.is_finite());
    }
}
