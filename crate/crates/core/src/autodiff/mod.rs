//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records every operation eagerly: values are computed when a node is
//! created and kept until the graph is dropped. [`Graph::backward`] walks the tape in
//! reverse and returns gradients for every node that depends on a parameter.
//! Operations with bespoke derivatives (spectral diffusion, mesh losses, ...) plug in
//! through the [`Function`] trait.

mod tensor;

pub use tensor::Tensor;
pub(crate) use tensor::{gemm, View};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
}

impl Activation {
    pub const LEAKY: Activation = Activation::LeakyRelu(0.01);

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
        }
    }

    /// Derivative recovered from the activation output (valid for monotone
    /// piecewise-linear activations with non-negative slope).
    #[inline]
    fn slope_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(s) => {
                if y > 0.0 {
                    1.0
                } else {
                    s
                }
            }
        }
    }
}

/// A differentiable operation with a hand-written vector-Jacobian product.
pub trait Function: Send {
    fn name(&self) -> &'static str;

    fn forward(&mut self, inputs: &[&Tensor]) -> Tensor;

    /// Gradients with respect to each input given the gradient of the output.
    /// Entries for inputs that do not need gradients may be `None`.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_output: &Tensor,
        needs_grad: &[bool],
    ) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
        act: Activation,
    },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine {
        x: Var,
        scale: f64,
    },
    Act(Var, Activation),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    RepeatRows(Var),
    MaxRows {
        x: Var,
        argmax: Vec<usize>,
    },
    Sum(Var),
    Custom {
        inputs: Vec<Var>,
        func: Box<dyn Function>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Parameters in the order they were bound.
    pub fn params(&self) -> &[Var] {
        &self.params
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A trainable leaf; its gradient is reported by [`Gradients::params`].
    pub fn param(&mut self, t: &Tensor) -> Var {
        let v = self.push(t.clone(), Op::Leaf, true);
        self.params.push(v);
        v
    }

    /// A leaf that is differentiated through but not trained (e.g. input positions
    /// under a gradient check).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// `act(x * w + b)`, with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>, act: Activation) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        assert_eq!(
            xv.cols(),
            wv.rows(),
            "linear: input width {} vs weight rows {}",
            xv.cols(),
            wv.rows()
        );
        let mut out = xv.matmul(wv);
        if let Some(b) = b {
            let bv = self.value(b);
            assert_eq!(bv.shape(), (1, out.cols()), "linear: bias shape");
            let cols = out.cols();
            for row in out.data_mut().chunks_exact_mut(cols) {
                for (o, bb) in row.iter_mut().zip(bv.data()) {
                    *o += bb;
                }
            }
        }
        if act != Activation::Identity {
            for o in out.data_mut() {
                *o = act.apply(*o);
            }
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let g = self.any_grad(&deps);
        self.push(out, Op::Linear { x, w, b, act }, g)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        let g = self.any_grad(&[a, b]);
        self.push(out, Op::MatMul(a, b), g)
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise op shape mismatch");
        Tensor::from_vec(
            av.rows(),
            av.cols(),
            av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect(),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x + y);
        let g = self.any_grad(&[a, b]);
        self.push(out, Op::Add(a, b), g)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x - y);
        let g = self.any_grad(&[a, b]);
        self.push(out, Op::Sub(a, b), g)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x * y);
        let g = self.any_grad(&[a, b]);
        self.push(out, Op::Mul(a, b), g)
    }

    /// Adds a 1 x C row to every row of an N x C matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (xv, rv) = (self.value(x), self.value(row));
        assert_eq!(rv.shape(), (1, xv.cols()), "add_row: row shape");
        let mut out = xv.clone();
        let cols = out.cols();
        for r in out.data_mut().chunks_exact_mut(cols) {
            for (o, b) in r.iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        let g = self.any_grad(&[x, row]);
        self.push(out, Op::AddRow(x, row), g)
    }

    /// `scale * x + shift`
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        let g = self.any_grad(&[x]);
        self.push(out, Op::Affine { x, scale }, g)
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Var {
        let out = self.value(x).map(|v| act.apply(v));
        let g = self.any_grad(&[x]);
        self.push(out, Op::Act(x, act), g)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let g = self.any_grad(&[x]);
        self.push(out, Op::Sigmoid(x), g)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        let g = self.any_grad(&[x]);
        self.push(out, Op::Tanh(x), g)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.value(x).map(softplus);
        let g = self.any_grad(&[x]);
        self.push(out, Op::Softplus(x), g)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, total);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols: row counts differ");
            let c = pv.cols();
            for i in 0..rows {
                out.row_mut(i)[off..off + c].copy_from_slice(pv.row(i));
            }
            off += c;
        }
        let g = self.any_grad(parts);
        self.push(out, Op::ConcatCols(parts.to_vec()), g)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.cols(), "slice_cols out of range");
        let mut out = Tensor::zeros(xv.rows(), len);
        for i in 0..xv.rows() {
            out.row_mut(i).copy_from_slice(&xv.row(i)[start..start + len]);
        }
        let g = self.any_grad(&[x]);
        self.push(out, Op::SliceCols { x, start }, g)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows: column counts differ");
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        let g = self.any_grad(parts);
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), g)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.rows(), "slice_rows out of range");
        let c = xv.cols();
        let out = Tensor::from_vec(len, c, xv.data()[start * c..(start + len) * c].to_vec());
        let g = self.any_grad(&[x]);
        self.push(out, Op::SliceRows { x, start }, g)
    }

    /// Tiles a 1 x C row into an n x C matrix.
    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rows(), 1, "repeat_rows expects a single row");
        let mut data = Vec::with_capacity(n * xv.cols());
        for _ in 0..n {
            data.extend_from_slice(xv.data());
        }
        let out = Tensor::from_vec(n, xv.cols(), data);
        let g = self.any_grad(&[x]);
        self.push(out, Op::RepeatRows(x), g)
    }

    /// Column-wise maximum over rows (N x C -> 1 x C).
    pub fn max_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        assert!(xv.rows() > 0, "max over zero rows");
        let c = xv.cols();
        let mut best = xv.row(0).to_vec();
        let mut argmax = vec![0usize; c];
        for i in 1..xv.rows() {
            for (j, &v) in xv.row(i).iter().enumerate() {
                if v > best[j] {
                    best[j] = v;
                    argmax[j] = i;
                }
            }
        }
        let g = self.any_grad(&[x]);
        self.push(Tensor::row_vector(best), Op::MaxRows { x, argmax }, g)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let g = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), g)
    }

    pub fn custom(&mut self, inputs: &[Var], mut func: Box<dyn Function>) -> Var {
        let out = {
            let vals: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
            func.forward(&vals)
        };
        let g = self.any_grad(inputs);
        self.push(
            out,
            Op::Custom {
                inputs: inputs.to_vec(),
                func,
            },
            g,
        )
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.shape(output), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        debug_assert_eq!(g.shape(), self.nodes[v.0].value.shape());
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn accumulate_with(
        &self,
        grads: &mut [Option<Tensor>],
        v: Var,
        f: impl FnOnce(&mut Tensor),
    ) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            let (r, c) = self.nodes[v.0].value.shape();
            *slot = Some(Tensor::zeros(r, c));
        }
        f(slot.as_mut().unwrap());
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b, act } => {
                let mut gp = g.clone();
                if *act != Activation::Identity {
                    for (gv, &y) in gp.data_mut().iter_mut().zip(out.data()) {
                        *gv *= act.slope_from_output(y);
                    }
                }
                let (xv, wv) = (self.value(*x), self.value(*w));
                if self.needs_grad(*x) {
                    let gv = gp.clone();
                    self.accumulate_with(grads, *x, |acc| {
                        gemm(
                            gv.rows(),
                            gv.cols(),
                            wv.rows(),
                            View::normal(&gv),
                            View::transposed(wv),
                            acc,
                            1.0,
                        )
                    });
                }
                if self.needs_grad(*w) {
                    self.accumulate_with(grads, *w, |acc| {
                        gemm(
                            xv.cols(),
                            xv.rows(),
                            gp.cols(),
                            View::transposed(xv),
                            View::normal(&gp),
                            acc,
                            1.0,
                        )
                    });
                }
                if let Some(b) = b {
                    if self.needs_grad(*b) {
                        let mut s = vec![0.0; gp.cols()];
                        for r in gp.data().chunks_exact(gp.cols()) {
                            for (a, v) in s.iter_mut().zip(r) {
                                *a += v;
                            }
                        }
                        self.accumulate(grads, *b, Tensor::row_vector(s));
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs_grad(*a) {
                    self.accumulate(grads, *a, g.matmul_nt(bv));
                }
                if self.needs_grad(*b) {
                    self.accumulate(grads, *b, av.matmul_tn(g));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs_grad(*a) {
                    self.accumulate(grads, *a, elementwise(g, bv, |x, y| x * y));
                }
                if self.needs_grad(*b) {
                    self.accumulate(grads, *b, elementwise(g, av, |x, y| x * y));
                }
            }
            Op::AddRow(x, row) => {
                self.accumulate(grads, *x, g.clone());
                if self.needs_grad(*row) {
                    let mut s = vec![0.0; g.cols()];
                    for r in g.data().chunks_exact(g.cols()) {
                        for (a, v) in s.iter_mut().zip(r) {
                            *a += v;
                        }
                    }
                    self.accumulate(grads, *row, Tensor::row_vector(s));
                }
            }
            Op::Affine { x, scale } => {
                let s = *scale;
                self.accumulate(grads, *x, g.map(|v| v * s));
            }
            Op::Act(x, act) => {
                self.accumulate(
                    grads,
                    *x,
                    elementwise(g, out, |gv, y| gv * act.slope_from_output(y)),
                );
            }
            Op::Sigmoid(x) => {
                self.accumulate(grads, *x, elementwise(g, out, |gv, y| gv * y * (1.0 - y)));
            }
            Op::Tanh(x) => {
                self.accumulate(grads, *x, elementwise(g, out, |gv, y| gv * (1.0 - y * y)));
            }
            Op::Softplus(x) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, elementwise(g, xv, |gv, v| gv * sigmoid(v)));
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if self.needs_grad(p) {
                        let mut gp = Tensor::zeros(g.rows(), c);
                        for i in 0..g.rows() {
                            gp.row_mut(i).copy_from_slice(&g.row(i)[off..off + c]);
                        }
                        self.accumulate(grads, p, gp);
                    }
                    off += c;
                }
            }
            Op::SliceCols { x, start } => {
                let start = *start;
                let len = g.cols();
                self.accumulate_with(grads, *x, |acc| {
                    for i in 0..g.rows() {
                        for (a, v) in acc.row_mut(i)[start..start + len].iter_mut().zip(g.row(i)) {
                            *a += v;
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                let c = g.cols();
                for &p in parts {
                    let r = self.value(p).rows();
                    if self.needs_grad(p) {
                        let gp = Tensor::from_vec(r, c, g.data()[off * c..(off + r) * c].to_vec());
                        self.accumulate(grads, p, gp);
                    }
                    off += r;
                }
            }
            Op::SliceRows { x, start } => {
                let c = g.cols();
                let start = *start;
                self.accumulate_with(grads, *x, |acc| {
                    for (a, v) in acc.data_mut()[start * c..start * c + g.len()]
                        .iter_mut()
                        .zip(g.data())
                    {
                        *a += v;
                    }
                });
            }
            Op::RepeatRows(x) => {
                if self.needs_grad(*x) {
                    let mut s = vec![0.0; g.cols()];
                    for r in g.data().chunks_exact(g.cols()) {
                        for (a, v) in s.iter_mut().zip(r) {
                            *a += v;
                        }
                    }
                    self.accumulate(grads, *x, Tensor::row_vector(s));
                }
            }
            Op::MaxRows { x, argmax } => {
                self.accumulate_with(grads, *x, |acc| {
                    for (j, &i) in argmax.iter().enumerate() {
                        let c = acc.cols();
                        acc.data_mut()[i * c + j] += g.data()[j];
                    }
                });
            }
            Op::Sum(x) => {
                let (r, c) = self.shape(*x);
                self.accumulate(grads, *x, Tensor::filled(r, c, g.item()));
            }
            Op::Custom { inputs, func } => {
                let vals: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let needs: Vec<bool> = inputs.iter().map(|&v| self.needs_grad(v)).collect();
                let gs = func.backward(&vals, out, g, &needs);
                assert_eq!(gs.len(), inputs.len(), "{}: wrong gradient count", func.name());
                for (&v, gi) in inputs.iter().zip(gs) {
                    if let Some(gi) = gi {
                        self.accumulate(grads, v, gi);
                    }
                }
            }
        }
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_vec(
        a.rows(),
        a.cols(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for positive arguments.
pub fn softplus_inv(y: f64) -> f64 {
    assert!(y > 0.0);
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros shaped like its value.
    pub fn get_or_zeros(&self, g: &Graph, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| {
            let (r, c) = g.shape(v);
            Tensor::zeros(r, c)
        })
    }

    /// Gradients of all bound parameters, in binding order.
    pub fn params(&self, g: &Graph) -> Vec<Tensor> {
        g.params().iter().map(|&v| self.get_or_zeros(g, v)).collect()
    }
}
