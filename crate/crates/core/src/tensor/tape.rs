use super::kernels::{self, BnLayout, ConvGeom};
use super::{matmul_dims, Float, Tensor};
use crate::error::{Error, Result};

/// Variance stabilizer for batch normalization.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the current batch in the running-statistics average.
pub const BN_MOMENTUM: f64 = 0.1;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary<T> {
    Exp,
    Log,
    Relu,
    LeakyRelu(T),
    Sigmoid,
    Tanh,
    Square,
    Abs,
    Neg,
    Scale(T),
    Shift(T),
    /// Gradient passes only where `lo ≤ x ≤ hi`.
    Clamp(T, T),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchNormMode {
    /// Normalize with batch statistics and update the running averages.
    Train,
    /// Normalize with the running averages.
    Eval,
}

/// Running mean/variance of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Float> BatchNormStats<T> {
    pub fn new(channels: usize) -> Self {
        Self { mean: Tensor::zeros(&[channels]), var: Tensor::ones(&[channels]) }
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Unary(Unary<T>, Var),
    Binary(Binary, Var, Var),
    Reduce { kind: Reduce, input: Var, map: Vec<usize> },
    Reshape(Var),
    Conv2d { input: Var, kernel: Var, bias: Option<Var>, geom: ConvGeom },
    Upsample { input: Var, factor: usize },
    BatchNorm { input: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// An append-only record of operations. Recording order is a topological
/// order, so [`Tape::backward`] simply walks the nodes in reverse.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, requires_grad, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn tracks(&self, inputs: &[Var]) -> bool {
        inputs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = self.tracks(inputs);
        self.nodes.push(Node { value, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn finite(&self, what: &str, data: &[T]) -> Result<()> {
        if data.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NumericDomain(format!("{what} produced a non-finite value")))
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n) = matmul_dims(self.shape(a), self.shape(b))?;
        let mut out = vec![T::zero(); m * n];
        T::gemm(false, false, m, n, k, T::one(), self.value(a).data(), self.value(b).data(), T::zero(), &mut out);
        self.finite("matmul", &out)?;
        let value = Tensor::new(&[m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn unary(&mut self, kind: Unary<T>, x: Var) -> Result<Var> {
        let input = self.value(x);
        let data: Vec<T> = input.data().iter().map(|&v| unary_forward(kind, v)).collect();
        self.finite(&format!("{kind:?}"), &data)?;
        let value = Tensor::new(input.shape(), data)?;
        Ok(self.push(value, Op::Unary(kind, x), &[x]))
    }

    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(va.shape(), vb.shape())?;
        let numel: usize = shape.iter().product();
        let at = |i: usize| va.data()[if va.rank() == 0 { 0 } else { i }];
        let bt = |i: usize| vb.data()[if vb.rank() == 0 { 0 } else { i }];
        let f = |x: T, y: T| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let data: Vec<T> = (0..numel).map(|i| f(at(i), bt(i))).collect();
        self.finite(&format!("{kind:?}"), &data)?;
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(value, Op::Binary(kind, a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Relu, x)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary(Unary::LeakyRelu(T::of(slope)), x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Log, x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Square, x)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(Unary::Scale(T::of(c)), x)
    }

    /// Reduces over `axes`, dropping them from the shape. Reducing every axis
    /// yields a scalar.
    pub fn reduce(&mut self, kind: Reduce, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut reduced = vec![false; shape.len()];
        for &a in axes {
            if a >= shape.len() || reduced[a] {
                return Err(Error::dim(format!("invalid reduction axes {axes:?} for shape {shape:?}")));
            }
            reduced[a] = true;
        }
        let out_shape: Vec<usize> = shape.iter().zip(&reduced).filter(|(_, &r)| !r).map(|(&d, _)| d).collect();
        let out_numel: usize = out_shape.iter().product();
        let count = self.value(x).numel() / out_numel;
        let map = reduction_map(&shape, &reduced);
        let mut out = vec![T::zero(); out_numel];
        for (&v, &o) in self.value(x).data().iter().zip(&map) {
            out[o] = out[o] + v;
        }
        if kind == Reduce::Mean {
            let c = T::of(count as f64);
            out.iter_mut().for_each(|v| *v = *v / c);
        }
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.push(value, Op::Reduce { kind, input: x, map }, &[x]))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.reduce(Reduce::Sum, x, &axes)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.reduce(Reduce::Mean, x, &axes)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Zero-padded cross-correlation. `bias`, when given, has one entry per
    /// output channel.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(input), self.shape(kernel), stride, padding)?;
        if let Some(b) = bias {
            if self.value(b).numel() != geom.cout {
                return Err(Error::dim(format!("conv2d bias {:?} needs {} entries", self.shape(b), geom.cout)));
            }
        }
        let out = kernels::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(&[geom.batch, geom.cout, geom.ho, geom.wo], out)?;
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        Ok(self.push(value, Op::Conv2d { input, kernel, bias, geom }, &inputs))
    }

    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::param("upsampling factor must be ≥ 1"));
        }
        let shape = self.shape(input).to_vec();
        let [b, c, h, w] = shape[..] else {
            return Err(Error::dim(format!("upsample_nearest expects B×C×H×W, got {shape:?}")));
        };
        let out = kernels::upsample_forward(&shape, self.value(input).data(), factor);
        let value = Tensor::new(&[b, c, h * factor, w * factor], out)?;
        Ok(self.push(value, Op::Upsample { input, factor }, &[input]))
    }

    /// Batch normalization over a `B×F` or `B×C×H×W` input with per-feature
    /// (per-channel) `gamma` and `beta`.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats<T>,
        mode: BatchNormMode,
    ) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let layout = BnLayout::of(&shape)?;
        let c = layout.channels;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).numel() != c {
                return Err(Error::dim(format!("batch_norm {name} {:?} needs {c} entries", self.shape(v))));
            }
        }
        if stats.mean.numel() != c || stats.var.numel() != c {
            return Err(Error::dim(format!("batch_norm running statistics need {c} entries")));
        }
        let x = self.value(input).data();
        let eps = T::of(BN_EPS);
        let (mean, var) = match mode {
            BatchNormMode::Train => {
                if layout.count() < 2 || layout.outer < 2 {
                    return Err(Error::param(format!("batch_norm in training mode needs a batch of at least 2, got {}", layout.outer)));
                }
                let n = T::of(layout.count() as f64);
                let mean: Vec<T> = layout.channel_sums(|i| x[i]).into_iter().map(|s| s / n).collect();
                let mut var = vec![T::zero(); c];
                layout.for_each(|ch, i| {
                    let d = x[i] - mean[ch];
                    var[ch] = var[ch] + d * d;
                });
                var.iter_mut().for_each(|v| *v = *v / n);
                let m = T::of(BN_MOMENTUM);
                let unbias = n / (n - T::one());
                for ch in 0..c {
                    let rm = &mut stats.mean.data_mut()[ch];
                    *rm = (T::one() - m) * *rm + m * mean[ch];
                    let rv = &mut stats.var.data_mut()[ch];
                    *rv = (T::one() - m) * *rv + m * var[ch] * unbias;
                }
                (mean, var)
            }
            BatchNormMode::Eval => (stats.mean.data().to_vec(), stats.var.data().to_vec()),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); x.len()];
        let mut y = vec![T::zero(); x.len()];
        layout.for_each(|ch, i| {
            xhat[i] = (x[i] - mean[ch]) * inv_std[ch];
            y[i] = g[ch] * xhat[i] + b[ch];
        });
        self.finite("batch_norm", &y)?;
        let value = Tensor::new(&shape, y)?;
        let op = Op::BatchNorm { input, gamma, beta, xhat, inv_std, batch_stats: mode == BatchNormMode::Train };
        Ok(self.push(value, op, &[input, gamma, beta]))
    }

    /// Propagates gradients from a one-element `loss` back through every
    /// recorded operation, visiting each once in reverse recording order.
    /// Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads, shapes: self.shapes() });
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(node, &dy, &mut grads);
        }
        let shapes = self.shapes();
        Ok(Gradients { grads, shapes })
    }

    fn shapes(&self) -> Vec<Vec<usize>> {
        self.nodes.iter().map(|n| n.value.shape().to_vec()).collect()
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, contribution: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.iter_mut().zip(contribution).for_each(|(a, b)| *a = *a + b),
            slot => *slot = Some(contribution),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = matmul_dims(va.shape(), vb.shape()).expect("checked in forward");
                if self.needs(*a) {
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(false, true, m, k, n, T::one(), dy, vb.data(), T::zero(), &mut da);
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = vec![T::zero(); k * n];
                    T::gemm(true, false, k, n, m, T::one(), va.data(), dy, T::zero(), &mut db);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Unary(kind, x) => {
                let xs = self.value(*x).data();
                let ys = node.value.data();
                let dx = dy
                    .iter()
                    .zip(xs.iter().zip(ys))
                    .map(|(&g, (&xv, &yv))| g * unary_derivative(*kind, xv, yv))
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Binary(kind, a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let at = |i: usize| va.data()[if va.rank() == 0 { 0 } else { i }];
                let bt = |i: usize| vb.data()[if vb.rank() == 0 { 0 } else { i }];
                let n = dy.len();
                if self.needs(*a) {
                    let da: Vec<T> = (0..n)
                        .map(|i| match kind {
                            Binary::Add | Binary::Sub => dy[i],
                            Binary::Mul => dy[i] * bt(i),
                            Binary::Div => dy[i] / bt(i),
                        })
                        .collect();
                    self.accumulate(grads, *a, collapse(da, va.rank() == 0));
                }
                if self.needs(*b) {
                    let db: Vec<T> = (0..n)
                        .map(|i| match kind {
                            Binary::Add => dy[i],
                            Binary::Sub => -dy[i],
                            Binary::Mul => dy[i] * at(i),
                            Binary::Div => -dy[i] * at(i) / (bt(i) * bt(i)),
                        })
                        .collect();
                    self.accumulate(grads, *b, collapse(db, vb.rank() == 0));
                }
            }
            Op::Reduce { kind, input, map } => {
                let scale = match kind {
                    Reduce::Sum => T::one(),
                    Reduce::Mean => T::of(dy.len() as f64) / T::of(map.len() as f64),
                };
                let dx = map.iter().map(|&o| dy[o] * scale).collect();
                self.accumulate(grads, *input, dx);
            }
            Op::Reshape(x) => self.accumulate(grads, *x, dy.to_vec()),
            Op::Conv2d { input, kernel, bias, geom } => {
                let want = (self.needs(*input), self.needs(*kernel), bias.is_some_and(|b| self.needs(b)));
                let (dx, dk, db) = kernels::conv2d_backward(
                    geom,
                    self.value(*input).data(),
                    self.value(*kernel).data(),
                    dy,
                    want,
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, *input, dx);
                }
                if let Some(dk) = dk {
                    self.accumulate(grads, *kernel, dk);
                }
                if let (Some(db), Some(b)) = (db, bias) {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Upsample { input, factor } => {
                let dx = kernels::upsample_backward(self.shape(*input), dy, *factor);
                self.accumulate(grads, *input, dx);
            }
            Op::BatchNorm { input, gamma, beta, xhat, inv_std, batch_stats } => {
                let layout = BnLayout::of(node.value.shape()).expect("checked in forward");
                let g = self.value(*gamma).data();
                let dbeta = layout.channel_sums(|i| dy[i]);
                let dgamma = layout.channel_sums(|i| dy[i] * xhat[i]);
                if self.needs(*input) {
                    let mut dx = vec![T::zero(); dy.len()];
                    if *batch_stats {
                        let n = T::of(layout.count() as f64);
                        layout.for_each(|c, i| {
                            let dxhat = dy[i] * g[c];
                            let mean_dxhat = dbeta[c] * g[c] / n;
                            let mean_dxhat_xhat = dgamma[c] * g[c] / n;
                            dx[i] = inv_std[c] * (dxhat - mean_dxhat - xhat[i] * mean_dxhat_xhat);
                        });
                    } else {
                        layout.for_each(|c, i| dx[i] = dy[i] * g[c] * inv_std[c]);
                    }
                    self.accumulate(grads, *input, dx);
                }
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
        }
    }
}

/// Gradients produced by [`Tape::backward`], retained for leaves.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Float> Gradients<T> {
    /// Gradient of the loss with respect to `v`, or `None` if `v` does not
    /// require gradients or the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(&self.shapes[v.0], g.clone()).expect("gradient matches value shape"))
    }

    /// Like [`Gradients::get`] but substitutes zeros for an absent gradient.
    pub fn get_or_zeros(&self, v: Var) -> Tensor<T> {
        self.get(v).unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn unary_forward<T: Float>(kind: Unary<T>, x: T) -> T {
    match kind {
        Unary::Exp => x.exp(),
        Unary::Log => x.ln(),
        Unary::Relu => x.max(T::zero()),
        Unary::LeakyRelu(s) => {
            if x > T::zero() {
                x
            } else {
                s * x
            }
        }
        Unary::Sigmoid => sigmoid(x),
        Unary::Tanh => x.tanh(),
        Unary::Square => x * x,
        Unary::Abs => x.abs(),
        Unary::Neg => -x,
        Unary::Scale(c) => c * x,
        Unary::Shift(c) => x + c,
        Unary::Clamp(lo, hi) => x.max(lo).min(hi),
    }
}

fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Derivative of a unary op at input `x` with output `y`.
fn unary_derivative<T: Float>(kind: Unary<T>, x: T, y: T) -> T {
    let zero = T::zero();
    let one = T::one();
    match kind {
        Unary::Exp => y,
        Unary::Log => one / x,
        Unary::Relu => {
            if x > zero {
                one
            } else {
                zero
            }
        }
        Unary::LeakyRelu(s) => {
            if x > zero {
                one
            } else {
                s
            }
        }
        Unary::Sigmoid => y * (one - y),
        Unary::Tanh => one - y * y,
        Unary::Square => x + x,
        Unary::Abs => {
            if x > zero {
                one
            } else if x < zero {
                -one
            } else {
                zero
            }
        }
        Unary::Neg => -one,
        Unary::Scale(c) => c,
        Unary::Shift(_) => one,
        Unary::Clamp(lo, hi) => {
            if x >= lo && x <= hi {
                one
            } else {
                zero
            }
        }
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b || b.is_empty() {
        Ok(a.to_vec())
    } else if a.is_empty() {
        Ok(b.to_vec())
    } else {
        Err(Error::dim(format!("shapes {a:?} and {b:?} are not broadcastable")))
    }
}

fn collapse<T: Float>(g: Vec<T>, to_scalar: bool) -> Vec<T> {
    if to_scalar {
        vec![g.into_iter().sum()]
    } else {
        g
    }
}

/// For every input element, the flat index of the output element it reduces into.
fn reduction_map(shape: &[usize], reduced: &[bool]) -> Vec<usize> {
    let numel: usize = shape.iter().product();
    let mut out_strides = vec![0usize; shape.len()];
    let mut stride = 1;
    for ax in (0..shape.len()).rev() {
        if !reduced[ax] {
            out_strides[ax] = stride;
            stride *= shape[ax];
        }
    }
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..numel {
        map.push(idx.iter().zip(&out_strides).map(|(i, s)| i * s).sum());
        for ax in (0..shape.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    map
}
