//! Define-by-run reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s in insertion
//! order, which is also a valid topological order. [`Graph::backward`] walks
//! the record in reverse, accumulating gradients over fan-out. The only
//! non-smooth operation is [`Graph::spike`], whose backward pass uses a
//! rectangular surrogate window.

mod gradcheck;
pub mod kernels;

pub use gradcheck::{grad_check, GradCheckReport};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use kernels::ConvGeom;

/// Epsilon added to the variance inside batch normalization.
pub const BN_EPS: f32 = 1e-5;

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Heaviside spike with a rectangular surrogate derivative of height `1/width`
/// on `|u - threshold| < width / 2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurrogateSpec {
    pub width: f32,
    pub threshold: f32,
}

impl SurrogateSpec {
    pub fn new(width: f32, threshold: f32) -> Result<Self> {
        if !(width > 0.0) || !width.is_finite() {
            return Err(Error::invalid(format!("surrogate width must be > 0, got {width}")));
        }
        Ok(Self { width, threshold })
    }

    #[inline]
    pub fn fire<T: Real>(&self, u: T) -> T {
        if u >= T::of(self.threshold as f64) {
            T::one()
        } else {
            T::zero()
        }
    }

    #[inline]
    pub fn derivative<T: Real>(&self, u: T) -> T {
        let w = T::of(self.width as f64);
        if (u - T::of(self.threshold as f64)).abs() < w * T::of(0.5) {
            w.recip()
        } else {
            T::zero()
        }
    }
}

/// Normalization statistics source for [`Graph::batchnorm`].
#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a, T: Real = f32> {
    /// Use batch statistics over every non-channel axis.
    Train,
    /// Use the supplied running statistics.
    Eval { mean: &'a [T], var: &'a [T] },
}

/// Per-channel batch statistics observed in training mode. `var` is the
/// unbiased estimate, ready for a running-average update.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T: Real = f32> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug)]
enum Op<T: Real> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: T },
    Conv2d { x: Var, w: Var, geom: ConvGeom },
    Linear { x: Var, w: Var, b: Option<Var>, n: usize, d: usize, e: usize },
    AddChannelBias { x: Var, b: Var },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    Spike { u: Var, spec: SurrogateSpec },
    Silu(Var),
    Rows { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    ScaleTime { x: Var, p: Var, steps: usize },
    AddSampleChannel { x: Var, e: Var, steps: usize },
    Upsample2x(Var),
    MeanTime { x: Var, steps: usize },
    ReplicateTime { x: Var, steps: usize },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
}

#[derive(Debug)]
struct Node<T: Real> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Gradients of a scalar with respect to every leaf that requires them.
#[derive(Debug, Clone)]
pub struct Gradients<T: Real = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Operation record for one forward pass.
#[derive(Debug)]
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    released: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self {
            nodes: Vec::new(),
            released: false,
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Real> Graph<T> {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        if cfg!(debug_assertions)
            && inputs.iter().all(|v| self.nodes[v.0].value.is_finite())
        {
            debug_assert!(
                value.is_finite(),
                "non-finite output from {op:?} on finite inputs"
            );
        }
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), out, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), out, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), out, &[a, b]))
    }

    /// `scale · x + shift`
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        self.push(Op::Affine { x, scale }, out, &[x])
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        self.affine(x, factor, T::zero())
    }

    /// Cross-correlation of `[N,C,H,W]` with `[Co,C,k,k]`, no bias.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), stride, padding)?;
        let out = kernels::conv2d_forward(self.value(x).data(), self.value(w).data(), &geom);
        let out = Tensor::new(geom.out_shape(), out)?;
        Ok(self.push(Op::Conv2d { x, w, geom }, out, &[x, w]))
    }

    /// `x[N,D] · w[D,E] + b[E]`
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = kernels::linear(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let (n, d, e) = (self.shape(x)[0], self.shape(x)[1], self.shape(w)[1]);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(Op::Linear { x, w, b, n, d, e }, out, &inputs))
    }

    /// Adds `b[C]` along axis 1 of `x[N,C,...]`.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (outer, ch, inner) = channel_split(self.shape(x))?;
        if self.shape(b) != [ch] {
            return Err(Error::shape(format!(
                "channel bias {:?} does not match {ch} channels",
                self.shape(b)
            )));
        }
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += bias[(i / inner) % ch];
        }
        debug_assert_eq!(out.len(), outer * ch * inner);
        Ok(self.push(Op::AddChannelBias { x, b }, out, &[x, b]))
    }

    /// Batch normalization over every axis except axis 1.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let (outer, ch, inner) = channel_split(self.shape(x))?;
        if self.shape(gamma) != [ch] || self.shape(beta) != [ch] {
            return Err(Error::shape(format!(
                "batchnorm affine parameters {:?}/{:?} do not match {ch} channels",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let count = outer * inner;
        if count == 0 {
            return Err(Error::shape("batchnorm over an empty batch"));
        }
        let xs = self.value(x).data();
        let (mean, var, stats) = match mode {
            BnMode::Train => {
                let mut mean = vec![0.0f64; ch];
                let mut sq = vec![0.0f64; ch];
                for o in 0..outer {
                    for c in 0..ch {
                        let base = (o * ch + c) * inner;
                        for &v in &xs[base..base + inner] {
                            mean[c] += v.as_f64();
                        }
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                for o in 0..outer {
                    for c in 0..ch {
                        let base = (o * ch + c) * inner;
                        for &v in &xs[base..base + inner] {
                            let d = v.as_f64() - mean[c];
                            sq[c] += d * d;
                        }
                    }
                }
                let biased: Vec<T> = sq.iter().map(|s| T::of(s / count as f64)).collect();
                let unbiased: Vec<T> = sq
                    .iter()
                    .map(|s| T::of(s / (count.max(2) - 1) as f64))
                    .collect();
                let mean: Vec<T> = mean.iter().map(|&m| T::of(m)).collect();
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, biased, Some(stats))
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != ch || var.len() != ch {
                    return Err(Error::shape(format!(
                        "running statistics have {}/{} entries for {ch} channels",
                        mean.len(),
                        var.len()
                    )));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let eps = T::of(BN_EPS as f64);
        let inv_std: Vec<T> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![T::zero(); xs.len()];
        let mut out = vec![T::zero(); xs.len()];
        for o in 0..outer {
            for c in 0..ch {
                let base = (o * ch + c) * inner;
                for i in base..base + inner {
                    let h = (xs[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = g[c] * h + bt[c];
                }
            }
        }
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        let train = matches!(mode, BnMode::Train);
        let v = self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            out,
            &[x, gamma, beta],
        );
        Ok((v, stats))
    }

    /// Heaviside spike `u >= threshold` with the rectangular surrogate backward.
    pub fn spike(&mut self, u: Var, spec: SurrogateSpec) -> Var {
        let out = self.value(u).map(|v| spec.fire(v));
        self.push(Op::Spike { u, spec }, out, &[u])
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * sigmoid(v));
        self.push(Op::Silu(x), out, &[x])
    }

    /// Slice `[start, start+len)` of the leading axis.
    pub fn rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).rows(start, len)?;
        Ok(self.push(Op::Rows { x, start }, out, &[x]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_rows(&values)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), out, parts))
    }

    /// Multiplies time slice `t` of `x[T·N, ...]` by `p[t]`.
    pub fn scale_time(&mut self, x: Var, p: Var, steps: usize) -> Result<Var> {
        let block = time_block(self.shape(x), steps)?;
        if self.shape(p) != [steps] {
            return Err(Error::shape(format!(
                "temporal parameters {:?} do not match {steps} time steps",
                self.shape(p)
            )));
        }
        let ps = self.value(p).data().to_vec();
        let mut out = self.value(x).clone();
        for (t, chunk) in out.data_mut().chunks_mut(block).enumerate() {
            chunk.iter_mut().for_each(|v| *v *= ps[t]);
        }
        Ok(self.push(Op::ScaleTime { x, p, steps }, out, &[x, p]))
    }

    /// Adds a per-sample channel vector `e[N,C]` to `x[T·N, C, ...]`,
    /// broadcasting over time and spatial axes.
    pub fn add_sample_channel(&mut self, x: Var, e: Var, steps: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        time_block(&xs, steps)?;
        let (outer, ch, inner) = channel_split(&xs)?;
        let n = outer / steps;
        if self.shape(e) != [n, ch] {
            return Err(Error::shape(format!(
                "sample embedding {:?} does not match [{n}, {ch}]",
                self.shape(e)
            )));
        }
        let es = self.value(e).data().to_vec();
        let mut out = self.value(x).clone();
        for (row, chunk) in out.data_mut().chunks_mut(ch * inner).enumerate() {
            let sample = row % n;
            for c in 0..ch {
                let add = es[sample * ch + c];
                chunk[c * inner..(c + 1) * inner]
                    .iter_mut()
                    .for_each(|v| *v += add);
            }
        }
        Ok(self.push(Op::AddSampleChannel { x, e, steps }, out, &[x, e]))
    }

    /// Nearest-neighbour 2× upsampling of `[N,C,H,W]`.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::shape(format!("upsample2x expects [N,C,H,W], got {s:?}")));
        }
        let (h, w) = (s[2], s[3]);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len() * 4];
        for plane in 0..s[0] * s[1] {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out[(plane * 2 * h + y) * 2 * w + xx] = src[(plane * h + y / 2) * w + xx / 2];
                }
            }
        }
        let out = Tensor::new(vec![s[0], s[1], 2 * h, 2 * w], out)?;
        Ok(self.push(Op::Upsample2x(x), out, &[x]))
    }

    /// Mean over the time-major leading axis `[T·N, ...] -> [N, ...]`.
    pub fn mean_time(&mut self, x: Var, steps: usize) -> Result<Var> {
        let block = time_block(self.shape(x), steps)?;
        let mut shape = self.shape(x).to_vec();
        shape[0] /= steps;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); block];
        for chunk in src.chunks(block) {
            for (o, &v) in out.iter_mut().zip(chunk) {
                *o += v;
            }
        }
        let inv = T::of(1.0 / steps as f64);
        out.iter_mut().for_each(|v| *v *= inv);
        let out = Tensor::new(shape, out)?;
        Ok(self.push(Op::MeanTime { x, steps }, out, &[x]))
    }

    /// Repeats `[N, ...]` at every time step: `[T·N, ...]`.
    pub fn replicate_time(&mut self, x: Var, steps: usize) -> Result<Var> {
        if steps == 0 {
            return Err(Error::invalid("time steps must be >= 1"));
        }
        let v = self.value(x);
        if v.rank() == 0 {
            return Err(Error::shape("cannot replicate a scalar over time"));
        }
        let parts: Vec<&Tensor<T>> = std::iter::repeat_n(v, steps).collect();
        let out = Tensor::concat_rows(&parts)?;
        Ok(self.push(Op::ReplicateTime { x, steps }, out, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(Op::Reshape(x), out, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Op::Sum(x), Tensor::scalar(T::of(s)), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let m = self.value(x).mean();
        self.push(Op::Mean(x), Tensor::scalar(T::of(m)), &[x])
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        va.expect_same_shape(vb, "mse")?;
        let s: f64 = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| {
                let d = (x - y).as_f64();
                d * d
            })
            .sum();
        let m = s / va.len().max(1) as f64;
        Ok(self.push(Op::Mse(a, b), Tensor::scalar(T::of(m)), &[a, b]))
    }

    /// Drops the saved forward state; later calls to [`Graph::backward`] fail.
    pub fn release(&mut self) {
        for node in &mut self.nodes {
            if let Op::BatchNorm { xhat, .. } = &mut node.op {
                *xhat = Vec::new();
            }
        }
        self.released = true;
    }

    /// Reverse sweep from a scalar `loss`. Deterministic and repeatable until
    /// [`Graph::release`] is called.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.released {
            return Err(Error::GraphConsumed);
        }
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(lv.shape()));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[id].take() else { continue };
            self.backprop_node(node, &gy, &mut grads)?;
        }
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !(matches!(node.op, Op::Leaf) && node.requires_grad) {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(
        &self,
        node: &Node<T>,
        gy: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, gy.clone())?;
                }
                if self.wants(*b) {
                    accumulate(grads, *b, gy.clone())?;
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, gy.clone())?;
                }
                if self.wants(*b) {
                    accumulate(grads, *b, gy.scale(-T::one()))?;
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, gy.zip_map(self.value(*b), |g, y| g * y)?)?;
                }
                if self.wants(*b) {
                    accumulate(grads, *b, gy.zip_map(self.value(*a), |g, x| g * x)?)?;
                }
            }
            Op::Affine { x, scale } => {
                accumulate(grads, *x, gy.scale(*scale))?;
            }
            Op::Conv2d { x, w, geom } => {
                let (dx, dw) = kernels::conv2d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gy.data(),
                    geom,
                    self.wants(*x),
                    self.wants(*w),
                );
                if let Some(dx) = dx {
                    accumulate(grads, *x, Tensor::new(self.shape(*x).to_vec(), dx)?)?;
                }
                if let Some(dw) = dw {
                    accumulate(grads, *w, Tensor::new(self.shape(*w).to_vec(), dw)?)?;
                }
            }
            Op::Linear { x, w, b, n, d, e } => {
                let (n, d, e) = (*n, *d, *e);
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); n * d];
                    kernels::matmul_a_bt_acc(gy.data(), self.value(*w).data(), n, e, d, &mut dx);
                    accumulate(grads, *x, Tensor::new(vec![n, d], dx)?)?;
                }
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); d * e];
                    kernels::matmul_at_b_acc(self.value(*x).data(), gy.data(), n, d, e, &mut dw);
                    accumulate(grads, *w, Tensor::new(vec![d, e], dw)?)?;
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let mut db = vec![T::zero(); e];
                        for row in gy.data().chunks(e) {
                            for (o, &g) in db.iter_mut().zip(row) {
                                *o += g;
                            }
                        }
                        accumulate(grads, *b, Tensor::new(vec![e], db)?)?;
                    }
                }
            }
            Op::AddChannelBias { x, b } => {
                if self.wants(*x) {
                    accumulate(grads, *x, gy.clone())?;
                }
                if self.wants(*b) {
                    let (_, ch, inner) = channel_split(gy.shape())?;
                    let mut db = vec![T::zero(); ch];
                    for (i, &g) in gy.data().iter().enumerate() {
                        db[(i / inner) % ch] += g;
                    }
                    accumulate(grads, *b, Tensor::new(vec![ch], db)?)?;
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (outer, ch, inner) = channel_split(gy.shape())?;
                let count = (outer * inner) as f64;
                let dy = gy.data();
                let mut sum_dy = vec![0.0f64; ch];
                let mut sum_dy_xhat = vec![0.0f64; ch];
                for o in 0..outer {
                    for c in 0..ch {
                        let base = (o * ch + c) * inner;
                        for i in base..base + inner {
                            sum_dy[c] += dy[i].as_f64();
                            sum_dy_xhat[c] += (dy[i] * xhat[i]).as_f64();
                        }
                    }
                }
                if self.wants(*x) {
                    let g = self.value(*gamma).data();
                    let mut dx = vec![T::zero(); dy.len()];
                    for o in 0..outer {
                        for c in 0..ch {
                            let base = (o * ch + c) * inner;
                            let k = g[c] * inv_std[c];
                            for i in base..base + inner {
                                dx[i] = if *train {
                                    let centered = dy[i].as_f64()
                                        - sum_dy[c] / count
                                        - xhat[i].as_f64() * sum_dy_xhat[c] / count;
                                    k * T::of(centered)
                                } else {
                                    k * dy[i]
                                };
                            }
                        }
                    }
                    accumulate(grads, *x, Tensor::new(gy.shape().to_vec(), dx)?)?;
                }
                if self.wants(*gamma) {
                    let dg = sum_dy_xhat.iter().map(|&v| T::of(v)).collect();
                    accumulate(grads, *gamma, Tensor::new(vec![ch], dg)?)?;
                }
                if self.wants(*beta) {
                    let db = sum_dy.iter().map(|&v| T::of(v)).collect();
                    accumulate(grads, *beta, Tensor::new(vec![ch], db)?)?;
                }
            }
            Op::Spike { u, spec } => {
                let du = gy.zip_map(self.value(*u), |g, v| g * spec.derivative(v))?;
                accumulate(grads, *u, du)?;
            }
            Op::Silu(x) => {
                let dx = gy.zip_map(self.value(*x), |g, v| {
                    let s = sigmoid(v);
                    g * s * (T::one() + v * (T::one() - s))
                })?;
                accumulate(grads, *x, dx)?;
            }
            Op::Rows { x, start } => {
                let src = self.value(*x);
                let stride = src.len() / src.shape()[0].max(1);
                let mut dx = Tensor::zeros(src.shape());
                let off = start * stride;
                dx.data_mut()[off..off + gy.len()].copy_from_slice(gy.data());
                accumulate(grads, *x, dx)?;
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.wants(p) {
                        let piece = Tensor::new(
                            self.shape(p).to_vec(),
                            gy.data()[offset..offset + n].to_vec(),
                        )?;
                        accumulate(grads, p, piece)?;
                    }
                    offset += n;
                }
            }
            Op::ScaleTime { x, p, steps } => {
                let block = gy.len() / steps;
                if self.wants(*x) {
                    let ps = self.value(*p).data();
                    let mut dx = gy.clone();
                    for (t, chunk) in dx.data_mut().chunks_mut(block).enumerate() {
                        chunk.iter_mut().for_each(|v| *v *= ps[t]);
                    }
                    accumulate(grads, *x, dx)?;
                }
                if self.wants(*p) {
                    let xs = self.value(*x).data();
                    let dp: Vec<T> = (0..*steps)
                        .map(|t| {
                            let r = t * block..(t + 1) * block;
                            let s = gy.data()[r.clone()]
                                .iter()
                                .zip(&xs[r])
                                .map(|(&g, &v)| (g * v).as_f64())
                                .sum::<f64>();
                            T::of(s)
                        })
                        .collect();
                    accumulate(grads, *p, Tensor::new(vec![*steps], dp)?)?;
                }
            }
            Op::AddSampleChannel { x, e, steps } => {
                if self.wants(*x) {
                    accumulate(grads, *x, gy.clone())?;
                }
                if self.wants(*e) {
                    let (outer, ch, inner) = channel_split(gy.shape())?;
                    let n = outer / steps;
                    let mut de = vec![T::zero(); n * ch];
                    for (row, chunk) in gy.data().chunks(ch * inner).enumerate() {
                        let sample = row % n;
                        for c in 0..ch {
                            de[sample * ch + c] +=
                                chunk[c * inner..(c + 1) * inner].iter().copied().sum::<T>();
                        }
                    }
                    accumulate(grads, *e, Tensor::new(vec![n, ch], de)?)?;
                }
            }
            Op::Upsample2x(x) => {
                let s = self.shape(*x);
                let (h, w) = (s[2], s[3]);
                let mut dx = Tensor::zeros(s);
                let d = dx.data_mut();
                for plane in 0..s[0] * s[1] {
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            d[(plane * h + y / 2) * w + xx / 2] +=
                                gy.data()[(plane * 2 * h + y) * 2 * w + xx];
                        }
                    }
                }
                accumulate(grads, *x, dx)?;
            }
            Op::MeanTime { x, steps } => {
                let inv = T::of(1.0 / *steps as f64);
                let piece = gy.scale(inv);
                let parts: Vec<&Tensor<T>> = std::iter::repeat_n(&piece, *steps).collect();
                let dx = Tensor::concat_rows(&parts)?;
                accumulate(grads, *x, dx)?;
            }
            Op::ReplicateTime { x, steps } => {
                let block = gy.len() / steps;
                let mut dx = vec![T::zero(); block];
                for chunk in gy.data().chunks(block) {
                    for (o, &g) in dx.iter_mut().zip(chunk) {
                        *o += g;
                    }
                }
                accumulate(grads, *x, Tensor::new(self.shape(*x).to_vec(), dx)?)?;
            }
            Op::Reshape(x) => {
                accumulate(grads, *x, gy.clone().reshape(self.shape(*x))?)?;
            }
            Op::Sum(x) => {
                let g = gy.item()?;
                accumulate(grads, *x, Tensor::full(self.shape(*x), g))?;
            }
            Op::Mean(x) => {
                let n = T::of(self.value(*x).len().max(1) as f64);
                let g = gy.item()? / n;
                accumulate(grads, *x, Tensor::full(self.shape(*x), g))?;
            }
            Op::Mse(a, b) => {
                let n = T::of(self.value(*a).len().max(1) as f64);
                let k = T::of(2.0) * gy.item()? / n;
                let diff = self.value(*a).zip_map(self.value(*b), |x, y| k * (x - y))?;
                if self.wants(*b) {
                    accumulate(grads, *b, diff.scale(-T::one()))?;
                }
                if self.wants(*a) {
                    accumulate(grads, *a, diff)?;
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

#[inline]
fn sigmoid<T: Real>(v: T) -> T {
    (T::one() + (-v).exp()).recip()
}


/// `(outer, channels, inner)` for a `[outer, C, inner...]` layout.
fn channel_split(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape(format!(
            "expected at least [N, C] layout, got {shape:?}"
        )));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

/// Elements per time slice of a time-major `[T·N, ...]` tensor.
fn time_block(shape: &[usize], steps: usize) -> Result<usize> {
    if steps == 0 {
        return Err(Error::invalid("time steps must be >= 1"));
    }
    let lead = *shape
        .first()
        .ok_or_else(|| Error::shape("time-major op on a scalar"))?;
    if lead % steps != 0 {
        return Err(Error::shape(format!(
            "leading dimension {lead} is not a multiple of {steps} time steps"
        )));
    }
    Ok(shape.iter().product::<usize>() / steps)
}

#[cfg(test)]
mod tests;
