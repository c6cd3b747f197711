//! Operation tape for reverse-mode differentiation.
//!
//! Every op appends a node holding its output values. `backward` walks the
//! nodes in reverse and accumulates adjoints; nodes that do not depend on any
//! gradient-requiring leaf are skipped entirely.

use super::kernels::{self, ConvGeom, ConvGrads, DenseGrads};
use super::tensor::{numel, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        out_channels: usize,
    },
    Relu(Var),
    Tanh(Var),
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    Reshape(Var),
    Upsample2x {
        x: Var,
        planes: usize,
        h: usize,
        w: usize,
    },
    Concat {
        parts: Vec<(Var, usize)>,
    },
    Mse {
        x: Var,
        target: Vec<T>,
    },
    Mean(Var),
    Scale(Var, T),
    WeightedSum {
        x: Var,
        weights: Vec<T>,
    },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Per-channel statistics observed by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Adjoints produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// `[N, C, rest...]` -> (N, C, prod(rest))
fn channel_layout(shape: &[usize]) -> Option<(usize, usize, usize)> {
    if shape.len() < 2 {
        return None;
    }
    Some((shape[0], shape[1], shape[2..].iter().product()))
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, requires_grad: bool, op: Op<T>) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant leaf; never receives a gradient.
    pub fn input(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.values().to_vec(), false, Op::Leaf)
    }

    pub fn input_raw(&mut self, shape: Vec<usize>, values: Vec<T>) -> Result<Var> {
        if numel(&shape) != values.len() || shape.contains(&0) {
            return Err(Error::shape("input", &shape, &[values.len()]));
        }
        Ok(self.push(shape, values, false, Op::Leaf))
    }

    /// Parameter leaf. With `trainable == false` it behaves like a constant.
    pub fn param(&mut self, t: &Tensor<T>, trainable: bool) -> Var {
        self.push(t.shape().to_vec(), t.values().to_vec(), trainable, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.node(v).shape.clone(), self.node(v).value.clone())
            .expect("tape nodes hold valid tensors")
    }

    /// `x: [N, in]`, `w: [out, in]`, `b: [out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || bs != [ws[0]] {
            return Err(Error::shape("dense", ws, xs));
        }
        let (batch, inputs, outputs) = (xs[0], xs[1], ws[0]);
        let out = kernels::dense_forward(
            self.value(x),
            self.value(w),
            self.value(b),
            batch,
            inputs,
            outputs,
        );
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(vec![batch, outputs], out, rg, Op::Dense { x, w, b }))
    }

    /// `x: [N, C, H, W]`, `w: [OC, C, k, k]`, `b: [OC]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || ws[2] != ws[3] || stride == 0 {
            return Err(Error::shape("conv2d", &ws, &xs));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(Error::shape("conv2d bias", &[ws[0]], self.shape(b)));
            }
        }
        if xs[2] + 2 * padding < ws[2] || xs[3] + 2 * padding < ws[3] {
            return Err(Error::shape("conv2d", &ws, &xs));
        }
        let geom = ConvGeom {
            channels: xs[1],
            height: xs[2],
            width: xs[3],
            kernel: ws[2],
            stride,
            padding,
        };
        let out_channels = ws[0];
        let out = kernels::conv_forward(
            &geom,
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            xs[0],
            out_channels,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let shape = vec![xs[0], out_channels, geom.out_height(), geom.out_width()];
        Ok(self.push(
            shape,
            out,
            rg,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                out_channels,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(shape, out, rg, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| v.tanh()).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(shape, out, rg, Op::Tanh(x))
    }

    fn check_bn(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let xs = self.shape(x);
        let (n, c, inner) =
            channel_layout(xs).ok_or_else(|| Error::shape("batchnorm", &[0, 0], xs))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape("batchnorm", &[c], self.shape(gamma)));
        }
        Ok((n, c, inner))
    }

    /// Normalizes each channel with the batch's own mean and (biased) variance.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, BatchStats<T>)> {
        let (n, c, inner) = self.check_bn(x, gamma, beta)?;
        let xv = self.value(x);
        let count = T::of((n * inner) as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for b in 0..n {
                s += xv[(b * c + ch) * inner..(b * c + ch + 1) * inner]
                    .iter()
                    .copied()
                    .sum::<T>();
            }
            mean[ch] = s / count;
            let mut q = T::zero();
            for b in 0..n {
                for &v in &xv[(b * c + ch) * inner..(b * c + ch + 1) * inner] {
                    let d = v - mean[ch];
                    q += d * d;
                }
            }
            var[ch] = q / count;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, be) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * inner;
                for i in base..base + inner {
                    xhat[i] = (xv[i] - mean[ch]) * inv_std[ch];
                    out[i] = g[ch] * xhat[i] + be[ch];
                }
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let shape = self.shape(x).to_vec();
        let v = self.push(
            shape,
            out,
            rg,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        );
        Ok((v, BatchStats { mean, var }))
    }

    /// Normalizes with fixed statistics; every sample is treated independently.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Var> {
        let (n, c, inner) = self.check_bn(x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::shape("batchnorm running stats", &[c], &[mean.len()]));
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (xv, g, be) = (self.value(x), self.value(gamma), self.value(beta));
        let mut out = vec![T::zero(); xv.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * inner;
                for i in base..base + inner {
                    out[i] = g[ch] * (xv[i] - mean[ch]) * inv_std[ch] + be[ch];
                }
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            shape,
            out,
            rg,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean: mean.to_vec(),
                inv_std,
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != self.value(x).len() || shape.contains(&0) {
            return Err(Error::shape("reshape", &shape, self.shape(x)));
        }
        let out = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape, out, rg, Op::Reshape(x)))
    }

    /// `[N, C, H, W] -> [N, C, 2H, 2W]`, nearest neighbour.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::shape("upsample2x", &[0, 0, 0, 0], &xs));
        }
        let (planes, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
        let out = kernels::upsample2x(self.value(x), planes, h, w);
        let rg = self.rg(x);
        Ok(self.push(
            vec![xs[0], xs[1], 2 * h, 2 * w],
            out,
            rg,
            Op::Upsample2x { x, planes, h, w },
        ))
    }

    /// Joins `[N, w_i]` blocks along the feature axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidTensor("concat of zero parts".into()))?;
        let rows = self.shape(first)[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(Error::shape("concat", &[rows, 0], s));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let op = Op::Concat {
            parts: parts.iter().copied().zip(widths).collect(),
        };
        Ok(self.push(vec![rows, total], out, rg, op))
    }

    /// Mean squared difference against a constant target of the same size.
    pub fn mse(&mut self, x: Var, target: &[T]) -> Result<Var> {
        if target.len() != self.value(x).len() {
            return Err(Error::shape("mse", self.shape(x), &[target.len()]));
        }
        let n = T::of(target.len() as f64);
        let s: T = self
            .value(x)
            .iter()
            .zip(target)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        let rg = self.rg(x);
        Ok(self.push(
            vec![1],
            vec![s / n],
            rg,
            Op::Mse {
                x,
                target: target.to_vec(),
            },
        ))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.iter().copied().sum::<T>() / T::of(v.len() as f64);
        let rg = self.rg(x);
        self.push(vec![1], vec![m], rg, Op::Mean(x))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).iter().map(|&v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(shape, out, rg, Op::Scale(x, factor))
    }

    /// `sum_k weights[k] * x[k]`
    pub fn weighted_sum(&mut self, x: Var, weights: &[T]) -> Result<Var> {
        if weights.len() != self.value(x).len() {
            return Err(Error::shape(
                "weighted_sum",
                self.shape(x),
                &[weights.len()],
            ));
        }
        let s = kernels::dot(self.value(x), weights);
        let rg = self.rg(x);
        Ok(self.push(
            vec![1],
            vec![s],
            rg,
            Op::WeightedSum {
                x,
                weights: weights.to_vec(),
            },
        ))
    }

    /// Sign pattern of every relu input on the tape, in tape order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                out.extend(self.value(x).iter().map(|&v| v > T::zero()));
            }
        }
        out
    }

    /// Reverse sweep from a scalar output. A tape can be swept once.
    pub fn backward(&mut self, out: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.value(out).len() != 1 {
            return Err(Error::NonScalarBackward(self.shape(out).to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(vec![T::one()]);

        for idx in (0..=out.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let nodes = &self.nodes;
        // Mutable adjoint slot for `v`, allocated on first use; None if `v` needs no gradient.
        fn slot<'g, T: Real>(
            nodes: &[Node<T>],
            grads: &'g mut [Option<Vec<T>>],
            v: Var,
        ) -> Option<&'g mut [T]> {
            if !nodes[v.0].requires_grad {
                return None;
            }
            let len = nodes[v.0].value.len();
            Some(
                grads[v.0]
                    .get_or_insert_with(|| vec![T::zero(); len])
                    .as_mut_slice(),
            )
        }
        // Moves the adjoint out so several can be borrowed mutably at once.
        fn take_grad<T: Real>(
            nodes: &[Node<T>],
            grads: &mut [Option<Vec<T>>],
            v: Var,
        ) -> Option<Vec<T>> {
            if !nodes[v.0].requires_grad {
                return None;
            }
            let len = nodes[v.0].value.len();
            Some(grads[v.0].take().unwrap_or_else(|| vec![T::zero(); len]))
        }
        match &node.op {
            Op::Leaf => {}
            Op::Dense { x, w, b } => {
                let (batch, inputs) = (nodes[x.0].shape[0], nodes[x.0].shape[1]);
                let outputs = nodes[w.0].shape[0];
                let mut dx = take_grad(nodes, grads, *x);
                let mut dw = take_grad(nodes, grads, *w);
                let mut db = take_grad(nodes, grads, *b);
                kernels::dense_backward(
                    &nodes[x.0].value,
                    &nodes[w.0].value,
                    dy,
                    batch,
                    inputs,
                    outputs,
                    DenseGrads {
                        dx: dx.as_deref_mut(),
                        dw: dw.as_deref_mut(),
                        db: db.as_deref_mut(),
                    },
                );
                for (v, g) in [(*x, dx), (*w, dw), (*b, db)] {
                    if let Some(g) = g {
                        grads[v.0] = Some(g);
                    }
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                out_channels,
            } => {
                let batch = nodes[x.0].shape[0];
                let mut dx = take_grad(nodes, grads, *x);
                let mut dw = take_grad(nodes, grads, *w);
                let mut db = b.and_then(|b| take_grad(nodes, grads, b));
                kernels::conv_backward(
                    geom,
                    &nodes[x.0].value,
                    &nodes[w.0].value,
                    dy,
                    batch,
                    *out_channels,
                    ConvGrads {
                        dx: dx.as_deref_mut(),
                        dw: dw.as_deref_mut(),
                        db: db.as_deref_mut(),
                    },
                );
                if let Some(g) = dx {
                    grads[x.0] = Some(g);
                }
                if let Some(g) = dw {
                    grads[w.0] = Some(g);
                }
                if let (Some(b), Some(g)) = (b, db) {
                    grads[b.0] = Some(g);
                }
            }
            Op::Relu(x) => {
                let xv = &nodes[x.0].value;
                if let Some(dx) = slot(nodes, grads, *x) {
                    for ((d, &g), &v) in dx.iter_mut().zip(dy).zip(xv) {
                        if v > T::zero() {
                            *d += g;
                        }
                    }
                }
            }
            Op::Tanh(x) => {
                let yv = &node.value;
                if let Some(dx) = slot(nodes, grads, *x) {
                    for ((d, &g), &y) in dx.iter_mut().zip(dy).zip(yv) {
                        *d += g * (T::one() - y * y);
                    }
                }
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (n, c, inner) = channel_layout(&nodes[x.0].shape).expect("checked at forward");
                let count = T::of((n * inner) as f64);
                let g = &nodes[gamma.0].value;
                let mut sum_dy = vec![T::zero(); c];
                let mut sum_dy_xhat = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * inner;
                        for i in base..base + inner {
                            sum_dy[ch] += dy[i];
                            sum_dy_xhat[ch] += dy[i] * xhat[i];
                        }
                    }
                }
                if let Some(dg) = slot(nodes, grads, *gamma) {
                    for ch in 0..c {
                        dg[ch] += sum_dy_xhat[ch];
                    }
                }
                if let Some(dbeta) = slot(nodes, grads, *beta) {
                    for ch in 0..c {
                        dbeta[ch] += sum_dy[ch];
                    }
                }
                if let Some(dx) = slot(nodes, grads, *x) {
                    for b in 0..n {
                        for ch in 0..c {
                            let base = (b * c + ch) * inner;
                            let k = g[ch] * inv_std[ch] / count;
                            for i in base..base + inner {
                                dx[i] +=
                                    k * (count * dy[i] - sum_dy[ch] - xhat[i] * sum_dy_xhat[ch]);
                            }
                        }
                    }
                }
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let (n, c, inner) = channel_layout(&nodes[x.0].shape).expect("checked at forward");
                let xv = &nodes[x.0].value;
                let g = &nodes[gamma.0].value;
                if let Some(dg) = slot(nodes, grads, *gamma) {
                    for b in 0..n {
                        for ch in 0..c {
                            let base = (b * c + ch) * inner;
                            for i in base..base + inner {
                                dg[ch] += dy[i] * (xv[i] - mean[ch]) * inv_std[ch];
                            }
                        }
                    }
                }
                if let Some(dbeta) = slot(nodes, grads, *beta) {
                    for b in 0..n {
                        for (ch, db) in dbeta.iter_mut().enumerate() {
                            let base = (b * c + ch) * inner;
                            *db = dy[base..base + inner].iter().fold(*db, |acc, &v| acc + v);
                        }
                    }
                }
                if let Some(dx) = slot(nodes, grads, *x) {
                    for b in 0..n {
                        for ch in 0..c {
                            let base = (b * c + ch) * inner;
                            for i in base..base + inner {
                                dx[i] += dy[i] * g[ch] * inv_std[ch];
                            }
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(dx) = slot(nodes, grads, *x) {
                    kernels::axpy(T::one(), dy, dx);
                }
            }
            Op::Upsample2x { x, planes, h, w } => {
                if let Some(dx) = slot(nodes, grads, *x) {
                    kernels::upsample2x_backward(dy, dx, *planes, *h, *w);
                }
            }
            Op::Concat { parts } => {
                let rows = node.shape[0];
                let total = node.shape[1];
                let mut offset = 0;
                for &(p, w) in parts {
                    if let Some(dp) = slot(nodes, grads, p) {
                        for r in 0..rows {
                            kernels::axpy(
                                T::one(),
                                &dy[r * total + offset..r * total + offset + w],
                                &mut dp[r * w..(r + 1) * w],
                            );
                        }
                    }
                    offset += w;
                }
            }
            Op::Mse { x, target } => {
                let xv = &nodes[x.0].value;
                let k = dy[0] * T::of(2.0) / T::of(target.len() as f64);
                if let Some(dx) = slot(nodes, grads, *x) {
                    for ((d, &a), &t) in dx.iter_mut().zip(xv).zip(target) {
                        *d += k * (a - t);
                    }
                }
            }
            Op::Mean(x) => {
                let len = nodes[x.0].value.len();
                let k = dy[0] / T::of(len as f64);
                if let Some(dx) = slot(nodes, grads, *x) {
                    dx.iter_mut().for_each(|d| *d += k);
                }
            }
            Op::Scale(x, factor) => {
                if let Some(dx) = slot(nodes, grads, *x) {
                    kernels::axpy(*factor, dy, dx);
                }
            }
            Op::WeightedSum { x, weights } => {
                if let Some(dx) = slot(nodes, grads, *x) {
                    kernels::axpy(dy[0], weights, dx);
                }
            }
        }
    }
}
