//! Tape-based reverse-mode differentiation over NCHW tensors.
//!
//! A [`Graph`] records every operation applied to its nodes. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and
//! returns the gradient of that scalar with respect to every node that
//! requires one. The op set is exactly what the restoration network needs:
//! convolution (any odd kernel, stride 1 or 2, "same" padding), LeakyReLU,
//! addition, channel concatenation, 2x nearest upsampling, per-pixel dynamic
//! convolution, and the scalar losses.

use crate::error::{Error, Result};

use super::tensor::{gemm, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
    },
    LeakyRelu {
        x: NodeId,
        slope: f64,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        k: f64,
    },
    Concat {
        inputs: Vec<NodeId>,
    },
    Upsample2x {
        x: NodeId,
    },
    DynamicConv {
        features: NodeId,
        filters: NodeId,
        s: usize,
    },
    Mean {
        x: NodeId,
    },
    L1 {
        a: NodeId,
        b: NodeId,
    },
    GradientL1 {
        a: NodeId,
        b: NodeId,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Concat { .. } => "concat",
            Op::Upsample2x { .. } => "upsample2x",
            Op::DynamicConv { .. } => "dynamic_conv",
            Op::Mean { .. } => "mean",
            Op::L1 { .. } => "l1",
            Op::GradientL1 { .. } => "gradient_l1",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> [usize; 4] {
        self.nodes[id.0].value.shape()
    }

    /// Input or parameter node.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite output from {} (node {})",
                op.name(),
                self.nodes.len()
            )));
        }
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::InvalidArgument(format!(
                "node {} is not in this graph",
                id.0
            )));
        }
        Ok(())
    }

    /// 2-D convolution with a `[cout, cin, k, k]` weight, zero padding
    /// `k / 2`, and stride 1 or 2.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
    ) -> Result<NodeId> {
        self.check(x)?;
        self.check(w)?;
        let [n, cin, h, wd] = self.shape(x);
        let [cout, wcin, k, k2] = self.shape(w);
        if wcin != cin || k != k2 || k % 2 == 0 {
            return Err(Error::Shape(format!(
                "conv2d weight {:?} incompatible with input {:?}",
                self.shape(w),
                self.shape(x)
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be positive".into()));
        }
        if let Some(b) = b {
            self.check(b)?;
            if self.value(b).len() != cout {
                return Err(Error::Shape(format!("conv2d bias needs {cout} values")));
            }
        }
        let geo = ConvGeometry::new(cin, h, wd, k, stride);
        let hw = geo.ho * geo.wo;
        let mut out = Tensor::zeros([n, cout, geo.ho, geo.wo]);
        let mut cols = vec![T::zero(); geo.rows() * hw];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let od = out.data_mut();
            for s in 0..n {
                geo.im2col(&xv[s * cin * h * wd..(s + 1) * cin * h * wd], &mut cols);
                let dst = &mut od[s * cout * hw..(s + 1) * cout * hw];
                gemm(
                    cout,
                    geo.rows(),
                    hw,
                    wv,
                    false,
                    &cols,
                    false,
                    T::zero(),
                    dst,
                );
                if let Some(b) = b {
                    let bv = self.value(b).data();
                    for (co, plane) in dst.chunks_exact_mut(hw).enumerate() {
                        plane.iter_mut().for_each(|v| *v += bv[co]);
                    }
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(out, Op::Conv2d { x, w, b, stride }, &inputs)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        self.check(x)?;
        let s = T::from_f64_lossy(slope);
        let src = self.value(x);
        let data = src
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { v * s })
            .collect();
        let out = Tensor::from_vec(src.shape(), data)?;
        self.push(out, Op::LeakyRelu { x, slope }, &[x])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::from_vec(self.shape(a), data)?;
        self.push(out, Op::Add { a, b }, &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::from_vec(self.shape(a), data)?;
        self.push(out, Op::Mul { a, b }, &[a, b])
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> Result<NodeId> {
        self.check(x)?;
        let kk = T::from_f64_lossy(k);
        let src = self.value(x);
        let out = Tensor::from_vec(src.shape(), src.data().iter().map(|&v| v * kk).collect())?;
        self.push(out, Op::Scale { x, k }, &[x])
    }

    /// Concatenate along channels.
    pub fn concat(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("concat of nothing".into()));
        }
        for &i in inputs {
            self.check(i)?;
        }
        let [n, _, h, w] = self.shape(inputs[0]);
        let mut channels = 0;
        for &i in inputs {
            let [ni, ci, hi, wi] = self.shape(i);
            if (ni, hi, wi) != (n, h, w) {
                return Err(Error::Shape(format!(
                    "concat inputs {:?} vs {:?}",
                    self.shape(inputs[0]),
                    self.shape(i)
                )));
            }
            channels += ci;
        }
        let mut out = Tensor::zeros([n, channels, h, w]);
        let plane = h * w;
        {
            let od = out.data_mut();
            for s in 0..n {
                let mut off = s * channels * plane;
                for &i in inputs {
                    let ci = self.shape(i)[1];
                    let src = &self.value(i).data()[s * ci * plane..(s + 1) * ci * plane];
                    od[off..off + ci * plane].copy_from_slice(src);
                    off += ci * plane;
                }
            }
        }
        self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            inputs,
        )
    }

    /// Nearest-neighbor 2x upsampling.
    pub fn upsample2x(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let [n, c, h, w] = self.shape(x);
        let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
        {
            let src = self.value(x).data();
            let od = out.data_mut();
            for p in 0..n * c {
                for y in 0..2 * h {
                    for xx in 0..2 * w {
                        od[(p * 2 * h + y) * 2 * w + xx] = src[(p * h + y / 2) * w + xx / 2];
                    }
                }
            }
        }
        self.push(out, Op::Upsample2x { x }, &[x])
    }

    /// Per-pixel depthwise convolution: each output sample is the inner
    /// product of the `s`x`s` patch of its own channel (zero padded) with the
    /// filter stored in channels `m*s^2 .. (m+1)*s^2` of `filters`, at that
    /// pixel. Filter taps are row-major within the patch.
    pub fn dynamic_conv(&mut self, features: NodeId, filters: NodeId, s: usize) -> Result<NodeId> {
        self.check(features)?;
        self.check(filters)?;
        let [n, c, h, w] = self.shape(features);
        let fshape = self.shape(filters);
        if s % 2 == 0 || fshape != [n, c * s * s, h, w] {
            return Err(Error::Shape(format!(
                "dynamic_conv filters {fshape:?} do not match features {:?} with s={s}",
                self.shape(features)
            )));
        }
        let mut out = Tensor::zeros([n, c, h, w]);
        dynamic_conv_forward(
            self.value(features).data(),
            self.value(filters).data(),
            out.data_mut(),
            [n, c, h, w],
            s,
        );
        self.push(
            out,
            Op::DynamicConv {
                features,
                filters,
                s,
            },
            &[features, filters],
        )
    }

    /// Mean over all elements.
    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let v = self.value(x);
        let m = v.data().iter().copied().sum::<T>() / T::from_usize(v.len()).unwrap();
        self.push(Tensor::scalar(m), Op::Mean { x }, &[x])
    }

    /// Mean absolute error.
    pub fn l1(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        self.same_shape("l1", a, b)?;
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let m = va.iter().zip(vb).map(|(&x, &y)| (x - y).abs()).sum::<T>()
            / T::from_usize(va.len()).unwrap();
        self.push(Tensor::scalar(m), Op::L1 { a, b }, &[a, b])
    }

    /// Mean absolute difference of horizontal and vertical finite-difference
    /// gradients (both directions pooled).
    pub fn gradient_l1(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        self.same_shape("gradient_l1", a, b)?;
        let [n, c, h, w] = self.shape(a);
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let mut sum = T::zero();
        let count = n * c * (h * w.saturating_sub(1) + h.saturating_sub(1) * w);
        for p in 0..n * c {
            let base = p * h * w;
            for y in 0..h {
                for x in 0..w {
                    let i = base + y * w + x;
                    if x + 1 < w {
                        sum += ((va[i + 1] - va[i]) - (vb[i + 1] - vb[i])).abs();
                    }
                    if y + 1 < h {
                        sum += ((va[i + w] - va[i]) - (vb[i + w] - vb[i])).abs();
                    }
                }
            }
        }
        let m = if count == 0 {
            T::zero()
        } else {
            sum / T::from_usize(count).unwrap()
        };
        self.push(Tensor::scalar(m), Op::GradientL1 { a, b }, &[a, b])
    }

    fn same_shape(&self, op: &str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{op}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    /// Gradients of the scalar node `loss` with respect to every node that
    /// requires a gradient.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::InvalidArgument(format!(
                "node {} was not recorded in this graph",
                loss.0
            )));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar, node {} has shape {:?}",
                loss.0,
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.backward_op(&node.op, idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], id: NodeId, f: impl FnOnce(&mut [T])) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let slot = grads[id.0].get_or_insert_with(|| Tensor::zeros(self.shape(id)));
        f(slot.data_mut());
    }

    fn backward_op(&self, op: &Op, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        match *op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride } => {
                let [n, cin, h, wd] = self.shape(x);
                let [cout, _, k, _] = self.shape(w);
                let geo = ConvGeometry::new(cin, h, wd, k, stride);
                let hw = geo.ho * geo.wo;
                let xv = self.value(x).data();
                let wv = self.value(w).data();
                let need_x = self.nodes[x.0].requires_grad;
                let need_w = self.nodes[w.0].requires_grad;
                let mut cols = vec![T::zero(); geo.rows() * hw];
                let mut dcols = vec![T::zero(); geo.rows() * hw];
                let mut dw = vec![T::zero(); if need_w { cout * geo.rows() } else { 0 }];
                let mut dx = vec![T::zero(); if need_x { xv.len() } else { 0 }];
                for s in 0..n {
                    let gs = &gd[s * cout * hw..(s + 1) * cout * hw];
                    if need_w {
                        geo.im2col(&xv[s * cin * h * wd..(s + 1) * cin * h * wd], &mut cols);
                        gemm(
                            cout,
                            hw,
                            geo.rows(),
                            gs,
                            false,
                            &cols,
                            true,
                            T::one(),
                            &mut dw,
                        );
                    }
                    if need_x {
                        gemm(
                            geo.rows(),
                            cout,
                            hw,
                            wv,
                            true,
                            gs,
                            false,
                            T::zero(),
                            &mut dcols,
                        );
                        geo.col2im(&dcols, &mut dx[s * cin * h * wd..(s + 1) * cin * h * wd]);
                    }
                }
                if need_w {
                    self.accumulate(grads, w, |d| {
                        d.iter_mut().zip(&dw).for_each(|(a, &v)| *a += v)
                    });
                }
                if need_x {
                    self.accumulate(grads, x, |d| {
                        d.iter_mut().zip(&dx).for_each(|(a, &v)| *a += v)
                    });
                }
                if let Some(b) = b {
                    self.accumulate(grads, b, |d| {
                        for s in 0..n {
                            for (co, acc) in d.iter_mut().enumerate() {
                                let start = (s * cout + co) * hw;
                                *acc += gd[start..start + hw].iter().copied().sum::<T>();
                            }
                        }
                    });
                }
            }
            Op::LeakyRelu { x, slope } => {
                let s = T::from_f64_lossy(slope);
                let xv = self.value(x).data();
                self.accumulate(grads, x, |d| {
                    for ((acc, &gv), &xi) in d.iter_mut().zip(gd).zip(xv) {
                        *acc += if xi > T::zero() { gv } else { gv * s };
                    }
                });
            }
            Op::Add { a, b } => {
                self.accumulate(grads, a, |d| {
                    d.iter_mut().zip(gd).for_each(|(acc, &v)| *acc += v)
                });
                self.accumulate(grads, b, |d| {
                    d.iter_mut().zip(gd).for_each(|(acc, &v)| *acc += v)
                });
            }
            Op::Mul { a, b } => {
                let va = self.value(a).data();
                let vb = self.value(b).data();
                self.accumulate(grads, a, |d| {
                    for i in 0..d.len() {
                        d[i] += gd[i] * vb[i];
                    }
                });
                self.accumulate(grads, b, |d| {
                    for i in 0..d.len() {
                        d[i] += gd[i] * va[i];
                    }
                });
            }
            Op::Scale { x, k } => {
                let kk = T::from_f64_lossy(k);
                self.accumulate(grads, x, |d| {
                    d.iter_mut().zip(gd).for_each(|(acc, &v)| *acc += v * kk)
                });
            }
            Op::Concat { ref inputs } => {
                let [n, channels, h, w] = self.nodes[idx].value.shape();
                let plane = h * w;
                let mut off = 0;
                for &i in inputs {
                    let ci = self.shape(i)[1];
                    self.accumulate(grads, i, |d| {
                        for s in 0..n {
                            let src = &gd
                                [(s * channels + off) * plane..(s * channels + off + ci) * plane];
                            d[s * ci * plane..(s + 1) * ci * plane]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(acc, &v)| *acc += v);
                        }
                    });
                    off += ci;
                }
            }
            Op::Upsample2x { x } => {
                let [n, c, h, w] = self.shape(x);
                self.accumulate(grads, x, |d| {
                    for p in 0..n * c {
                        for y in 0..2 * h {
                            for xx in 0..2 * w {
                                d[(p * h + y / 2) * w + xx / 2] += gd[(p * 2 * h + y) * 2 * w + xx];
                            }
                        }
                    }
                });
            }
            Op::DynamicConv {
                features,
                filters,
                s,
            } => {
                let shape = self.shape(features);
                let fv = self.value(features).data();
                let kv = self.value(filters).data();
                self.accumulate(grads, features, |d| {
                    dynamic_conv_grad_features(kv, gd, d, shape, s)
                });
                self.accumulate(grads, filters, |d| {
                    dynamic_conv_grad_filters(fv, gd, d, shape, s)
                });
            }
            Op::Mean { x } => {
                let n = T::from_usize(self.value(x).len()).unwrap();
                let v = gd[0] / n;
                self.accumulate(grads, x, |d| d.iter_mut().for_each(|acc| *acc += v));
            }
            Op::L1 { a, b } => {
                let va = self.value(a).data();
                let vb = self.value(b).data();
                let scale = gd[0] / T::from_usize(va.len()).unwrap();
                let sign = |i: usize| -> T {
                    let diff = va[i] - vb[i];
                    if diff > T::zero() {
                        scale
                    } else if diff < T::zero() {
                        -scale
                    } else {
                        T::zero()
                    }
                };
                self.accumulate(grads, a, |d| {
                    for i in 0..d.len() {
                        d[i] += sign(i);
                    }
                });
                self.accumulate(grads, b, |d| {
                    for i in 0..d.len() {
                        d[i] = d[i] - sign(i);
                    }
                });
            }
            Op::GradientL1 { a, b } => {
                let [n, c, h, w] = self.shape(a);
                let count = n * c * (h * w.saturating_sub(1) + h.saturating_sub(1) * w);
                if count == 0 {
                    return;
                }
                let va = self.value(a).data();
                let vb = self.value(b).data();
                let scale = gd[0] / T::from_usize(count).unwrap();
                // d(loss)/d(a); the gradient for b is its negation
                let mut da = vec![T::zero(); va.len()];
                let sgn = |v: T| -> T {
                    if v > T::zero() {
                        scale
                    } else if v < T::zero() {
                        -scale
                    } else {
                        T::zero()
                    }
                };
                for p in 0..n * c {
                    let base = p * h * w;
                    for y in 0..h {
                        for x in 0..w {
                            let i = base + y * w + x;
                            if x + 1 < w {
                                let s = sgn((va[i + 1] - va[i]) - (vb[i + 1] - vb[i]));
                                da[i + 1] += s;
                                da[i] = da[i] - s;
                            }
                            if y + 1 < h {
                                let s = sgn((va[i + w] - va[i]) - (vb[i + w] - vb[i]));
                                da[i + w] += s;
                                da[i] = da[i] - s;
                            }
                        }
                    }
                }
                self.accumulate(grads, a, |d| {
                    d.iter_mut().zip(&da).for_each(|(acc, &v)| *acc += v)
                });
                self.accumulate(grads, b, |d| {
                    d.iter_mut().zip(&da).for_each(|(acc, &v)| *acc = *acc - v)
                });
            }
        }
    }
}

/// Shared index arithmetic for "same"-padded convolutions.
struct ConvGeometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeometry {
    fn new(cin: usize, h: usize, w: usize, k: usize, stride: usize) -> Self {
        let pad = k / 2;
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        ConvGeometry {
            cin,
            h,
            w,
            k,
            stride,
            pad,
            ho,
            wo,
        }
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    /// Row `(ci, ky, kx)` of `cols` holds the input sample each output
    /// position sees through that tap.
    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let hw = self.ho * self.wo;
        for ci in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = &mut cols[((ci * self.k + ky) * self.k + kx) * hw..][..hw];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let dst = &mut row[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            dst.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &x[(ci * self.h + iy as usize) * self.w..][..self.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *d = if ix < 0 || ix >= self.w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`], accumulating into `dx`.
    fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let hw = self.ho * self.wo;
        for ci in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = &cols[((ci * self.k + ky) * self.k + kx) * hw..][..hw];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut dx[(ci * self.h + iy as usize) * self.w..][..self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += row[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Valid output range `[lo, hi)` along one axis for tap offset `off`.
#[inline]
fn tap_range(off: isize, len: usize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (len as isize - off).clamp(0, len as isize) as usize;
    (lo, hi.max(lo))
}

fn dynamic_conv_forward<T: Real>(
    e: &[T],
    f: &[T],
    out: &mut [T],
    [n, c, h, w]: [usize; 4],
    s: usize,
) {
    let r = (s / 2) as isize;
    let plane = h * w;
    for b in 0..n {
        for m in 0..c {
            let src = &e[(b * c + m) * plane..][..plane];
            let dst = &mut out[(b * c + m) * plane..][..plane];
            for ky in 0..s {
                let dy = ky as isize - r;
                let (y0, y1) = tap_range(dy, h);
                for kx in 0..s {
                    let dx = kx as isize - r;
                    let (x0, x1) = tap_range(dx, w);
                    let fp = &f[((b * c + m) * s * s + ky * s + kx) * plane..][..plane];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        for x in x0..x1 {
                            dst[y * w + x] +=
                                fp[y * w + x] * src[sy * w + (x as isize + dx) as usize];
                        }
                    }
                }
            }
        }
    }
}

fn dynamic_conv_grad_features<T: Real>(
    f: &[T],
    g: &[T],
    de: &mut [T],
    [n, c, h, w]: [usize; 4],
    s: usize,
) {
    let r = (s / 2) as isize;
    let plane = h * w;
    for b in 0..n {
        for m in 0..c {
            let gp = &g[(b * c + m) * plane..][..plane];
            let dst = &mut de[(b * c + m) * plane..][..plane];
            for ky in 0..s {
                let dy = ky as isize - r;
                let (y0, y1) = tap_range(dy, h);
                for kx in 0..s {
                    let dx = kx as isize - r;
                    let (x0, x1) = tap_range(dx, w);
                    let fp = &f[((b * c + m) * s * s + ky * s + kx) * plane..][..plane];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        for x in x0..x1 {
                            dst[sy * w + (x as isize + dx) as usize] +=
                                fp[y * w + x] * gp[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

fn dynamic_conv_grad_filters<T: Real>(
    e: &[T],
    g: &[T],
    df: &mut [T],
    [n, c, h, w]: [usize; 4],
    s: usize,
) {
    let r = (s / 2) as isize;
    let plane = h * w;
    for b in 0..n {
        for m in 0..c {
            let src = &e[(b * c + m) * plane..][..plane];
            let gp = &g[(b * c + m) * plane..][..plane];
            for ky in 0..s {
                let dy = ky as isize - r;
                let (y0, y1) = tap_range(dy, h);
                for kx in 0..s {
                    let dx = kx as isize - r;
                    let (x0, x1) = tap_range(dx, w);
                    let dst = &mut df[((b * c + m) * s * s + ky * s + kx) * plane..][..plane];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        for x in x0..x1 {
                            dst[y * w + x] +=
                                gp[y * w + x] * src[sy * w + (x as isize + dx) as usize];
                        }
                    }
                }
            }
        }
    }
}
