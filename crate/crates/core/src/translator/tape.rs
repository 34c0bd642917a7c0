//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding
//! its value and the parent links needed to push gradients back.
//! [`Tape::backward`] walks the nodes in reverse creation order, which is a
//! valid topological order because parents always precede children.
//!
//! ```
//! use nightshift::translator::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::new(vec![2], vec![3.0, -1.0]).unwrap());
//! let y = tape.square(x);
//! let loss = tape.mean(y);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[3.0, -1.0]);
//! ```

use super::tensor::{gemm, Tensor, Window};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        window: Window,
        cols: Option<Vec<f64>>,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        window: Window,
    },
    /// `out[i] = input[index[i]]`; padding, flips and subsampling.
    Gather {
        input: Var,
        index: Vec<u32>,
    },
    InstanceNorm {
        input: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ChannelAffine {
        input: Var,
        scale: Var,
        shift: Var,
    },
    PRelu {
        input: Var,
        slope: Var,
    },
    LeakyRelu {
        input: Var,
        slope: f64,
    },
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Square(Var),
    Abs(Var),
    Mean(Var),
    Sqrt(Var),
    Atan2 {
        y: Var,
        x: Var,
    },
    Concat(Vec<Var>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar with respect to every leaf that requires them.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_check(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "{what}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn rank3(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    if t.shape().len() != 3 {
        return Err(Error::invalid(format!(
            "{what}: expected a [C, H, W] tensor, got shape {:?}",
            t.shape()
        )));
    }
    Ok(t.chw())
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient (inputs, fixed kernels, detached fakes).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// 2-D cross-correlation with zero padding. `weight` is `[Co, Ci, k, k]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let (ci, h, wd) = rank3(x, "conv2d input")?;
        if w.shape().len() != 4 || w.shape()[1] != ci || w.shape()[2] != w.shape()[3] {
            return Err(Error::invalid(format!(
                "conv2d weight {:?} incompatible with {ci} input channels",
                w.shape()
            )));
        }
        let co = w.shape()[0];
        let window = Window::new((ci, h, wd), w.shape()[2], stride, pad)?;
        if let Some(b) = bias {
            if self.value(b).len() != co {
                return Err(Error::invalid("conv2d bias length differs from output channels"));
            }
        }
        let cols = window.im2col(x.data());
        let n = window.cols();
        let mut out = vec![0.0; co * n];
        gemm(co, window.rows(), n, w.data(), false, &cols, false, &mut out, false);
        if let Some(b) = bias {
            for (c, &bv) in self.value(b).data().iter().enumerate() {
                out[c * n..(c + 1) * n].iter_mut().for_each(|v| *v += bv);
            }
        }
        let needs = self.needs(&[input, weight]) || bias.is_some_and(|b| self.needs(&[b]));
        let keep_cols = self.nodes[weight.0].needs_grad;
        let value = Tensor::new(vec![co, window.out_h, window.out_w], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                window,
                cols: keep_cols.then_some(cols),
            },
            needs,
        ))
    }

    /// Transposed convolution (fractionally strided). `weight` is `[Ci, Co, k, k]`;
    /// output size is `(H - 1) * stride - 2 * pad + k + output_pad`.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let (ci, h, wd) = rank3(x, "conv_transpose2d input")?;
        if w.shape().len() != 4 || w.shape()[0] != ci || w.shape()[2] != w.shape()[3] {
            return Err(Error::invalid(format!(
                "conv_transpose2d weight {:?} incompatible with {ci} input channels",
                w.shape()
            )));
        }
        if output_pad >= stride {
            return Err(Error::invalid("output padding must be smaller than stride"));
        }
        let co = w.shape()[1];
        let k = w.shape()[2];
        let out_h = ((h - 1) * stride + k + output_pad)
            .checked_sub(2 * pad)
            .ok_or_else(|| Error::invalid("conv_transpose2d padding too large"))?;
        let out_w = ((wd - 1) * stride + k + output_pad)
            .checked_sub(2 * pad)
            .ok_or_else(|| Error::invalid("conv_transpose2d padding too large"))?;
        let window = Window::new((co, out_h, out_w), k, stride, pad)?;
        debug_assert_eq!((window.out_h, window.out_w), (h, wd));
        let n = h * wd;
        let mut cols = vec![0.0; window.rows() * n];
        gemm(window.rows(), ci, n, w.data(), true, x.data(), false, &mut cols, false);
        let mut out = vec![0.0; co * out_h * out_w];
        window.col2im(&cols, &mut out);
        if let Some(b) = bias {
            let bias = self.value(b);
            if bias.len() != co {
                return Err(Error::invalid(
                    "conv_transpose2d bias length differs from output channels",
                ));
            }
            let plane = out_h * out_w;
            for (c, &bv) in bias.data().iter().enumerate() {
                out[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v += bv);
            }
        }
        let needs = self.needs(&[input, weight]) || bias.is_some_and(|b| self.needs(&[b]));
        let value = Tensor::new(vec![co, out_h, out_w], out)?;
        Ok(self.push(
            value,
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                window,
            },
            needs,
        ))
    }

    fn gather(&mut self, input: Var, shape: Vec<usize>, index: Vec<u32>) -> Result<Var> {
        let src = self.value(input).data();
        let data: Vec<f64> = index.iter().map(|&i| src[i as usize]).collect();
        let value = Tensor::new(shape, data)?;
        let needs = self.needs(&[input]);
        Ok(self.push(value, Op::Gather { input, index }, needs))
    }

    fn pad_with(&mut self, input: Var, pad: usize, map: fn(isize, usize) -> usize) -> Result<Var> {
        let (c, h, w) = rank3(self.value(input), "pad")?;
        let (oh, ow) = (h + 2 * pad, w + 2 * pad);
        let mut index = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for y in 0..oh {
                let sy = map(y as isize - pad as isize, h);
                for x in 0..ow {
                    let sx = map(x as isize - pad as isize, w);
                    index.push(((ch * h + sy) * w + sx) as u32);
                }
            }
        }
        self.gather(input, vec![c, oh, ow], index)
    }

    /// Mirror padding without repeating the edge pixel.
    pub fn reflect_pad(&mut self, input: Var, pad: usize) -> Result<Var> {
        let (_, h, w) = rank3(self.value(input), "reflect_pad")?;
        if pad >= h || pad >= w {
            return Err(Error::invalid(format!(
                "reflection padding {pad} needs a map larger than {h}x{w}"
            )));
        }
        self.pad_with(input, pad, |i, n| reflect(i, n))
    }

    /// Padding that repeats the border pixel.
    pub fn replicate_pad(&mut self, input: Var, pad: usize) -> Result<Var> {
        self.pad_with(input, pad, |i, n| i.clamp(0, n as isize - 1) as usize)
    }

    /// Keep every other row and column, starting at the first.
    pub fn subsample2(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = rank3(self.value(input), "subsample2")?;
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let mut index = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    index.push(((ch * h + 2 * y) * w + 2 * x) as u32);
                }
            }
        }
        self.gather(input, vec![c, oh, ow], index)
    }

    pub fn hflip(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = rank3(self.value(input), "hflip")?;
        let mut index = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    index.push(((ch * h + y) * w + (w - 1 - x)) as u32);
                }
            }
        }
        self.gather(input, vec![c, h, w], index)
    }

    pub fn select_channel(&mut self, input: Var, channel: usize) -> Result<Var> {
        let (c, h, w) = rank3(self.value(input), "select_channel")?;
        if channel >= c {
            return Err(Error::invalid(format!("channel {channel} out of range for {c}")));
        }
        let base = channel * h * w;
        let index = (0..h * w).map(|i| (base + i) as u32).collect();
        self.gather(input, vec![1, h, w], index)
    }

    /// Per-sample, per-channel normalization to zero mean and unit variance.
    pub fn instance_norm(&mut self, input: Var, eps: f64) -> Result<Var> {
        let (c, h, w) = rank3(self.value(input), "instance_norm")?;
        let n = h * w;
        let x = self.value(input).data();
        let mut normalized = vec![0.0; c * n];
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let plane = &x[ch * n..(ch + 1) * n];
            let mean = plane.iter().sum::<f64>() / n as f64;
            let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[ch] = inv;
            for (o, v) in normalized[ch * n..(ch + 1) * n].iter_mut().zip(plane) {
                *o = (v - mean) * inv;
            }
        }
        let value = Tensor::new(vec![c, h, w], normalized.clone())?;
        let needs = self.needs(&[input]);
        Ok(self.push(
            value,
            Op::InstanceNorm {
                input,
                normalized,
                inv_std,
            },
            needs,
        ))
    }

    /// `out[c] = input[c] * scale[c] + shift[c]`.
    pub fn channel_affine(&mut self, input: Var, scale: Var, shift: Var) -> Result<Var> {
        let (c, h, w) = rank3(self.value(input), "channel_affine")?;
        if self.value(scale).len() != c || self.value(shift).len() != c {
            return Err(Error::invalid("channel_affine parameters differ from channel count"));
        }
        let n = h * w;
        let s = self.value(scale).data();
        let b = self.value(shift).data();
        let mut out = self.value(input).data().to_vec();
        for ch in 0..c {
            out[ch * n..(ch + 1) * n]
                .iter_mut()
                .for_each(|v| *v = *v * s[ch] + b[ch]);
        }
        let value = Tensor::new(vec![c, h, w], out)?;
        let needs = self.needs(&[input, scale, shift]);
        Ok(self.push(value, Op::ChannelAffine { input, scale, shift }, needs))
    }

    /// Parametric ReLU with one learnable negative slope per channel.
    pub fn prelu(&mut self, input: Var, slope: Var) -> Result<Var> {
        let (c, h, w) = rank3(self.value(input), "prelu")?;
        if self.value(slope).len() != c {
            return Err(Error::invalid("prelu slope count differs from channel count"));
        }
        let n = h * w;
        let a = self.value(slope).data();
        let mut out = self.value(input).data().to_vec();
        for ch in 0..c {
            out[ch * n..(ch + 1) * n].iter_mut().for_each(|v| {
                if *v <= 0.0 {
                    *v *= a[ch];
                }
            });
        }
        let value = Tensor::new(vec![c, h, w], out)?;
        let needs = self.needs(&[input, slope]);
        Ok(self.push(value, Op::PRelu { input, slope }, needs))
    }

    fn map(&mut self, input: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let src = self.value(input);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(&[input]);
        self.push(value, op, needs)
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Var {
        self.map(input, Op::LeakyRelu { input, slope }, |v| {
            if v > 0.0 {
                v
            } else {
                v * slope
            }
        })
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        self.map(input, Op::Tanh(input), f64::tanh)
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        self.map(input, Op::Scale(input, factor), |v| v * factor)
    }

    /// Add a constant to every element.
    pub fn offset(&mut self, input: Var, delta: f64) -> Var {
        self.map(input, Op::Offset(input), |v| v + delta)
    }

    pub fn square(&mut self, input: Var) -> Var {
        self.map(input, Op::Square(input), |v| v * v)
    }

    pub fn abs(&mut self, input: Var) -> Var {
        self.map(input, Op::Abs(input), f64::abs)
    }

    /// `sqrt(x + eps)`; `eps` keeps the derivative finite at zero.
    pub fn sqrt(&mut self, input: Var, eps: f64) -> Var {
        self.map(input, Op::Sqrt(input), move |v| (v + eps).sqrt())
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let src = self.value(input);
        let m = src.data().iter().sum::<f64>() / src.len() as f64;
        let needs = self.needs(&[input]);
        self.push(Tensor::scalar(m), Op::Mean(input), needs)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        what: &str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        shape_check(x, y, what)?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(value, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Op::Add(a, b), |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", Op::Sub(a, b), |p, q| p - q)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", Op::Mul(a, b), |p, q| p * q)
    }

    /// Elementwise `atan2(y, x)` in `(-pi, pi]`, with `atan2(0, 0) = 0`.
    pub fn atan2(&mut self, y: Var, x: Var) -> Result<Var> {
        self.binary(y, x, "atan2", Op::Atan2 { y, x }, |p, q| {
            if p == 0.0 && q == 0.0 {
                0.0
            } else {
                p.atan2(q)
            }
        })
    }

    /// Stack `[C_i, H, W]` maps along the channel axis.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::invalid("concat of nothing"))?;
        let (_, h, w) = rank3(self.value(*first), "concat")?;
        let mut channels = 0;
        let mut data = Vec::new();
        for v in inputs {
            let (c, hh, ww) = rank3(self.value(*v), "concat")?;
            if (hh, ww) != (h, w) {
                return Err(Error::invalid("concat spatial size mismatch"));
            }
            channels += c;
            data.extend_from_slice(self.value(*v).data());
        }
        let value = Tensor::new(vec![channels, h, w], data)?;
        let needs = self.needs(inputs);
        Ok(self.push(value, Op::Concat(inputs.to_vec()), needs))
    }

    /// Gradients of the scalar `root` with respect to every trainable leaf.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::filled(root_value.shape(), 1.0));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, g.data(), &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, contribution: Vec<f64>) {
        if !self.nodes[var.0].needs_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => existing.add_assign(&contribution),
            slot @ None => {
                let shape = self.nodes[var.0].value.shape().to_vec();
                *slot = Some(Tensor::new(shape, contribution).expect("gradient shape"));
            }
        }
    }

    fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Tensor>]) {
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                window,
                cols,
            } => {
                let co = self.value(*weight).shape()[0];
                let n = window.cols();
                let k = window.rows();
                if let Some(b) = bias {
                    if self.wants(*b) {
                        let db = (0..co).map(|c| g[c * n..(c + 1) * n].iter().sum()).collect();
                        self.accumulate(grads, *b, db);
                    }
                }
                if self.wants(*weight) {
                    let cols = cols.as_ref().expect("columns saved for trainable weight");
                    let mut dw = vec![0.0; co * k];
                    gemm(co, n, k, g, false, cols, true, &mut dw, false);
                    self.accumulate(grads, *weight, dw);
                }
                if self.wants(*input) {
                    let mut dcols = vec![0.0; k * n];
                    gemm(k, co, n, self.value(*weight).data(), true, g, false, &mut dcols, false);
                    let mut dx = vec![0.0; self.value(*input).len()];
                    window.col2im(&dcols, &mut dx);
                    self.accumulate(grads, *input, dx);
                }
            }
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                window,
            } => {
                let ci = self.value(*input).shape()[0];
                let n = window.cols();
                let k = window.rows();
                if let Some(b) = bias {
                    if self.wants(*b) {
                        let plane = window.height * window.width;
                        let db = (0..window.channels)
                            .map(|c| g[c * plane..(c + 1) * plane].iter().sum())
                            .collect();
                        self.accumulate(grads, *b, db);
                    }
                }
                let need_x = self.wants(*input);
                let need_w = self.wants(*weight);
                if need_x || need_w {
                    let dcols = window.im2col(g);
                    if need_w {
                        let mut dw = vec![0.0; ci * k];
                        gemm(ci, n, k, self.value(*input).data(), false, &dcols, true, &mut dw, false);
                        self.accumulate(grads, *weight, dw);
                    }
                    if need_x {
                        let mut dx = vec![0.0; ci * n];
                        gemm(ci, k, n, self.value(*weight).data(), false, &dcols, false, &mut dx, false);
                        self.accumulate(grads, *input, dx);
                    }
                }
            }
            Op::Gather { input, index } => {
                let mut dx = vec![0.0; self.value(*input).len()];
                for (&i, &gv) in index.iter().zip(g) {
                    dx[i as usize] += gv;
                }
                self.accumulate(grads, *input, dx);
            }
            Op::InstanceNorm {
                input,
                normalized,
                inv_std,
            } => {
                let (c, h, w) = self.value(*input).chw();
                let n = h * w;
                let nf = n as f64;
                let mut dx = vec![0.0; c * n];
                for ch in 0..c {
                    let gs = &g[ch * n..(ch + 1) * n];
                    let xs = &normalized[ch * n..(ch + 1) * n];
                    let sum_g: f64 = gs.iter().sum();
                    let sum_gx: f64 = gs.iter().zip(xs).map(|(a, b)| a * b).sum();
                    let scale = inv_std[ch] / nf;
                    for ((d, &gv), &xv) in dx[ch * n..(ch + 1) * n].iter_mut().zip(gs).zip(xs) {
                        *d = scale * (nf * gv - sum_g - xv * sum_gx);
                    }
                }
                self.accumulate(grads, *input, dx);
            }
            Op::ChannelAffine {
                input,
                scale,
                shift,
            } => {
                let x = self.value(*input);
                let (c, h, w) = x.chw();
                let n = h * w;
                let s = self.value(*scale).data();
                if self.wants(*input) {
                    let mut dx = g.to_vec();
                    for ch in 0..c {
                        dx[ch * n..(ch + 1) * n].iter_mut().for_each(|v| *v *= s[ch]);
                    }
                    self.accumulate(grads, *input, dx);
                }
                if self.wants(*scale) {
                    let ds = (0..c)
                        .map(|ch| {
                            g[ch * n..(ch + 1) * n]
                                .iter()
                                .zip(&x.data()[ch * n..(ch + 1) * n])
                                .map(|(a, b)| a * b)
                                .sum()
                        })
                        .collect();
                    self.accumulate(grads, *scale, ds);
                }
                if self.wants(*shift) {
                    let db = (0..c).map(|ch| g[ch * n..(ch + 1) * n].iter().sum()).collect();
                    self.accumulate(grads, *shift, db);
                }
            }
            Op::PRelu { input, slope } => {
                let x = self.value(*input);
                let (c, h, w) = x.chw();
                let n = h * w;
                let a = self.value(*slope).data();
                if self.wants(*input) {
                    let mut dx = g.to_vec();
                    for ch in 0..c {
                        for (d, &xv) in dx[ch * n..(ch + 1) * n]
                            .iter_mut()
                            .zip(&x.data()[ch * n..(ch + 1) * n])
                        {
                            if xv <= 0.0 {
                                *d *= a[ch];
                            }
                        }
                    }
                    self.accumulate(grads, *input, dx);
                }
                if self.wants(*slope) {
                    let da = (0..c)
                        .map(|ch| {
                            g[ch * n..(ch + 1) * n]
                                .iter()
                                .zip(&x.data()[ch * n..(ch + 1) * n])
                                .filter(|(_, &xv)| xv <= 0.0)
                                .map(|(gv, xv)| gv * xv)
                                .sum()
                        })
                        .collect();
                    self.accumulate(grads, *slope, da);
                }
            }
            Op::LeakyRelu { input, slope } => {
                let x = self.value(*input).data();
                let dx = g
                    .iter()
                    .zip(x)
                    .map(|(&gv, &xv)| if xv > 0.0 { gv } else { gv * slope })
                    .collect();
                self.accumulate(grads, *input, dx);
            }
            Op::Tanh(input) => {
                let dx = g.iter().zip(out).map(|(gv, y)| gv * (1.0 - y * y)).collect();
                self.accumulate(grads, *input, dx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, g.iter().zip(y).map(|(gv, yv)| gv * yv).collect());
                self.accumulate(grads, *b, g.iter().zip(x).map(|(gv, xv)| gv * xv).collect());
            }
            Op::Scale(input, factor) => {
                self.accumulate(grads, *input, g.iter().map(|v| v * factor).collect());
            }
            Op::Offset(input) => {
                self.accumulate(grads, *input, g.to_vec());
            }
            Op::Square(input) => {
                let x = self.value(*input).data();
                let dx = g.iter().zip(x).map(|(gv, xv)| 2.0 * gv * xv).collect();
                self.accumulate(grads, *input, dx);
            }
            Op::Abs(input) => {
                let x = self.value(*input).data();
                let dx = g
                    .iter()
                    .zip(x)
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else if *xv < 0.0 { -gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *input, dx);
            }
            Op::Mean(input) => {
                let n = self.value(*input).len();
                self.accumulate(grads, *input, vec![g[0] / n as f64; n]);
            }
            Op::Sqrt(input) => {
                let dx = g.iter().zip(out).map(|(gv, y)| 0.5 * gv / y).collect();
                self.accumulate(grads, *input, dx);
            }
            Op::Atan2 { y, x } => {
                let (yv, xv) = (self.value(*y).data(), self.value(*x).data());
                let denom: Vec<f64> = yv.iter().zip(xv).map(|(a, b)| a * a + b * b).collect();
                let safe = |num: f64, d: f64| if d > 0.0 { num / d } else { 0.0 };
                if self.wants(*y) {
                    let dy = g
                        .iter()
                        .zip(xv)
                        .zip(&denom)
                        .map(|((gv, b), d)| gv * safe(*b, *d))
                        .collect();
                    self.accumulate(grads, *y, dy);
                }
                if self.wants(*x) {
                    let dx = g
                        .iter()
                        .zip(yv)
                        .zip(&denom)
                        .map(|((gv, a), d)| -gv * safe(*a, *d))
                        .collect();
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::Concat(inputs) => {
                let mut offset = 0;
                for v in inputs {
                    let len = self.value(*v).len();
                    self.accumulate(grads, *v, g[offset..offset + len].to_vec());
                    offset += len;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv2d_matches_hand_computation() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]));
        let w = tape.constant(t(&[1, 1, 2, 2], &[1., 0., 0., -1.]));
        let y = tape.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 2, 2]);
        assert_eq!(tape.value(y).data(), &[-4., -4., -4., -4.]);
    }

    #[test]
    fn transposed_conv_doubles_spatial_size() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(&[2, 5, 7], 1.0));
        let w = tape.constant(Tensor::filled(&[2, 3, 4, 4], 0.1));
        let y = tape.conv_transpose2d(x, w, None, 2, 1, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[3, 10, 14]);
    }

    #[test]
    fn reflect_pad_mirrors_without_edge_repeat() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 4], &[1., 2., 3., 4.]));
        // Height 1 cannot reflect; use a 3-row map instead.
        assert!(tape.reflect_pad(x, 1).is_err());
        let x = tape.constant(t(&[1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]));
        let y = tape.reflect_pad(x, 1).unwrap();
        let v = tape.value(y).data();
        assert_eq!(&v[0..5], &[5., 4., 5., 6., 5.]);
        assert_eq!(&v[5..10], &[2., 1., 2., 3., 2.]);
    }

    #[test]
    fn instance_norm_standardizes_channels() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin() * 3.0 + i as f64).collect();
        let x = tape.constant(t(&[2, 5, 5], &data));
        let y = tape.instance_norm(x, 1e-5).unwrap();
        for ch in tape.value(y).data().chunks(25) {
            let mean = ch.iter().sum::<f64>() / 25.0;
            let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 25.0;
            assert!(mean.abs() < 1e-4);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(&[3]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2], &[1.0, 2.0]));
        let w = tape.param(t(&[2], &[3.0, 4.0]));
        let y = tape.mul(x, w).unwrap();
        let loss = tape.mean(y);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(x).is_none());
        assert_eq!(grads.get(w).unwrap().data(), &[0.5, 1.0]);
    }

    #[test]
    fn atan2_at_origin_is_zero() {
        let mut tape = Tape::new();
        let y = tape.constant(t(&[2], &[0.0, 1.0]));
        let x = tape.constant(t(&[2], &[0.0, 0.0]));
        let o = tape.atan2(y, x).unwrap();
        assert_eq!(tape.value(o).data()[0], 0.0);
        assert!((tape.value(o).data()[1] - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }
}
