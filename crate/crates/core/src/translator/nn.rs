//! Named parameter storage, the layer building blocks, and the optimizer.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    /// Overwrite a parameter by name, checking that the shape is unchanged.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let idx = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Load(format!("unknown parameter {name}")))?;
        if self.values[idx].shape() != value.shape() {
            return Err(Error::Load(format!(
                "parameter {name}: shape {:?} does not match {:?}",
                value.shape(),
                self.values[idx].shape()
            )));
        }
        self.values[idx] = value;
        Ok(())
    }

    /// Place every parameter on the tape, trainable or frozen.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Binding {
        Binding(
            self.values
                .iter()
                .map(|v| tape.leaf(v.clone(), trainable))
                .collect(),
        )
    }
}

/// Tape handles of a [`ParamStore`], index-aligned with it.
pub struct Binding(Vec<Var>);

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

fn gaussian(rng: &mut impl Rng, shape: &[usize], mean: f64, std: f64) -> Tensor {
    let normal = Normal::new(mean, std).expect("positive std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| normal.sample(rng)).collect()).expect("shape")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Zero,
    Reflect,
}

/// Weight init: zero-mean Gaussian with this standard deviation.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug)]
pub struct Conv {
    weight: ParamId,
    bias: Option<ParamId>,
    stride: usize,
    pad: usize,
    padding: Padding,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        padding: Padding,
        bias: bool,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            gaussian(rng, &[out_ch, in_ch, kernel, kernel], 0.0, INIT_STD),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch])));
        Conv {
            weight,
            bias,
            stride,
            pad,
            padding,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Var> {
        let bias = self.bias.map(|b| p.var(b));
        match self.padding {
            Padding::Zero => tape.conv2d(x, p.var(self.weight), bias, self.stride, self.pad),
            Padding::Reflect => {
                let padded = if self.pad > 0 {
                    tape.reflect_pad(x, self.pad)?
                } else {
                    x
                };
                tape.conv2d(padded, p.var(self.weight), bias, self.stride, 0)
            }
        }
    }
}

/// Transposed convolution, kernel 4 stride 2 padding 1 doubles the map size.
#[derive(Clone, Debug)]
pub struct Deconv {
    weight: ParamId,
    bias: Option<ParamId>,
    stride: usize,
    pad: usize,
}

impl Deconv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            gaussian(rng, &[in_ch, out_ch, kernel, kernel], 0.0, INIT_STD),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch])));
        Deconv {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Var> {
        let bias = self.bias.map(|b| p.var(b));
        tape.conv_transpose2d(x, p.var(self.weight), bias, self.stride, self.pad, 0)
    }
}

/// Instance normalization followed by a learned per-channel affine map.
#[derive(Clone, Debug)]
pub struct InstanceNorm {
    scale: ParamId,
    shift: ParamId,
}

pub const NORM_EPS: f64 = 1e-5;

impl InstanceNorm {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, channels: usize) -> Self {
        InstanceNorm {
            scale: store.add(
                format!("{name}.scale"),
                gaussian(rng, &[channels], 1.0, INIT_STD),
            ),
            shift: store.add(format!("{name}.shift"), Tensor::zeros(&[channels])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Var> {
        let normed = tape.instance_norm(x, NORM_EPS)?;
        tape.channel_affine(normed, p.var(self.scale), p.var(self.shift))
    }
}

#[derive(Clone, Debug)]
pub struct PRelu {
    slope: ParamId,
}

impl PRelu {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        PRelu {
            slope: store.add(format!("{name}.slope"), Tensor::filled(&[channels], 0.25)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Var> {
        tape.prelu(x, p.var(self.slope))
    }
}

/// Adam with per-parameter first and second moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m: store.values.iter().map(|t| vec![0.0; t.len()]).collect(),
            v: store.values.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    /// Apply one update. `grads[i]` belongs to parameter `i`; `None` means zero.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, param) in store.values.iter_mut().enumerate() {
            let Some(g) = grads.get(i).and_then(Option::as_ref) else {
                continue;
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &gv), mv), vv) in param
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *w -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
