//! Discriminator input taps and the multi-head PatchGAN sub-networks.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::nn::{Binding, Conv, InstanceNorm, Padding, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::imgproc::{
    self, gaussian_kernel, BLUR_KERNEL_SIZE, DX_KERNEL, DY_KERNEL, LUMA_WEIGHTS,
};

/// What a discriminator sub-network looks at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DiscKind {
    /// Blurred RGB.
    Color,
    /// Grayscale.
    Luminance,
    /// x/y derivatives of the skip-downsampled grayscale.
    Gradient,
    /// Magnitude and orientation of those derivatives.
    Magnitude,
}

impl DiscKind {
    pub const ALL: [DiscKind; 4] = [
        DiscKind::Color,
        DiscKind::Luminance,
        DiscKind::Gradient,
        DiscKind::Magnitude,
    ];

    pub fn letter(self) -> char {
        match self {
            DiscKind::Color => 'C',
            DiscKind::Luminance => 'L',
            DiscKind::Gradient => 'G',
            DiscKind::Magnitude => 'M',
        }
    }

    pub fn from_letter(c: char) -> Result<Self> {
        match c.to_ascii_uppercase() {
            'C' => Ok(DiscKind::Color),
            'L' => Ok(DiscKind::Luminance),
            'G' => Ok(DiscKind::Gradient),
            'M' => Ok(DiscKind::Magnitude),
            other => Err(Error::invalid(format!(
                "unknown discriminator kind {other:?}; expected one of C, L, G, M"
            ))),
        }
    }

    pub fn channels(self) -> usize {
        match self {
            DiscKind::Color => 3,
            DiscKind::Luminance => 1,
            DiscKind::Gradient | DiscKind::Magnitude => 2,
        }
    }
}

/// Non-empty set of sub-network kinds, kept sorted and unique.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DiscSet(Vec<DiscKind>);

impl DiscSet {
    pub fn new(kinds: impl IntoIterator<Item = DiscKind>) -> Result<Self> {
        let mut v: Vec<DiscKind> = kinds.into_iter().collect();
        v.sort();
        v.dedup();
        if v.is_empty() {
            return Err(Error::invalid("the discriminator selector must not be empty"));
        }
        Ok(DiscSet(v))
    }

    pub fn kinds(&self) -> &[DiscKind] {
        &self.0
    }

    pub fn contains(&self, k: DiscKind) -> bool {
        self.0.contains(&k)
    }

    /// The color tap is blurred only alongside a luminance sub-network, which
    /// then carries the fine texture.
    pub fn tap(&self) -> Tap {
        Tap {
            blur_color: self.contains(DiscKind::Luminance),
        }
    }
}

impl Default for DiscSet {
    fn default() -> Self {
        DiscSet(vec![DiscKind::Color, DiscKind::Luminance, DiscKind::Gradient])
    }
}

impl fmt::Display for DiscSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.iter().try_for_each(|k| write!(f, "{}", k.letter()))
    }
}

impl FromStr for DiscSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kinds = s
            .chars()
            .filter(|c| !matches!(c, ',' | ' ' | '{' | '}'))
            .map(DiscKind::from_letter)
            .collect::<Result<Vec<_>>>()?;
        DiscSet::new(kinds)
    }
}

/// Tap options shared by every sub-network of one discriminator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tap {
    pub blur_color: bool,
}

impl Default for Tap {
    fn default() -> Self {
        Tap { blur_color: true }
    }
}

/// Build the input of one sub-network from a `[-1, 1]` image, outside of any
/// graph. Matches [`tap_in_graph`].
pub fn disc_features(img: &Image, kind: DiscKind, tap: Tap) -> Result<Tensor> {
    if img.channels() != 3 {
        return Err(Error::invalid("discriminator taps need an RGB image"));
    }
    let planes = |imgs: &[&Image]| {
        let (h, w) = (imgs[0].height(), imgs[0].width());
        let data: Vec<f64> = imgs.iter().flat_map(|i| i.to_planar()).collect();
        Tensor::new(vec![imgs.len() * imgs[0].channels(), h, w], data)
    };
    match kind {
        DiscKind::Color if tap.blur_color => planes(&[&imgproc::gaussian_blur(
            img,
            BLUR_KERNEL_SIZE,
            imgproc::BLUR_SIGMA,
        )?]),
        DiscKind::Color => planes(&[img]),
        DiscKind::Luminance => planes(&[&imgproc::to_grayscale(img)?]),
        DiscKind::Gradient | DiscKind::Magnitude => {
            let g = imgproc::xy_gradients(&imgproc::downsample_skip(&imgproc::to_grayscale(img)?)?)?;
            if kind == DiscKind::Gradient {
                planes(&[&g.gx, &g.gy])
            } else {
                let (m, o) = imgproc::grad_mag_orient(&g);
                planes(&[&m, &o])
            }
        }
    }
}

/// Keeps the magnitude derivative finite at zero gradient.
const MAGNITUDE_EPS: f64 = 1e-12;

/// Differentiable version of [`disc_features`] on a `[3, H, W]` variable.
pub fn tap_in_graph(tape: &mut Tape, x: Var, kind: DiscKind, tap: Tap) -> Result<Var> {
    let gray = |tape: &mut Tape| {
        let w = tape.constant(Tensor::new(vec![1, 3, 1, 1], LUMA_WEIGHTS.to_vec())?);
        tape.conv2d(x, w, None, 1, 0)
    };
    match kind {
        DiscKind::Color if tap.blur_color => {
            let k = gaussian_kernel(BLUR_KERNEL_SIZE, imgproc::BLUR_SIGMA)?;
            let kk = BLUR_KERNEL_SIZE * BLUR_KERNEL_SIZE;
            let mut w = vec![0.0; 3 * 3 * kk];
            for c in 0..3 {
                w[(c * 3 + c) * kk..(c * 3 + c + 1) * kk].copy_from_slice(&k);
            }
            let w = tape.constant(Tensor::new(
                vec![3, 3, BLUR_KERNEL_SIZE, BLUR_KERNEL_SIZE],
                w,
            )?);
            let padded = tape.replicate_pad(x, BLUR_KERNEL_SIZE / 2)?;
            tape.conv2d(padded, w, None, 1, 0)
        }
        DiscKind::Color => Ok(x),
        DiscKind::Luminance => gray(tape),
        DiscKind::Gradient | DiscKind::Magnitude => {
            let g = gray(tape)?;
            let small = tape.subsample2(g)?;
            let padded = tape.replicate_pad(small, 1)?;
            let w = tape.constant(Tensor::new(
                vec![2, 1, 3, 3],
                DX_KERNEL.iter().chain(&DY_KERNEL).copied().collect(),
            )?);
            let grads = tape.conv2d(padded, w, None, 1, 0)?;
            if kind == DiscKind::Gradient {
                return Ok(grads);
            }
            let gx = tape.select_channel(grads, 0)?;
            let gy = tape.select_channel(grads, 1)?;
            let gx2 = tape.square(gx);
            let gy2 = tape.square(gy);
            let s = tape.add(gx2, gy2)?;
            let mag = tape.sqrt(s, MAGNITUDE_EPS);
            let ori = tape.atan2(gy, gx)?;
            tape.concat(&[mag, ori])
        }
    }
}

pub const LEAKY_SLOPE: f64 = 0.2;

/// Stride-2 conv stack with a one-channel decision head after every stride-2
/// layer, then two stride-1 convs ending in a final decision map.
#[derive(Clone, Debug)]
struct SubNet {
    kind: DiscKind,
    downs: Vec<(Conv, Option<InstanceNorm>, Conv)>,
    mid: (Conv, InstanceNorm),
    last: Conv,
}

impl SubNet {
    fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        kind: DiscKind,
        in_ch: usize,
        shape: DiscShape,
    ) -> Self {
        let n = shape.base_width;
        let mut ch = in_ch;
        let mut downs = Vec::new();
        for i in 0..shape.downsamples {
            let out = n * (1 << i).min(8);
            let conv = Conv::new(store, rng, &format!("{name}.down{i}"), ch, out, 4, 2, 1, Padding::Zero, true);
            let norm = (i > 0).then(|| InstanceNorm::new(store, rng, &format!("{name}.down{i}.norm"), out));
            let head = Conv::new(store, rng, &format!("{name}.head{i}"), out, 1, 1, 1, 0, Padding::Zero, true);
            downs.push((conv, norm, head));
            ch = out;
        }
        let out = n * (1 << shape.downsamples).min(8);
        let mid = (
            Conv::new(store, rng, &format!("{name}.mid"), ch, out, 4, 1, 1, Padding::Zero, true),
            InstanceNorm::new(store, rng, &format!("{name}.mid.norm"), out),
        );
        let last = Conv::new(store, rng, &format!("{name}.last"), out, 1, 4, 1, 1, Padding::Zero, true);
        SubNet {
            kind,
            downs,
            mid,
            last,
        }
    }

    fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Vec<Var>> {
        let mut maps = Vec::with_capacity(self.downs.len() + 1);
        let mut y = x;
        for (conv, norm, head) in &self.downs {
            y = conv.forward(tape, p, y)?;
            if let Some(norm) = norm {
                y = norm.forward(tape, p, y)?;
            }
            y = tape.leaky_relu(y, LEAKY_SLOPE);
            maps.push(head.forward(tape, p, y)?);
        }
        y = self.mid.0.forward(tape, p, y)?;
        y = self.mid.1.forward(tape, p, y)?;
        y = tape.leaky_relu(y, LEAKY_SLOPE);
        maps.push(self.last.forward(tape, p, y)?);
        Ok(maps)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiscShape {
    pub base_width: usize,
    /// Stride-2 layers, each with its own decision head.
    pub downsamples: usize,
}

impl DiscShape {
    /// Decision maps per sub-network.
    pub fn heads(&self) -> usize {
        self.downsamples + 1
    }
}

/// Decision maps of one sub-network, coarsest last.
#[derive(Clone, Debug)]
pub struct Decisions {
    pub kind: DiscKind,
    pub maps: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    set: DiscSet,
    shape: DiscShape,
    params: ParamStore,
    nets: Vec<SubNet>,
}

impl Discriminator {
    pub fn new(name: &str, set: &DiscSet, shape: DiscShape, rng: &mut impl Rng) -> Result<Self> {
        if shape.base_width == 0 || shape.downsamples == 0 {
            return Err(Error::invalid(
                "discriminator width and stride-2 layer count must be positive",
            ));
        }
        let mut params = ParamStore::new();
        let nets = set
            .kinds()
            .iter()
            .map(|&k| {
                SubNet::new(
                    &mut params,
                    rng,
                    &format!("{name}.{}", k.letter()),
                    k,
                    k.channels(),
                    shape,
                )
            })
            .collect();
        Ok(Discriminator {
            set: set.clone(),
            shape,
            params,
            nets,
        })
    }

    pub fn set(&self) -> &DiscSet {
        &self.set
    }

    pub fn shape(&self) -> DiscShape {
        self.shape
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Decision maps of every sub-network for a `[3, H, W]` image in `[-1, 1]`.
    pub fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Vec<Decisions>> {
        let tap = self.set.tap();
        self.nets
            .iter()
            .map(|net| {
                let input = tap_in_graph(tape, x, net.kind, tap)?;
                Ok(Decisions {
                    kind: net.kind,
                    maps: net.forward(tape, p, input)?,
                })
            })
            .collect()
    }
}
