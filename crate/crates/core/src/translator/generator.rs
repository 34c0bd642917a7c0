//! Encoder/decoder generator with residual blocks and instance normalization.

use rand::Rng;

use super::nn::{Binding, Conv, Deconv, InstanceNorm, PRelu, Padding, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Conv -> InstanceNorm -> PReLU.
#[derive(Clone, Debug)]
struct ConvUnit {
    conv: Conv,
    norm: InstanceNorm,
    act: PRelu,
}

impl ConvUnit {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        padding: Padding,
    ) -> Self {
        ConvUnit {
            conv: Conv::new(
                store,
                rng,
                &format!("{name}.conv"),
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
                padding,
                false,
            ),
            norm: InstanceNorm::new(store, rng, &format!("{name}.norm"), out_ch),
            act: PRelu::new(store, &format!("{name}.act"), out_ch),
        }
    }

    fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Var> {
        let y = self.conv.forward(tape, p, x)?;
        let y = self.norm.forward(tape, p, y)?;
        self.act.forward(tape, p, y)
    }
}

#[derive(Clone, Debug)]
struct DeconvUnit {
    deconv: Deconv,
    norm: InstanceNorm,
    act: PRelu,
}

impl DeconvUnit {
    fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
    ) -> Self {
        DeconvUnit {
            deconv: Deconv::new(store, rng, &format!("{name}.deconv"), in_ch, out_ch, 4, 2, 1, false),
            norm: InstanceNorm::new(store, rng, &format!("{name}.norm"), out_ch),
            act: PRelu::new(store, &format!("{name}.act"), out_ch),
        }
    }

    fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Var> {
        let y = self.deconv.forward(tape, p, x)?;
        let y = self.norm.forward(tape, p, y)?;
        self.act.forward(tape, p, y)
    }
}

/// `x + IN(conv(PReLU(IN(conv(x)))))`.
#[derive(Clone, Debug)]
struct ResBlock {
    first: ConvUnit,
    conv: Conv,
    norm: InstanceNorm,
}

impl ResBlock {
    fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, channels: usize) -> Self {
        ResBlock {
            first: ConvUnit::new(
                store,
                rng,
                &format!("{name}.a"),
                channels,
                channels,
                3,
                1,
                1,
                Padding::Zero,
            ),
            conv: Conv::new(
                store,
                rng,
                &format!("{name}.b.conv"),
                channels,
                channels,
                3,
                1,
                1,
                Padding::Zero,
                false,
            ),
            norm: InstanceNorm::new(store, rng, &format!("{name}.b.norm"), channels),
        }
    }

    fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Var> {
        let y = self.first.forward(tape, p, x)?;
        let y = self.conv.forward(tape, p, y)?;
        let y = self.norm.forward(tape, p, y)?;
        tape.add(x, y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorShape {
    /// Channel count of the first layer; later layers use 2x and 4x.
    pub base_width: usize,
    /// Residual blocks in each of the encoder and decoder halves.
    pub resblocks: usize,
}

#[derive(Clone, Debug)]
pub struct Generator {
    shape: GeneratorShape,
    params: ParamStore,
    encoder: Vec<ConvUnit>,
    encoder_res: Vec<ResBlock>,
    decoder_res: Vec<ResBlock>,
    upsample: Vec<DeconvUnit>,
    output: Conv,
}

impl Generator {
    pub fn new(name: &str, shape: GeneratorShape, rng: &mut impl Rng) -> Result<Self> {
        if shape.base_width == 0 {
            return Err(Error::invalid("generator base width must be positive"));
        }
        let n = shape.base_width;
        let mut store = ParamStore::new();
        let p = |s: &str| format!("{name}.{s}");
        let encoder = vec![
            ConvUnit::new(&mut store, rng, &p("enc0"), 3, n, 7, 1, 3, Padding::Reflect),
            ConvUnit::new(&mut store, rng, &p("enc1"), n, 2 * n, 3, 2, 1, Padding::Zero),
            ConvUnit::new(&mut store, rng, &p("enc2"), 2 * n, 4 * n, 3, 2, 1, Padding::Zero),
        ];
        let encoder_res = (0..shape.resblocks)
            .map(|i| ResBlock::new(&mut store, rng, &p(&format!("enc_res{i}")), 4 * n))
            .collect();
        let decoder_res = (0..shape.resblocks)
            .map(|i| ResBlock::new(&mut store, rng, &p(&format!("dec_res{i}")), 4 * n))
            .collect();
        let upsample = vec![
            DeconvUnit::new(&mut store, rng, &p("dec0"), 4 * n, 2 * n),
            DeconvUnit::new(&mut store, rng, &p("dec1"), 2 * n, n),
        ];
        let output = Conv::new(
            &mut store,
            rng,
            &p("out"),
            n,
            3,
            7,
            1,
            3,
            Padding::Reflect,
            true,
        );
        Ok(Generator {
            shape,
            params: store,
            encoder,
            encoder_res,
            decoder_res,
            upsample,
            output,
        })
    }

    pub fn shape(&self) -> GeneratorShape {
        self.shape
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Map a `[3, H, W]` image in `[-1, 1]` to one of the same size. `H` and
    /// `W` must be multiples of 4.
    pub fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Var> {
        let (c, h, w) = tape.value(x).chw();
        if c != 3 || h % 4 != 0 || w % 4 != 0 {
            return Err(Error::invalid(format!(
                "generator input must be [3, 4m, 4n], got [{c}, {h}, {w}]"
            )));
        }
        let mut y = x;
        for unit in &self.encoder {
            y = unit.forward(tape, p, y)?;
        }
        for block in self.encoder_res.iter().chain(&self.decoder_res) {
            y = block.forward(tape, p, y)?;
        }
        for unit in &self.upsample {
            y = unit.forward(tape, p, y)?;
        }
        let y = self.output.forward(tape, p, y)?;
        Ok(tape.tanh(y))
    }
}
