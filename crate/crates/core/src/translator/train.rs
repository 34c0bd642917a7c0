//! Training configuration, the two-generator / two-discriminator model, and
//! the alternating optimization loop.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::disc::{DiscSet, DiscShape, Discriminator};
use super::generator::{Generator, GeneratorShape};
use super::loss::{cycle_loss, total_objective, GanLoss, MsNorm, Perspective};
use super::nn::{Adam, Binding, ParamStore};
use super::tape::{Gradients, Tape};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::image::{Image, ValueRange};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub lambda: f64,
    pub crop: usize,
    pub hflip: bool,
    pub batch_size: usize,
    pub seed: u64,
    pub discriminators: DiscSet,
    pub relativistic: bool,
    pub base_width: usize,
    pub resblocks: usize,
    pub disc_width: usize,
    pub disc_downsamples: usize,
    pub msweight: MsNorm,
    pub beta1: f64,
    pub beta2: f64,
    /// Samples per epoch; 0 means one pass over the larger domain.
    pub steps_per_epoch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            lr_g: 2e-4,
            lr_d: 1e-4,
            lambda: 10.0,
            crop: 64,
            hflip: true,
            batch_size: 1,
            seed: 0,
            discriminators: DiscSet::default(),
            relativistic: true,
            base_width: 16,
            resblocks: 2,
            disc_width: 16,
            disc_downsamples: 2,
            msweight: MsNorm::Unit,
            beta1: 0.5,
            beta2: 0.999,
            steps_per_epoch: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("bad value {value:?} for {key}")))
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(Error::invalid(format!("bad boolean {other:?} for {key}"))),
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 18] = [
        "epochs",
        "lr_g",
        "lr_d",
        "lambda",
        "crop",
        "hflip",
        "batch_size",
        "seed",
        "discriminators",
        "relativistic",
        "base_width",
        "resblocks",
        "disc_width",
        "disc_downsamples",
        "msweight",
        "beta1",
        "beta2",
        "steps_per_epoch",
    ];

    /// Set one field from its text form; `Ok(false)` for keys not owned here.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "lr_g" => self.lr_g = parse(key, value)?,
            "lr_d" => self.lr_d = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "crop" => self.crop = parse(key, value)?,
            "hflip" => self.hflip = parse_bool(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "discriminators" => self.discriminators = value.trim().parse()?,
            "relativistic" => self.relativistic = parse_bool(key, value)?,
            "base_width" => self.base_width = parse(key, value)?,
            "resblocks" => self.resblocks = parse(key, value)?,
            "disc_width" => self.disc_width = parse(key, value)?,
            "disc_downsamples" => self.disc_downsamples = parse(key, value)?,
            "msweight" => {
                self.msweight = match value.trim() {
                    "unit" => MsNorm::Unit,
                    "literal" => MsNorm::Literal,
                    other => {
                        return Err(Error::invalid(format!(
                            "msweight must be unit or literal, got {other:?}"
                        )))
                    }
                }
            }
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "steps_per_epoch" => self.steps_per_epoch = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let ms = match self.msweight {
            MsNorm::Unit => "unit",
            MsNorm::Literal => "literal",
        };
        vec![
            ("epochs", self.epochs.to_string()),
            ("lr_g", format!("{:e}", self.lr_g)),
            ("lr_d", format!("{:e}", self.lr_d)),
            ("lambda", self.lambda.to_string()),
            ("crop", self.crop.to_string()),
            ("hflip", self.hflip.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("discriminators", self.discriminators.to_string()),
            ("relativistic", self.relativistic.to_string()),
            ("base_width", self.base_width.to_string()),
            ("resblocks", self.resblocks.to_string()),
            ("disc_width", self.disc_width.to_string()),
            ("disc_downsamples", self.disc_downsamples.to_string()),
            ("msweight", ms.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("steps_per_epoch", self.steps_per_epoch.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("expected key = value, got {line:?}")))?;
            if !cfg.set(k.trim(), v)? {
                return Err(Error::invalid(format!("unknown training key {:?}", k.trim())));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size != 1 {
            return bad(format!("only batch size 1 is supported, got {}", self.batch_size));
        }
        if self.base_width == 0 || self.disc_width == 0 || self.disc_downsamples == 0 {
            return bad("network widths and stride-2 layer count must be positive".into());
        }
        let min_crop = 3 << (self.disc_downsamples + 1);
        if self.crop % 4 != 0 || self.crop < min_crop {
            return bad(format!(
                "crop must be a multiple of 4 and at least {min_crop} for {} stride-2 layers, got {}",
                self.disc_downsamples, self.crop
            ));
        }
        for (name, v) in [("lr_g", self.lr_g), ("lr_d", self.lr_d), ("lambda", self.lambda)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        Ok(())
    }

    pub fn generator_shape(&self) -> GeneratorShape {
        GeneratorShape {
            base_width: self.base_width,
            resblocks: self.resblocks,
        }
    }

    pub fn disc_shape(&self) -> DiscShape {
        DiscShape {
            base_width: self.disc_width,
            downsamples: self.disc_downsamples,
        }
    }

    pub fn gan_loss(&self) -> GanLoss {
        GanLoss {
            relativistic: self.relativistic,
            norm: self.msweight,
        }
    }
}

/// Learning rate for 0-based `epoch` of `total`: constant through the first
/// half, then linear to zero at `epoch == total`.
pub fn lr_at(base: f64, epoch: usize, total: usize) -> f64 {
    let half = total as f64 / 2.0;
    let e = epoch as f64;
    if e <= half {
        base
    } else {
        (base * (total as f64 - e) / (total as f64 - half)).max(0.0)
    }
}

/// Night-to-day (`g_ab`) and day-to-night (`g_ba`) generators with their
/// discriminators over night (`d_a`) and day (`d_b`) images.
#[derive(Clone, Debug)]
pub struct CycleModel {
    pub config: TrainConfig,
    pub g_ab: Generator,
    pub g_ba: Generator,
    pub d_a: Discriminator,
    pub d_b: Discriminator,
}

impl CycleModel {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let g_ab = Generator::new("g_ab", config.generator_shape(), &mut rng)?;
        let g_ba = Generator::new("g_ba", config.generator_shape(), &mut rng)?;
        let d_a = Discriminator::new("d_a", &config.discriminators, config.disc_shape(), &mut rng)?;
        let d_b = Discriminator::new("d_b", &config.discriminators, config.disc_shape(), &mut rng)?;
        Ok(CycleModel {
            config,
            g_ab,
            g_ba,
            d_a,
            d_b,
        })
    }

    pub fn stores(&self) -> [&ParamStore; 4] {
        [
            self.g_ab.params(),
            self.g_ba.params(),
            self.d_a.params(),
            self.d_b.params(),
        ]
    }

    pub(crate) fn stores_mut(&mut self) -> [&mut ParamStore; 4] {
        [
            self.g_ab.params_mut(),
            self.g_ba.params_mut(),
            self.d_a.params_mut(),
            self.d_b.params_mut(),
        ]
    }

    /// Hash of every parameter name and bit pattern.
    pub fn param_digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for store in self.stores() {
            for (name, t) in store.iter() {
                name.hash(&mut h);
                t.shape().hash(&mut h);
                t.data().iter().for_each(|v| v.to_bits().hash(&mut h));
            }
        }
        h.finish()
    }

    /// Apply the night-to-day generator to a full image. Sizes that are not
    /// multiples of 4 are padded by reflection and cropped back.
    pub fn translate(&self, img: &Image) -> Result<Image> {
        let rgb = match img.channels() {
            3 => img.clone(),
            _ => Image::from_fn(img.height(), img.width(), 3, |y, x, _| img.get(y, x, 0))?,
        };
        let (h, w) = (rgb.height(), rgb.width());
        let (ph, pw) = (h.next_multiple_of(4), w.next_multiple_of(4));
        let padded = pad_reflect(&rgb.to_signed(), ph, pw)?;
        let mut tape = Tape::new();
        let p = self.g_ab.params().bind(&mut tape, false);
        let x = tape.constant(Tensor::new(vec![3, ph, pw], padded.to_planar())?);
        let y = self.g_ab.forward(&mut tape, &p, x)?;
        let out = Image::from_planar(ph, pw, 3, ValueRange::Signed, tape.value(y).data())?;
        Ok(out.crop(0, 0, h, w)?.to_unit())
    }
}

fn mirror(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Extend to `h x w` by mirroring past the bottom and right edges.
fn pad_reflect(img: &Image, h: usize, w: usize) -> Result<Image> {
    let mut out = Image::from_fn(h, w, img.channels(), |y, x, c| {
        img.get(mirror(y, img.height()), mirror(x, img.width()), c)
    })?;
    if img.range() == ValueRange::Signed {
        out = Image::with_range(h, w, img.channels(), ValueRange::Signed, out.into_data())?;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub g_loss: f64,
    pub d_loss: f64,
    pub cycle_loss: f64,
}

fn grads_for(grads: &mut Gradients, binding: &Binding) -> Vec<Option<Tensor>> {
    binding.vars().iter().map(|&v| grads.take(v)).collect()
}

fn random_crop(img: &Tensor, crop: usize, flip: bool, rng: &mut impl Rng) -> Tensor {
    let (c, h, w) = img.chw();
    let y0 = rng.gen_range(0..=h - crop);
    let x0 = rng.gen_range(0..=w - crop);
    let mirror = flip && rng.gen_bool(0.5);
    let src = img.data();
    let mut out = Vec::with_capacity(c * crop * crop);
    for ch in 0..c {
        for y in 0..crop {
            let row = (ch * h + y0 + y) * w + x0;
            if mirror {
                out.extend((0..crop).rev().map(|x| src[row + x]));
            } else {
                out.extend_from_slice(&src[row..row + crop]);
            }
        }
    }
    Tensor::new(vec![c, crop, crop], out).expect("crop shape")
}

fn prepare(images: &[Image], crop: usize, what: &str) -> Result<Vec<Tensor>> {
    if images.is_empty() {
        return Err(Error::invalid(format!("the {what} training domain is empty")));
    }
    images
        .iter()
        .map(|img| {
            if img.height() < crop || img.width() < crop {
                return Err(Error::invalid(format!(
                    "{what} image of {}x{} is smaller than the {crop}px crop",
                    img.height(),
                    img.width()
                )));
            }
            let rgb = match img.channels() {
                3 => img.to_signed(),
                _ => Image::from_fn(img.height(), img.width(), 3, |y, x, _| img.get(y, x, 0))?
                    .to_signed(),
            };
            Tensor::new(vec![3, img.height(), img.width()], rgb.to_planar())
        })
        .collect()
}

fn diverged(epoch: usize, step: usize, what: &str, value: f64) -> Error {
    Error::Diverged(format!(
        "{what} became {value} at epoch {epoch}, step {step}; try a lower learning rate"
    ))
}

/// Optimizer state carried across epochs.
struct Optimizers {
    g_ab: Adam,
    g_ba: Adam,
    d_a: Adam,
    d_b: Adam,
}

/// Train from scratch on unpaired day (`B`) and night (`A`) images. After
/// every epoch `on_epoch` sees the current model, e.g. to write a checkpoint.
pub fn train(
    config: &TrainConfig,
    day: &[Image],
    night: &[Image],
    mut on_epoch: impl FnMut(&CycleModel, &EpochStats) -> Result<()>,
) -> Result<(CycleModel, Vec<EpochStats>)> {
    config.validate()?;
    let day = prepare(day, config.crop, "day")?;
    let night = prepare(night, config.crop, "night")?;
    let mut model = CycleModel::new(config.clone())?;
    let mut opt = Optimizers {
        g_ab: Adam::new(model.g_ab.params(), config.beta1, config.beta2),
        g_ba: Adam::new(model.g_ba.params(), config.beta1, config.beta2),
        d_a: Adam::new(model.d_a.params(), config.beta1, config.beta2),
        d_b: Adam::new(model.d_b.params(), config.beta1, config.beta2),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let steps = match config.steps_per_epoch {
        0 => day.len().max(night.len()),
        n => n,
    };
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr_g = lr_at(config.lr_g, epoch, config.epochs);
        let lr_d = lr_at(config.lr_d, epoch, config.epochs);
        let mut order_a: Vec<usize> = (0..night.len()).collect();
        let mut order_b: Vec<usize> = (0..day.len()).collect();
        order_a.shuffle(&mut rng);
        order_b.shuffle(&mut rng);
        let mut sums = [0.0; 3];
        for step in 0..steps {
            let a = random_crop(&night[order_a[step % night.len()]], config.crop, config.hflip, &mut rng);
            let b = random_crop(&day[order_b[step % day.len()]], config.crop, config.hflip, &mut rng);
            let (g, cyc, fakes) = generator_step(&mut model, &mut opt, &a, &b, lr_g, (epoch, step))?;
            let d = discriminator_step(&mut model, &mut opt, &a, &b, fakes, lr_d, (epoch, step))?;
            sums[0] += g;
            sums[1] += d;
            sums[2] += cyc;
        }
        let n = steps as f64;
        let stats = EpochStats {
            epoch,
            lr_g,
            lr_d,
            g_loss: sums[0] / n,
            d_loss: sums[1] / n,
            cycle_loss: sums[2] / n,
        };
        on_epoch(&model, &stats)?;
        history.push(stats);
    }
    Ok((model, history))
}

/// One generator update; returns the objective, the cycle term, and the
/// detached fakes `(fake_a, fake_b)` for the discriminator update.
fn generator_step(
    model: &mut CycleModel,
    opt: &mut Optimizers,
    a: &Tensor,
    b: &Tensor,
    lr: f64,
    at: (usize, usize),
) -> Result<(f64, f64, (Tensor, Tensor))> {
    let gan = model.config.gan_loss();
    let mut tape = Tape::new();
    let p_ab = model.g_ab.params().bind(&mut tape, true);
    let p_ba = model.g_ba.params().bind(&mut tape, true);
    let p_da = model.d_a.params().bind(&mut tape, false);
    let p_db = model.d_b.params().bind(&mut tape, false);
    let xa = tape.constant(a.clone());
    let xb = tape.constant(b.clone());
    let fake_b = model.g_ab.forward(&mut tape, &p_ab, xa)?;
    let rec_a = model.g_ba.forward(&mut tape, &p_ba, fake_b)?;
    let fake_a = model.g_ba.forward(&mut tape, &p_ba, xb)?;
    let rec_b = model.g_ab.forward(&mut tape, &p_ab, fake_a)?;
    let db_real = model.d_b.forward(&mut tape, &p_db, xb)?;
    let db_fake = model.d_b.forward(&mut tape, &p_db, fake_b)?;
    let da_real = model.d_a.forward(&mut tape, &p_da, xa)?;
    let da_fake = model.d_a.forward(&mut tape, &p_da, fake_a)?;
    let gan_ab = gan.across(&mut tape, &db_real, &db_fake, Perspective::Generator)?;
    let gan_ba = gan.across(&mut tape, &da_real, &da_fake, Perspective::Generator)?;
    let cyc = cycle_loss(&mut tape, xa, rec_a, xb, rec_b)?;
    let total = total_objective(&mut tape, gan_ab, gan_ba, cyc, model.config.lambda)?;
    let loss = tape.value(total).item();
    if !loss.is_finite() {
        return Err(diverged(at.0, at.1, "generator objective", loss));
    }
    let mut grads = tape.backward(total)?;
    let g_ab = grads_for(&mut grads, &p_ab);
    let g_ba = grads_for(&mut grads, &p_ba);
    opt.g_ab.step(model.g_ab.params_mut(), &g_ab, lr);
    opt.g_ba.step(model.g_ba.params_mut(), &g_ba, lr);
    let fakes = (tape.value(fake_a).clone(), tape.value(fake_b).clone());
    Ok((loss, tape.value(cyc).item(), fakes))
}

fn discriminator_step(
    model: &mut CycleModel,
    opt: &mut Optimizers,
    a: &Tensor,
    b: &Tensor,
    (fake_a, fake_b): (Tensor, Tensor),
    lr: f64,
    at: (usize, usize),
) -> Result<f64> {
    let gan = model.config.gan_loss();
    let mut tape = Tape::new();
    let p_da = model.d_a.params().bind(&mut tape, true);
    let p_db = model.d_b.params().bind(&mut tape, true);
    let xa = tape.constant(a.clone());
    let xb = tape.constant(b.clone());
    let fa = tape.constant(fake_a);
    let fb = tape.constant(fake_b);
    let da_real = model.d_a.forward(&mut tape, &p_da, xa)?;
    let da_fake = model.d_a.forward(&mut tape, &p_da, fa)?;
    let db_real = model.d_b.forward(&mut tape, &p_db, xb)?;
    let db_fake = model.d_b.forward(&mut tape, &p_db, fb)?;
    let la = gan.across(&mut tape, &da_real, &da_fake, Perspective::Discriminator)?;
    let lb = gan.across(&mut tape, &db_real, &db_fake, Perspective::Discriminator)?;
    let total = tape.add(la, lb)?;
    let loss = tape.value(total).item();
    if !loss.is_finite() {
        return Err(diverged(at.0, at.1, "discriminator loss", loss));
    }
    let mut grads = tape.backward(total)?;
    let g_da = grads_for(&mut grads, &p_da);
    let g_db = grads_for(&mut grads, &p_db);
    opt.d_a.step(model.d_a.params_mut(), &g_da, lr);
    opt.d_b.step(model.d_b.params_mut(), &g_db, lr);
    if model.stores().iter().any(|s| s.iter().any(|(_, t)| !t.is_finite())) {
        return Err(diverged(at.0, at.1, "a parameter", f64::NAN));
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TrainConfig {
        TrainConfig {
            epochs: 1,
            crop: 24,
            base_width: 2,
            resblocks: 1,
            disc_width: 2,
            disc_downsamples: 1,
            ..TrainConfig::default()
        }
    }

    fn pattern(seed: usize) -> Image {
        Image::from_fn(28, 30, 3, |y, x, c| ((y * 3 + x * 5 + c * 7 + seed) % 13) as f64 / 13.0)
            .unwrap()
    }

    #[test]
    fn lr_schedule() {
        assert_eq!(lr_at(2e-4, 0, 40), 2e-4);
        assert_eq!(lr_at(2e-4, 20, 40), 2e-4);
        assert!((lr_at(2e-4, 30, 40) - 1e-4).abs() < 1e-18);
        assert_eq!(lr_at(2e-4, 40, 40), 0.0);
    }

    #[test]
    fn config_text_round_trip() {
        let mut c = TrainConfig::default();
        c.discriminators = "CG".parse().unwrap();
        c.msweight = MsNorm::Literal;
        c.lr_g = 3.5e-4;
        assert_eq!(TrainConfig::from_text(&c.to_text()).unwrap(), c);
        assert!(TrainConfig::from_text("bogus = 1").is_err());
        assert!(TrainConfig::from_text("crop = 30").is_err());
        assert!(TrainConfig::from_text("discriminators = ").is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let day = [pattern(0), pattern(3)];
        let night = [pattern(5), pattern(8)];
        let (m1, h1) = train(&tiny(), &day, &night, |_, _| Ok(())).unwrap();
        let (m2, h2) = train(&tiny(), &day, &night, |_, _| Ok(())).unwrap();
        assert_eq!(m1.param_digest(), m2.param_digest());
        assert_eq!(h1, h2);
        assert_ne!(m1.param_digest(), CycleModel::new(tiny()).unwrap().param_digest());
    }

    #[test]
    fn empty_domain_and_divergence() {
        assert!(matches!(
            train(&tiny(), &[], &[pattern(0)], |_, _| Ok(())),
            Err(Error::InvalidArgument(_))
        ));
        let cfg = TrainConfig {
            lr_g: 1e300,
            lr_d: 1e300,
            epochs: 3,
            ..tiny()
        };
        let r = train(&cfg, &[pattern(0)], &[pattern(1)], |_, _| Ok(()));
        assert!(matches!(r, Err(Error::Diverged(_))), "{r:?}");
    }

    #[test]
    fn translate_keeps_size_and_range() {
        let m = CycleModel::new(tiny()).unwrap();
        for (h, w) in [(24, 24), (26, 31)] {
            let img = Image::from_fn(h, w, 3, |y, x, c| ((y + x + c) % 7) as f64 / 7.0).unwrap();
            let out = m.translate(&img).unwrap();
            assert_eq!((out.height(), out.width(), out.channels()), (h, w, 3));
            assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(m.translate(&img).unwrap(), out);
        }
    }
}
