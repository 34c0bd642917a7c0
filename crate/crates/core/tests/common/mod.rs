#![allow(dead_code)]

use nightshift::translator::loss::{
    cycle_loss, lsgan_loss, multiscale_weight, relativistic_loss, total_objective,
};
use nightshift::translator::{MsNorm, Perspective, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-4;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Random values with magnitude in `[lo, lo + 1)` and random sign, keeping
/// finite differences away from kinks at zero.
pub fn randn_away(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = lo + rng.gen::<f64>();
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

type Build<'a> = dyn Fn(&mut Tape, &[Var]) -> Var + 'a;

/// Scalar objective: the built output, contracted with a fixed random
/// tensor unless it is already a scalar.
fn objective(inputs: &[Tensor], probe: &Option<Tensor>, build: &Build<'_>) -> (Tape, Vec<Var>, Var) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let root = match probe {
        Some(p) => {
            let c = tape.constant(p.clone());
            let prod = tape.mul(out, c).unwrap();
            tape.mean(prod)
        }
        None => out,
    };
    (tape, vars, root)
}

/// Worst relative error `|a - n| / (|a| + |n|)` over the inputs, where `a`
/// is the reverse-mode gradient and `n` the central finite difference.
pub fn grad_error(inputs: &[Tensor], seed: u64, build: &Build<'_>) -> f64 {
    let probe = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars);
        let shape = tape.value(out).shape().to_vec();
        (tape.value(out).len() != 1).then(|| randn(&mut rng(seed ^ 0x9e37), &shape))
    };
    let (tape, vars, root) = objective(inputs, &probe, build);
    let grads = tape.backward(root).unwrap();
    let eval = |inputs: &[Tensor]| {
        let (tape, _, root) = objective(inputs, &probe, build);
        tape.value(root).item()
    };
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        let mut numeric = vec![0.0; inputs[i].len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            *slot = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let rel = if na + nn < 1e-10 { 0.0 } else { diff / (na + nn) };
        worst = worst.max(rel);
    }
    worst
}

pub struct GradCase {
    pub name: &'static str,
    pub worst: f64,
    pub trials: usize,
}

fn maps(rng: &mut ChaCha8Rng, n: usize) -> Vec<Tensor> {
    (0..n)
        .map(|i| randn(rng, &[1, 4 - i.min(2), 4 - i.min(2)]))
        .collect()
}

/// Run every primitive and every loss through the finite-difference check
/// `trials` times with fresh random tensors.
pub fn gradient_suite(trials: usize, seed: u64) -> Vec<GradCase> {
    let mut r = rng(seed);
    let mut cases: Vec<GradCase> = Vec::new();
    let mut run = |name: &'static str,
                   r: &mut ChaCha8Rng,
                   make: &dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor>,
                   build: &Build<'_>| {
        let mut worst: f64 = 0.0;
        for t in 0..trials {
            let inputs = make(r);
            worst = worst.max(grad_error(&inputs, seed.wrapping_add(t as u64), build));
        }
        cases.push(GradCase {
            name,
            worst,
            trials,
        });
    };

    run(
        "conv2d",
        &mut r,
        &|r| vec![randn(r, &[2, 5, 5]), randn(r, &[3, 2, 3, 3]), randn(r, &[3])],
        &|t, v| t.conv2d(v[0], v[1], Some(v[2]), 2, 1).unwrap(),
    );
    run(
        "conv_transpose2d",
        &mut r,
        &|r| vec![randn(r, &[2, 3, 3]), randn(r, &[2, 3, 4, 4]), randn(r, &[3])],
        &|t, v| t.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1, 0).unwrap(),
    );
    run(
        "reflect_pad",
        &mut r,
        &|r| vec![randn(r, &[2, 4, 5])],
        &|t, v| t.reflect_pad(v[0], 2).unwrap(),
    );
    run(
        "replicate_pad",
        &mut r,
        &|r| vec![randn(r, &[2, 3, 4])],
        &|t, v| t.replicate_pad(v[0], 2).unwrap(),
    );
    run(
        "subsample2",
        &mut r,
        &|r| vec![randn(r, &[2, 5, 4])],
        &|t, v| t.subsample2(v[0]).unwrap(),
    );
    run(
        "hflip",
        &mut r,
        &|r| vec![randn(r, &[2, 3, 4])],
        &|t, v| t.hflip(v[0]).unwrap(),
    );
    run(
        "select_channel",
        &mut r,
        &|r| vec![randn(r, &[3, 3, 3])],
        &|t, v| t.select_channel(v[0], 1).unwrap(),
    );
    run(
        "instance_norm",
        &mut r,
        &|r| vec![randn(r, &[2, 4, 4])],
        &|t, v| t.instance_norm(v[0], 1e-5).unwrap(),
    );
    run(
        "channel_affine",
        &mut r,
        &|r| vec![randn(r, &[2, 3, 3]), randn(r, &[2]), randn(r, &[2])],
        &|t, v| t.channel_affine(v[0], v[1], v[2]).unwrap(),
    );
    run(
        "prelu",
        &mut r,
        &|r| vec![randn_away(r, &[2, 3, 3], 0.05), uniform(r, &[2], 0.05, 0.5)],
        &|t, v| t.prelu(v[0], v[1]).unwrap(),
    );
    run(
        "leaky_relu",
        &mut r,
        &|r| vec![randn_away(r, &[2, 3, 3], 0.05)],
        &|t, v| t.leaky_relu(v[0], 0.2),
    );
    run(
        "tanh",
        &mut r,
        &|r| vec![randn(r, &[2, 3, 3])],
        &|t, v| t.tanh(v[0]),
    );
    run(
        "scale",
        &mut r,
        &|r| vec![randn(r, &[2, 3])],
        &|t, v| t.scale(v[0], -1.7),
    );
    run(
        "offset",
        &mut r,
        &|r| vec![randn(r, &[2, 3])],
        &|t, v| t.offset(v[0], 0.3),
    );
    run(
        "square",
        &mut r,
        &|r| vec![randn(r, &[2, 3])],
        &|t, v| t.square(v[0]),
    );
    run(
        "abs",
        &mut r,
        &|r| vec![randn_away(r, &[2, 3], 0.05)],
        &|t, v| t.abs(v[0]),
    );
    run(
        "sqrt",
        &mut r,
        &|r| vec![uniform(r, &[2, 3], 0.1, 2.0)],
        &|t, v| t.sqrt(v[0], 1e-12),
    );
    run(
        "mean",
        &mut r,
        &|r| vec![randn(r, &[2, 3, 3])],
        &|t, v| t.mean(v[0]),
    );
    run(
        "add",
        &mut r,
        &|r| vec![randn(r, &[2, 3]), randn(r, &[2, 3])],
        &|t, v| t.add(v[0], v[1]).unwrap(),
    );
    run(
        "sub",
        &mut r,
        &|r| vec![randn(r, &[2, 3]), randn(r, &[2, 3])],
        &|t, v| t.sub(v[0], v[1]).unwrap(),
    );
    run(
        "mul",
        &mut r,
        &|r| vec![randn(r, &[2, 3]), randn(r, &[2, 3])],
        &|t, v| t.mul(v[0], v[1]).unwrap(),
    );
    run(
        "atan2",
        &mut r,
        &|r| vec![randn_away(r, &[2, 3], 0.3), randn_away(r, &[2, 3], 0.3)],
        &|t, v| t.atan2(v[0], v[1]).unwrap(),
    );
    run(
        "concat",
        &mut r,
        &|r| vec![randn(r, &[1, 3, 3]), randn(r, &[2, 3, 3])],
        &|t, v| t.concat(&[v[0], v[1]]).unwrap(),
    );
    run(
        "multiscale_weight",
        &mut r,
        &|r| vec![randn(r, &[1]), randn(r, &[1]), randn(r, &[1])],
        &|t, v| {
            let ls: Vec<Var> = v.iter().map(|&x| t.mean(x)).collect();
            multiscale_weight(t, &ls, MsNorm::Unit).unwrap()
        },
    );
    for (name, persp, rel) in [
        ("lsgan_loss/D", Perspective::Discriminator, false),
        ("lsgan_loss/G", Perspective::Generator, false),
        ("relativistic_loss/D", Perspective::Discriminator, true),
        ("relativistic_loss/G", Perspective::Generator, true),
    ] {
        run(
            name,
            &mut r,
            &|r| {
                let mut v = maps(r, 3);
                v.extend(maps(r, 3));
                v
            },
            &move |t, v| {
                let (real, fake) = v.split_at(3);
                if rel {
                    relativistic_loss(t, real, fake, persp, MsNorm::Unit).unwrap()
                } else {
                    lsgan_loss(t, real, fake, persp, MsNorm::Unit).unwrap()
                }
            },
        );
    }
    run(
        "cycle_loss",
        &mut r,
        &|r| {
            let a = randn(r, &[3, 3, 3]);
            let b = randn(r, &[3, 3, 3]);
            let ra = randn_away(r, &[3, 3, 3], 0.05);
            let rb = randn_away(r, &[3, 3, 3], 0.05);
            let add = |x: &Tensor, d: &Tensor| {
                let data = x.data().iter().zip(d.data()).map(|(p, q)| p + q).collect();
                Tensor::new(x.shape().to_vec(), data).unwrap()
            };
            vec![add(&a, &ra), a, add(&b, &rb), b]
        },
        &|t, v| cycle_loss(t, v[1], v[0], v[3], v[2]).unwrap(),
    );
    run(
        "total_objective",
        &mut r,
        &|r| vec![randn(r, &[1]), randn(r, &[1]), randn(r, &[1])],
        &|t, v| {
            let parts: Vec<Var> = v.iter().map(|&x| t.mean(x)).collect();
            total_objective(t, parts[0], parts[1], parts[2], 10.0).unwrap()
        },
    );
    cases
}

/// Decision maps where every element equals `value`.
pub fn const_maps(tape: &mut Tape, shapes: &[usize], value: f64) -> Vec<Var> {
    shapes
        .iter()
        .map(|&s| tape.constant(Tensor::filled(&[1, s, s], value)))
        .collect()
}

pub fn scalar(tape: &Tape, v: Var) -> f64 {
    tape.value(v).item()
}

pub fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub struct Oracle {
    pub name: &'static str,
    pub got: f64,
    pub want: f64,
}

fn lsgan(real: f64, fake: f64, persp: Perspective) -> f64 {
    let mut t = Tape::new();
    let r = const_maps(&mut t, &[8, 4, 2], real);
    let f = const_maps(&mut t, &[8, 4, 2], fake);
    let l = lsgan_loss(&mut t, &r, &f, persp, MsNorm::Unit).unwrap();
    scalar(&t, l)
}

fn relativistic(real: &[Tensor], fake: &[Tensor], persp: Perspective) -> f64 {
    let mut t = Tape::new();
    let r: Vec<Var> = real.iter().map(|x| t.constant(x.clone())).collect();
    let f: Vec<Var> = fake.iter().map(|x| t.constant(x.clone())).collect();
    let l = relativistic_loss(&mut t, &r, &f, persp, MsNorm::Unit).unwrap();
    scalar(&t, l)
}

fn filled_maps(value: f64) -> Vec<Tensor> {
    [8, 4, 2].iter().map(|&s| Tensor::filled(&[1, s, s], value)).collect()
}

fn ms(values: &[f64]) -> f64 {
    let mut t = Tape::new();
    let ls: Vec<Var> = values.iter().map(|&v| t.constant(Tensor::scalar(v))).collect();
    let l = multiscale_weight(&mut t, &ls, MsNorm::Unit).unwrap();
    scalar(&t, l)
}

fn cycle(off_a: f64, off_b: f64) -> f64 {
    let mut t = Tape::new();
    let mut r = rng(5);
    let a = randn(&mut r, &[3, 4, 4]);
    let b = randn(&mut r, &[3, 4, 4]);
    let shift = |x: &Tensor, d: f64| Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v + d).collect()).unwrap();
    let (ra, rb) = (shift(&a, off_a), shift(&b, off_b));
    let vs: Vec<Var> = [a, ra, b, rb].into_iter().map(|x| t.constant(x)).collect();
    let l = cycle_loss(&mut t, vs[0], vs[1], vs[2], vs[3]).unwrap();
    scalar(&t, l)
}

fn total(a: f64, b: f64, c: f64, lambda: f64) -> f64 {
    let mut t = Tape::new();
    let v: Vec<Var> = [a, b, c].iter().map(|&x| t.constant(Tensor::scalar(x))).collect();
    let l = total_objective(&mut t, v[0], v[1], v[2], lambda).unwrap();
    scalar(&t, l)
}

/// Every worked loss example, as computed value and expected value.
pub fn loss_oracles() -> Vec<Oracle> {
    use Perspective::{Discriminator as D, Generator as G};
    let mut r = rng(31);
    let real: Vec<Tensor> = [8, 4, 2].iter().map(|&s| randn(&mut r, &[1, s, s])).collect();
    let shifted = |maps: &[Tensor], d: f64| -> Vec<Tensor> {
        maps.iter()
            .map(|m| Tensor::new(m.shape().to_vec(), m.data().iter().map(|v| v + d).collect()).unwrap())
            .collect()
    };
    let fake_minus_one = shifted(&real, -1.0);
    let other: Vec<Tensor> = [8, 4, 2].iter().map(|&s| randn(&mut r, &[1, s, s])).collect();
    vec![
        Oracle { name: "lsgan D real=1 fake=0", got: lsgan(1.0, 0.0, D), want: 0.0 },
        Oracle { name: "lsgan D real=0 fake=1", got: lsgan(0.0, 1.0, D), want: 2.0 },
        Oracle { name: "lsgan G fake=1", got: lsgan(0.3, 1.0, G), want: 0.0 },
        Oracle { name: "relativistic D real=fake", got: relativistic(&real, &real, D), want: 1.0 },
        Oracle { name: "relativistic G real=fake", got: relativistic(&real, &real, G), want: 1.0 },
        Oracle { name: "relativistic D real-fake=1", got: relativistic(&real, &fake_minus_one, D), want: 0.0 },
        Oracle { name: "relativistic G real-fake=1", got: relativistic(&real, &fake_minus_one, G), want: 4.0 },
        Oracle {
            name: "relativistic swap D->G",
            got: relativistic(&other, &real, D),
            want: relativistic(&real, &other, G),
        },
        Oracle { name: "relativistic constant maps", got: relativistic(&filled_maps(0.7), &filled_maps(0.7), D), want: 1.0 },
        Oracle { name: "cycle perfect", got: cycle(0.0, 0.0), want: 0.0 },
        Oracle { name: "cycle off by 0.5 one way", got: cycle(0.5, 0.0), want: 0.5 },
        Oracle { name: "total all zero", got: total(0.0, 0.0, 0.0, 10.0), want: 0.0 },
        Oracle { name: "total 1+2+10*0.3", got: total(1.0, 2.0, 0.3, 10.0), want: 6.0 },
        Oracle { name: "total lambda=0", got: total(1.5, 2.25, 7.0, 0.0), want: 3.75 },
        Oracle { name: "multiscale n=1", got: ms(&[0.37]), want: 0.37 },
        Oracle { name: "multiscale (1,1,1)", got: ms(&[1.0, 1.0, 1.0]), want: 1.0 },
        Oracle { name: "multiscale (0,0,6)", got: ms(&[0.0, 0.0, 6.0]), want: 3.0 },
    ]
}

/// Largest change of either relativistic perspective loss when `c` is added
/// to every decision, over `trials` random map sets.
pub fn shift_invariance(c: f64, trials: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let real: Vec<Tensor> = [8, 4, 2].iter().map(|&s| randn(&mut r, &[1, s, s])).collect();
        let fake: Vec<Tensor> = [8, 4, 2].iter().map(|&s| randn(&mut r, &[1, s, s])).collect();
        let shift = |maps: &[Tensor]| -> Vec<Tensor> {
            maps.iter()
                .map(|m| Tensor::new(m.shape().to_vec(), m.data().iter().map(|v| v + c).collect()).unwrap())
                .collect()
        };
        for p in [Perspective::Discriminator, Perspective::Generator] {
            let base = relativistic(&real, &fake, p);
            let moved = relativistic(&shift(&real), &shift(&fake), p);
            worst = worst.max((base - moved).abs());
        }
    }
    worst
}
