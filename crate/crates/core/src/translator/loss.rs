//! Adversarial, cycle and combined training objectives.

use super::disc::Decisions;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Which side of the adversarial game a loss is computed for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Perspective {
    Discriminator,
    Generator,
}

/// Normalization of the `1..=n` weights given to the `n` decision maps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MsNorm {
    /// Divide by `sum(i)`, so the weights sum to 1.
    #[default]
    Unit,
    /// Divide by `n * sum(i)`, so the weights sum to `1/n`.
    Literal,
}

fn weights(n: usize, norm: MsNorm) -> Vec<f64> {
    let total = (n * (n + 1) / 2) as f64;
    let denom = match norm {
        MsNorm::Unit => total,
        MsNorm::Literal => n as f64 * total,
    };
    (1..=n).map(|i| i as f64 / denom).collect()
}

/// Combine per-map scalar losses, finest first, with weights `1..=n`.
pub fn multiscale_weight(tape: &mut Tape, losses: &[Var], norm: MsNorm) -> Result<Var> {
    if losses.is_empty() {
        return Err(Error::invalid("multi-scale weighting needs at least one map"));
    }
    let w = weights(losses.len(), norm);
    let mut acc: Option<Var> = None;
    for (&l, wi) in losses.iter().zip(w) {
        let term = tape.scale(l, wi);
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    Ok(acc.expect("non-empty"))
}

fn check_pairs(real: &[Var], fake: &[Var]) -> Result<()> {
    if real.len() != fake.len() || fake.is_empty() {
        return Err(Error::invalid(format!(
            "need matching non-empty decision lists, got {} real and {} fake",
            real.len(),
            fake.len()
        )));
    }
    Ok(())
}

fn mean_sq_offset(tape: &mut Tape, x: Var, target: f64) -> Var {
    let shifted = tape.offset(x, -target);
    let sq = tape.square(shifted);
    tape.mean(sq)
}

/// Least-squares GAN loss over the decision maps of one sub-network.
pub fn lsgan_loss(
    tape: &mut Tape,
    real: &[Var],
    fake: &[Var],
    perspective: Perspective,
    norm: MsNorm,
) -> Result<Var> {
    check_pairs(real, fake)?;
    let per_map = real
        .iter()
        .zip(fake)
        .map(|(&r, &f)| match perspective {
            Perspective::Discriminator => {
                let lr = mean_sq_offset(tape, r, 1.0);
                let lf = mean_sq_offset(tape, f, 0.0);
                tape.add(lr, lf)
            }
            Perspective::Generator => Ok(mean_sq_offset(tape, f, 1.0)),
        })
        .collect::<Result<Vec<_>>>()?;
    multiscale_weight(tape, &per_map, norm)
}

/// Relativistic least-squares loss: real judged against fake, elementwise.
pub fn relativistic_loss(
    tape: &mut Tape,
    real: &[Var],
    fake: &[Var],
    perspective: Perspective,
    norm: MsNorm,
) -> Result<Var> {
    check_pairs(real, fake)?;
    let per_map = real
        .iter()
        .zip(fake)
        .map(|(&r, &f)| {
            let d = match perspective {
                Perspective::Discriminator => tape.sub(r, f)?,
                Perspective::Generator => tape.sub(f, r)?,
            };
            Ok(mean_sq_offset(tape, d, 1.0))
        })
        .collect::<Result<Vec<_>>>()?;
    multiscale_weight(tape, &per_map, norm)
}

/// Mean absolute reconstruction error of both cycles, summed.
pub fn cycle_loss(tape: &mut Tape, a: Var, rec_a: Var, b: Var, rec_b: Var) -> Result<Var> {
    let mut one = |x: Var, y: Var| -> Result<Var> {
        let d = tape.sub(y, x)?;
        let d = tape.abs(d);
        Ok(tape.mean(d))
    };
    let la = one(a, rec_a)?;
    let lb = one(b, rec_b)?;
    tape.add(la, lb)
}

/// `gan_ab + gan_ba + lambda * cycle`.
pub fn total_objective(
    tape: &mut Tape,
    gan_ab: Var,
    gan_ba: Var,
    cycle: Var,
    lambda: f64,
) -> Result<Var> {
    let gan = tape.add(gan_ab, gan_ba)?;
    let cyc = tape.scale(cycle, lambda);
    tape.add(gan, cyc)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GanLoss {
    pub relativistic: bool,
    pub norm: MsNorm,
}

impl GanLoss {
    pub fn apply(
        &self,
        tape: &mut Tape,
        real: &[Var],
        fake: &[Var],
        perspective: Perspective,
    ) -> Result<Var> {
        if self.relativistic {
            relativistic_loss(tape, real, fake, perspective, self.norm)
        } else {
            lsgan_loss(tape, real, fake, perspective, self.norm)
        }
    }

    /// Average of the per-sub-network losses.
    pub fn across(
        &self,
        tape: &mut Tape,
        real: &[Decisions],
        fake: &[Decisions],
        perspective: Perspective,
    ) -> Result<Var> {
        if real.len() != fake.len() || real.is_empty() {
            return Err(Error::invalid("mismatched discriminator outputs"));
        }
        let mut acc: Option<Var> = None;
        for (r, f) in real.iter().zip(fake) {
            let l = self.apply(tape, &r.maps, &f.maps, perspective)?;
            acc = Some(match acc {
                None => l,
                Some(a) => tape.add(a, l)?,
            });
        }
        Ok(tape.scale(acc.expect("non-empty"), 1.0 / real.len() as f64))
    }
}
