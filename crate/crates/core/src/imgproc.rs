//! Deterministic image primitives shared by the discriminator feature taps,
//! the dense descriptor front end, and the baselines.
//!
//! Every convolution here uses replicate padding and preserves image size.

use crate::error::{Error, Result};
use crate::image::{Image, ValueRange};

/// ITU-R BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

pub const BLUR_KERNEL_SIZE: usize = 5;
pub const BLUR_SIGMA: f64 = 3.0;

/// Horizontal and vertical derivatives of a single-channel image.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientPair {
    pub gx: Image,
    pub gy: Image,
}

pub fn to_grayscale(img: &Image) -> Result<Image> {
    if img.channels() != 3 {
        return Err(Error::invalid(format!(
            "grayscale conversion needs 3 channels, got {}",
            img.channels()
        )));
    }
    let data = img
        .data()
        .chunks(3)
        .map(|px| LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2])
        .collect();
    img.like(1, data)
}

/// Normalized `size x size` Gaussian, row-major.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Vec<f64>> {
    if size % 2 == 0 {
        return Err(Error::invalid(format!("kernel size must be odd, got {size}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    let r = (size / 2) as f64;
    let mut k: Vec<f64> = (0..size * size)
        .map(|i| {
            let dy = (i / size) as f64 - r;
            let dx = (i % size) as f64 - r;
            (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    Ok(k)
}

/// Correlate every channel with a square kernel under replicate padding.
fn correlate(img: &Image, kernel: &[f64], size: usize) -> Result<Image> {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let r = (size / 2) as isize;
    let mut data = vec![0.0; img.data().len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for ky in 0..size {
                    let sy = (y as isize + ky as isize - r).clamp(0, h as isize - 1) as usize;
                    for kx in 0..size {
                        let sx = (x as isize + kx as isize - r).clamp(0, w as isize - 1) as usize;
                        acc += kernel[ky * size + kx] * img.get(sy, sx, c);
                    }
                }
                data[(y * w + x) * ch + c] = acc;
            }
        }
    }
    img.like(ch, data)
}

pub fn gaussian_blur(img: &Image, kernel_size: usize, sigma: f64) -> Result<Image> {
    let kernel = gaussian_kernel(kernel_size, sigma)?;
    correlate(img, &kernel, kernel_size)
}

/// Derivative kernels `[-1 0 1]` and its transpose, as 3x3 correlation masks.
pub const DX_KERNEL: [f64; 9] = [0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0];
pub const DY_KERNEL: [f64; 9] = [0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];

pub fn xy_gradients(img: &Image) -> Result<GradientPair> {
    if img.channels() != 1 {
        return Err(Error::invalid(format!(
            "gradients need a single-channel image, got {}",
            img.channels()
        )));
    }
    Ok(GradientPair {
        gx: correlate(img, &DX_KERNEL, 3)?,
        gy: correlate(img, &DY_KERNEL, 3)?,
    })
}

/// Keep pixels at even rows and columns.
pub fn downsample_skip(img: &Image) -> Result<Image> {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    if h < 2 || w < 2 {
        return Err(Error::invalid(format!(
            "cannot skip-downsample a {h}x{w} image"
        )));
    }
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut data = Vec::with_capacity(oh * ow * ch);
    for y in 0..oh {
        for x in 0..ow {
            for c in 0..ch {
                data.push(img.get(2 * y, 2 * x, c));
            }
        }
    }
    Image::with_range(oh, ow, ch, img.range(), data)
}

/// `atan2` with the origin mapped to 0, result in `(-pi, pi]`.
pub fn orientation(gy: f64, gx: f64) -> f64 {
    if gx == 0.0 && gy == 0.0 {
        0.0
    } else {
        gy.atan2(gx)
    }
}

/// Gradient magnitude and orientation (radians) images.
pub fn grad_mag_orient(g: &GradientPair) -> (Image, Image) {
    let mag = g
        .gx
        .data()
        .iter()
        .zip(g.gy.data())
        .map(|(x, y)| x.hypot(*y))
        .collect();
    let ori = g
        .gx
        .data()
        .iter()
        .zip(g.gy.data())
        .map(|(x, y)| orientation(*y, *x))
        .collect();
    (
        g.gx.like(1, mag).expect("finite magnitudes"),
        g.gx.like(1, ori).expect("finite orientations"),
    )
}

pub const HIST_BINS: usize = 256;

/// Per-channel histogram equalization on a 256-level quantization.
///
/// A channel holding a single level is returned unchanged.
pub fn hist_equalize(img: &Image) -> Image {
    let (lo, hi) = match img.range() {
        ValueRange::Unit => (0.0, 1.0),
        ValueRange::Signed => (-1.0, 1.0),
    };
    let ch = img.channels();
    let n = img.height() * img.width();
    let top = (HIST_BINS - 1) as f64;
    let quantize = |v: f64| (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * top).round() as usize;
    let mut data = img.data().to_vec();
    for c in 0..ch {
        let mut hist = [0usize; HIST_BINS];
        for px in img.data().chunks(ch) {
            hist[quantize(px[c])] += 1;
        }
        if hist.iter().filter(|&&h| h > 0).count() <= 1 {
            continue;
        }
        let mut cdf = [0usize; HIST_BINS];
        let mut running = 0;
        for (i, h) in hist.iter().enumerate() {
            running += h;
            cdf[i] = running;
        }
        let cdf_min = *cdf.iter().find(|&&v| v > 0).expect("non-empty image");
        let denom = (n - cdf_min) as f64;
        for px in data.chunks_mut(ch) {
            let eq = (cdf[quantize(px[c])] - cdf_min) as f64 / denom;
            px[c] = lo + eq * (hi - lo);
        }
    }
    img.like(ch, data).expect("equalized values are finite")
}

pub fn hflip(img: &Image) -> Image {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let mut data = Vec::with_capacity(img.data().len());
    for y in 0..h {
        for x in (0..w).rev() {
            let start = (y * w + x) * ch;
            data.extend_from_slice(&img.data()[start..start + ch]);
        }
    }
    img.like(ch, data).expect("same geometry")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn grayscale_examples() {
        let white = to_grayscale(&Image::filled(2, 2, 3, 1.0)).unwrap();
        assert!(white.data().iter().all(|&v| close(v, 1.0, 1e-12)));
        let black = to_grayscale(&Image::filled(2, 2, 3, 0.0)).unwrap();
        assert!(black.data().iter().all(|&v| v == 0.0));
        let red = Image::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert!(close(to_grayscale(&red).unwrap().get(0, 0, 0), 0.299, 1e-15));
        assert!(to_grayscale(&Image::filled(2, 2, 1, 0.5)).is_err());
    }

    #[test]
    fn blur_of_constant_is_constant() {
        let img = Image::filled(6, 7, 3, 0.42);
        let out = gaussian_blur(&img, 5, 3.0).unwrap();
        assert!(out.data().iter().all(|&v| close(v, 0.42, 1e-12)));
    }

    #[test]
    fn blur_impulse_response_is_the_kernel() {
        let mut img = Image::filled(5, 5, 1, 0.0);
        img.set(2, 2, 0, 1.0);
        let out = gaussian_blur(&img, 5, 3.0).unwrap();
        // Oracle: tabulate exp(-(dx^2+dy^2)/18) directly and normalize.
        let mut table = [[0.0f64; 5]; 5];
        let mut total = 0.0;
        for (dy, row) in table.iter_mut().enumerate() {
            for (dx, v) in row.iter_mut().enumerate() {
                let (fy, fx) = (dy as f64 - 2.0, dx as f64 - 2.0);
                *v = (-(fx * fx + fy * fy) / 18.0).exp();
                total += *v;
            }
        }
        for y in 0..5 {
            for x in 0..5 {
                assert!(close(out.get(y, x, 0), table[y][x] / total, 1e-12));
            }
        }
    }

    #[test]
    fn blur_reduces_checkerboard_variance() {
        let img = Image::from_fn(8, 8, 1, |y, x, _| ((x + y) % 2) as f64).unwrap();
        let var = |im: &Image| {
            let m = im.data().iter().sum::<f64>() / im.data().len() as f64;
            im.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / im.data().len() as f64
        };
        let out = gaussian_blur(&img, 5, 3.0).unwrap();
        assert!(var(&out) < var(&img));
    }

    #[test]
    fn blur_rejects_even_kernels() {
        assert!(gaussian_blur(&Image::filled(4, 4, 1, 0.0), 4, 3.0).is_err());
        assert!(gaussian_blur(&Image::filled(4, 4, 1, 0.0), 5, 0.0).is_err());
    }

    #[test]
    fn gradients_of_constant_vanish() {
        let g = xy_gradients(&Image::filled(5, 5, 1, 0.3)).unwrap();
        assert!(g.gx.data().iter().chain(g.gy.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_of_horizontal_ramp() {
        let w = 10;
        let img = Image::from_fn(6, w, 1, |_, x, _| x as f64 / w as f64).unwrap();
        let g = xy_gradients(&img).unwrap();
        for y in 0..6 {
            for x in 1..w - 1 {
                assert!(close(g.gx.get(y, x, 0), 2.0 / w as f64, 1e-12));
                assert_eq!(g.gy.get(y, x, 0), 0.0);
            }
        }
        // Replicate padding halves the one-sided difference at the border.
        assert!(close(g.gx.get(0, 0, 0), 1.0 / w as f64, 1e-12));
    }

    #[test]
    fn gradients_swap_under_transpose() {
        let img = Image::from_fn(5, 5, 1, |y, x, _| ((y * 3 + x * x) % 7) as f64 / 7.0).unwrap();
        let t = Image::from_fn(5, 5, 1, |y, x, _| img.get(x, y, 0)).unwrap();
        let (g, gt) = (xy_gradients(&img).unwrap(), xy_gradients(&t).unwrap());
        for y in 0..5 {
            for x in 0..5 {
                assert_eq!(g.gx.get(y, x, 0), gt.gy.get(x, y, 0));
                assert_eq!(g.gy.get(y, x, 0), gt.gx.get(x, y, 0));
            }
        }
        assert!(xy_gradients(&Image::filled(3, 3, 3, 0.0)).is_err());
    }

    #[test]
    fn downsample_picks_even_indices() {
        let img = Image::from_fn(4, 4, 1, |y, x, _| (y * 4 + x) as f64 / 16.0).unwrap();
        let d = downsample_skip(&img).unwrap();
        assert_eq!((d.height(), d.width()), (2, 2));
        assert_eq!(d.data(), &[0.0, 2.0 / 16.0, 8.0 / 16.0, 10.0 / 16.0]);

        let big = Image::from_fn(8, 8, 1, |y, x, _| (y * 8 + x) as f64 / 64.0).unwrap();
        let dd = downsample_skip(&downsample_skip(&big).unwrap()).unwrap();
        assert_eq!(dd.data(), &[0.0, 4.0 / 64.0, 32.0 / 64.0, 36.0 / 64.0]);

        let odd = downsample_skip(&Image::filled(5, 3, 1, 0.7)).unwrap();
        assert_eq!((odd.height(), odd.width()), (3, 2));
        assert!(odd.data().iter().all(|&v| v == 0.7));
        assert!(downsample_skip(&Image::filled(1, 4, 1, 0.0)).is_err());
    }

    #[test]
    fn magnitude_and_orientation() {
        let pair = |gx: f64, gy: f64| GradientPair {
            gx: Image::new(1, 1, 1, vec![gx]).unwrap(),
            gy: Image::new(1, 1, 1, vec![gy]).unwrap(),
        };
        let (m, o) = grad_mag_orient(&pair(3.0, 4.0));
        assert!(close(m.get(0, 0, 0), 5.0, 1e-12));
        assert!(close(o.get(0, 0, 0), 4f64.atan2(3.0), 1e-15));
        let (m, o) = grad_mag_orient(&pair(0.0, 0.0));
        assert_eq!((m.get(0, 0, 0), o.get(0, 0, 0)), (0.0, 0.0));
        let (_, o) = grad_mag_orient(&pair(0.0, 1.0));
        assert!(close(o.get(0, 0, 0), std::f64::consts::FRAC_PI_2, 1e-15));
        let (_, o) = grad_mag_orient(&pair(-1.0, 0.0));
        assert!(close(o.get(0, 0, 0), std::f64::consts::PI, 1e-15));
    }

    #[test]
    fn hist_equalize_examples() {
        let c = Image::filled(4, 4, 3, 0.3);
        assert_eq!(hist_equalize(&c), c);

        let two = Image::from_fn(4, 4, 1, |y, _, _| if y < 2 { 0.25 } else { 0.75 }).unwrap();
        let eq = hist_equalize(&two);
        for y in 0..4 {
            for x in 0..4 {
                let want = if y < 2 { 0.0 } else { 1.0 };
                assert!(close(eq.get(y, x, 0), want, 1e-12));
            }
        }

        let ramp = Image::from_fn(16, 16, 1, |y, x, _| (y * 16 + x) as f64 / 255.0).unwrap();
        let eq = hist_equalize(&ramp);
        for (a, b) in eq.data().iter().zip(ramp.data()) {
            assert!(close(*a, *b, 0.5 / 255.0));
        }
    }

    #[test]
    fn hflip_examples() {
        let row = Image::new(1, 3, 1, vec![0.1, 0.2, 0.3]).unwrap();
        assert_eq!(hflip(&row).data(), &[0.3, 0.2, 0.1]);
        let half = Image::from_fn(2, 4, 1, |_, x, _| if x < 2 { 0.0 } else { 1.0 }).unwrap();
        let flipped = hflip(&half);
        for y in 0..2 {
            for x in 0..4 {
                assert_eq!(flipped.get(y, x, 0), if x < 2 { 1.0 } else { 0.0 });
            }
        }
        let rgb = Image::from_fn(3, 5, 3, |y, x, c| ((y * 5 + x) * 3 + c) as f64 / 45.0).unwrap();
        assert_eq!(hflip(&hflip(&rgb)), rgb);
    }
}
