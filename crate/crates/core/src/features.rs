//! Dense upright RootSIFT on a regular grid.
//!
//! The image is converted to grayscale and skip-downsampled by two before
//! gradients are taken with `[-1 0 1]` kernels. Each grid point yields one
//! descriptor per scale: a 4x4 grid of `scale x scale` pixel cells, each an
//! 8-bin histogram of gradient orientation weighted by magnitude. Orientation
//! bins are centered on multiples of 45 degrees and assigned hard, without
//! interpolation.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::imgproc::{self, orientation};

pub const DESCRIPTOR_DIM: usize = 128;
pub const CELLS_PER_SIDE: usize = 4;
pub const ORIENTATION_BINS: usize = 8;
/// Histograms with smaller L2 norm are discarded.
pub const ENERGY_EPS: f64 = 1e-6;
/// Component clamp of the SIFT normalization tail.
pub const SIFT_CLAMP: f64 = 0.2;
pub const DEFAULT_SCALES: [usize; 4] = [4, 6, 8, 10];
pub const DEFAULT_STRIDE: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct LocalDescriptor {
    pub vector: Vec<f64>,
    /// Patch center in original-image pixels.
    pub x: f64,
    pub y: f64,
    /// Cell size in downsampled pixels.
    pub scale: f64,
}

/// Magnitude and orientation maps of a grayscale image.
pub(crate) struct GradientField {
    width: usize,
    height: usize,
    magnitude: Vec<f64>,
    bin: Vec<u8>,
}

fn orientation_bin(theta: f64) -> u8 {
    let step = std::f64::consts::TAU / ORIENTATION_BINS as f64;
    ((theta / step).round() as i64).rem_euclid(ORIENTATION_BINS as i64) as u8
}

impl GradientField {
    pub(crate) fn new(gray: &Image) -> Result<Self> {
        let g = imgproc::xy_gradients(gray)?;
        let magnitude = g
            .gx
            .data()
            .iter()
            .zip(g.gy.data())
            .map(|(x, y)| x.hypot(*y))
            .collect();
        let bin = g
            .gx
            .data()
            .iter()
            .zip(g.gy.data())
            .map(|(x, y)| orientation_bin(orientation(*y, *x)))
            .collect();
        Ok(GradientField {
            width: gray.width(),
            height: gray.height(),
            magnitude,
            bin,
        })
    }

    fn check_patch(&self, x: usize, y: usize, scale: usize) -> Result<()> {
        let half = 2 * scale;
        if scale == 0 || x < half || y < half || x + half > self.width || y + half > self.height {
            return Err(Error::invalid(format!(
                "{0}x{0} patch at ({x}, {y}) does not fit a {1}x{2} image",
                4 * scale,
                self.width,
                self.height
            )));
        }
        Ok(())
    }

    /// Raw orientation histogram of the patch centered at `(x, y)`.
    fn histogram(&self, x: usize, y: usize, scale: usize) -> Vec<f64> {
        let mut hist = vec![0.0; DESCRIPTOR_DIM];
        let (x0, y0) = (x - 2 * scale, y - 2 * scale);
        for py in 0..4 * scale {
            let row = (y0 + py) * self.width;
            let cell_y = py / scale;
            for px in 0..4 * scale {
                let i = row + x0 + px;
                let cell = cell_y * CELLS_PER_SIDE + px / scale;
                hist[cell * ORIENTATION_BINS + self.bin[i] as usize] += self.magnitude[i];
            }
        }
        hist
    }

    fn sift(&self, x: usize, y: usize, scale: usize) -> Result<Option<Vec<f64>>> {
        self.check_patch(x, y, scale)?;
        Ok(sift_normalize(self.histogram(x, y, scale)))
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// L2 normalize, clamp at [`SIFT_CLAMP`], renormalize. `None` when the
/// histogram carries less than [`ENERGY_EPS`] energy.
fn sift_normalize(mut hist: Vec<f64>) -> Option<Vec<f64>> {
    let norm = l2(&hist);
    if norm < ENERGY_EPS {
        return None;
    }
    hist.iter_mut().for_each(|v| *v = (*v / norm).min(SIFT_CLAMP));
    let norm = l2(&hist);
    hist.iter_mut().for_each(|v| *v /= norm);
    Some(hist)
}

/// Upright SIFT vector for the `4*scale` patch centered at `(x, y)` of a
/// grayscale image, or `None` for a patch without gradient energy.
pub fn sift_at(gray: &Image, x: usize, y: usize, scale: usize) -> Result<Option<Vec<f64>>> {
    GradientField::new(gray)?.sift(x, y, scale)
}

/// L1 normalize, then take the square root of every component.
pub fn rootsift(v: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = v.iter().find(|c| !(**c >= 0.0)) {
        return Err(Error::invalid(format!("RootSIFT input has negative component {bad}")));
    }
    let l1: f64 = v.iter().sum();
    if l1 == 0.0 {
        return Err(Error::invalid("RootSIFT of an all-zero vector"));
    }
    Ok(v.iter().map(|c| (c / l1).sqrt()).collect())
}

/// Grid coordinates along one axis of length `len` for cell size `scale`.
pub fn grid_positions(len: usize, scale: usize, stride: usize) -> impl Iterator<Item = usize> {
    let half = 2 * scale;
    (0..=len)
        .step_by(stride.max(1))
        .filter(move |&c| c >= half && c + half <= len)
}

/// Descriptor extraction settings.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams {
    pub scales: Vec<usize>,
    pub stride: usize,
}

impl Default for DenseParams {
    fn default() -> Self {
        DenseParams {
            scales: DEFAULT_SCALES.to_vec(),
            stride: DEFAULT_STRIDE,
        }
    }
}

/// RootSIFT descriptors on a dense grid, scale-major then row-major order.
pub fn extract_dense(img: &Image, scales: &[usize], stride: usize) -> Result<Vec<LocalDescriptor>> {
    if stride == 0 {
        return Err(Error::invalid("grid stride must be at least 1"));
    }
    if img.channels() != 3 {
        return Err(Error::invalid("dense extraction expects an RGB image"));
    }
    let limit = img.height().min(img.width()) / 2;
    for &s in scales {
        if s == 0 || 4 * s > limit {
            return Err(Error::invalid(format!(
                "scale {s} needs a {}-pixel patch but the downsampled image allows {limit}",
                4 * s
            )));
        }
    }
    let gray = imgproc::downsample_skip(&imgproc::to_grayscale(img)?)?;
    let field = GradientField::new(&gray)?;
    let mut out = Vec::new();
    for &s in scales {
        for y in grid_positions(gray.height(), s, stride) {
            for x in grid_positions(gray.width(), s, stride) {
                if let Some(sift) = field.sift(x, y, s)? {
                    out.push(LocalDescriptor {
                        vector: rootsift(&sift)?,
                        x: 2.0 * x as f64,
                        y: 2.0 * y as f64,
                        scale: s as f64,
                    });
                }
            }
        }
    }
    Ok(out)
}

const DUMP_MAGIC: &[u8; 4] = b"DSF1";

/// Little-endian `DSF1` dump: count, then `{x, y, scale, vector[128]}` as f32.
pub fn write_descriptors(w: &mut impl Write, descs: &[LocalDescriptor]) -> std::io::Result<()> {
    w.write_all(DUMP_MAGIC)?;
    w.write_all(&(descs.len() as u32).to_le_bytes())?;
    for d in descs {
        for v in [d.x, d.y, d.scale].iter().chain(&d.vector) {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_descriptors(r: &mut impl Read) -> Result<Vec<LocalDescriptor>> {
    let load = |e: std::io::Error| Error::Load(format!("descriptor dump: {e}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(load)?;
    if &magic != DUMP_MAGIC {
        return Err(Error::Load("descriptor dump: bad magic".into()));
    }
    let count = crate::binio::read_u32(r).map_err(load)? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let vals = crate::binio::read_f32s(r, 3 + DESCRIPTOR_DIM).map_err(load)?;
        out.push(LocalDescriptor {
            x: vals[0],
            y: vals[1],
            scale: vals[2],
            vector: vals[3..].to_vec(),
        });
    }
    Ok(out)
}

pub fn save_descriptors(path: &Path, descs: &[LocalDescriptor]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    write_descriptors(&mut f, descs)
        .and_then(|_| f.flush())
        .map_err(|e| Error::io(path, e))
}
