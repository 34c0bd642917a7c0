//! Floating-point images and 8-bit PNG / PPM input and output.

use std::path::Path;

use crate::error::{Error, Result};

/// Value range an image's samples are expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueRange {
    /// `[0, 1]`, the at-rest representation.
    Unit,
    /// `[-1, 1]`, the view consumed by the translation networks.
    Signed,
}

/// Channel-last `H x W x C` image with `C` equal to 1 or 3.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    range: ValueRange,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        Self::with_range(height, width, channels, ValueRange::Unit, data)
    }

    pub fn with_range(
        height: usize,
        width: usize,
        channels: usize,
        range: ValueRange,
        data: Vec<f64>,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "{height}x{width}x{channels} image needs {} samples, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample {bad}")));
        }
        Ok(Image {
            height,
            width,
            channels,
            range,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels])
            .expect("valid constant image")
    }

    /// Build an image by evaluating `f(y, x, c)` at every sample.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Same geometry and range, new samples.
    pub(crate) fn like(&self, channels: usize, data: Vec<f64>) -> Result<Self> {
        Self::with_range(self.height, self.width, channels, self.range, data)
    }

    /// Map `[0, 1]` samples to `[-1, 1]`; a no-op on signed images.
    pub fn to_signed(&self) -> Image {
        match self.range {
            ValueRange::Signed => self.clone(),
            ValueRange::Unit => Image {
                range: ValueRange::Signed,
                data: self.data.iter().map(|v| v * 2.0 - 1.0).collect(),
                ..*self
            },
        }
    }

    /// Map `[-1, 1]` samples back to `[0, 1]`, clamping; a no-op on unit images.
    pub fn to_unit(&self) -> Image {
        match self.range {
            ValueRange::Unit => self.clone(),
            ValueRange::Signed => Image {
                range: ValueRange::Unit,
                data: self
                    .data
                    .iter()
                    .map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0))
                    .collect(),
                ..*self
            },
        }
    }

    /// Channel-first copy of the samples, `[C, H, W]` order.
    pub fn to_planar(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.data.len()];
        let plane = self.height * self.width;
        for (i, px) in self.data.chunks(self.channels).enumerate() {
            for (c, v) in px.iter().enumerate() {
                out[c * plane + i] = *v;
            }
        }
        out
    }

    /// Inverse of [`Image::to_planar`].
    pub fn from_planar(
        height: usize,
        width: usize,
        channels: usize,
        range: ValueRange,
        planar: &[f64],
    ) -> Result<Self> {
        let plane = height * width;
        if planar.len() != plane * channels {
            return Err(Error::invalid("planar buffer length mismatch"));
        }
        let mut data = vec![0.0; planar.len()];
        for c in 0..channels {
            for i in 0..plane {
                data[i * channels + c] = planar[c * plane + i];
            }
        }
        Self::with_range(height, width, channels, range, data)
    }

    /// Copy out the `h x w` window whose top-left corner is `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Image> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(Error::invalid(format!(
                "crop {h}x{w}@({y0},{x0}) outside {}x{} image",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(h * w * self.channels);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * self.channels;
            data.extend_from_slice(&self.data[start..start + w * self.channels]);
        }
        Self::with_range(h, w, self.channels, self.range, data)
    }

    /// Quantize to 8-bit RGB (grayscale is replicated), unit range assumed.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let unit = self.to_unit();
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let mut out = Vec::with_capacity(self.height * self.width * 3);
        for px in unit.data.chunks(self.channels) {
            if self.channels == 3 {
                out.extend(px.iter().map(|&v| q(v)));
            } else {
                out.extend([q(px[0]); 3]);
            }
        }
        out
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Image> {
        Self::new(
            height,
            width,
            3,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    /// Read an 8-bit PNG or binary PPM; other color types are converted to RGB.
    pub fn load(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|e| Error::data(format!("cannot read image {}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Self::from_rgb8(h as usize, w as usize, img.as_raw())
    }

    /// Write as PNG, or binary PPM when the extension is `.ppm`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_rgb8();
        let (w, h) = (self.width as u32, self.height as u32);
        let is_ppm = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
        let err = |e: image::ImageError| {
            Error::data(format!("cannot write image {}: {e}", path.display()))
        };
        if is_ppm {
            use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
            use image::ImageEncoder;
            let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
            PnmEncoder::new(std::io::BufWriter::new(file))
                .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
                .write_image(&bytes, w, h, image::ExtendedColorType::Rgb8)
                .map_err(err)
        } else {
            image::save_buffer_with_format(path, &bytes, w, h, image::ExtendedColorType::Rgb8, image::ImageFormat::Png)
                .map_err(err)
        }
    }
}

/// True when the path carries an image extension this crate reads.
pub fn is_image_path(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("png" | "ppm")
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_geometry_and_values() {
        assert!(Image::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(Image::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Image::new(1, 1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn planar_round_trip() {
        let img = Image::from_fn(3, 4, 3, |y, x, c| (y * 12 + x * 3 + c) as f64 / 40.0).unwrap();
        let planar = img.to_planar();
        assert_eq!(planar[12], img.get(0, 0, 1));
        let back = Image::from_planar(3, 4, 3, ValueRange::Unit, &planar).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn png_and_ppm_round_trip_8bit() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(5, 7, 3, |y, x, c| ((y * 7 + x) * 3 + c) as f64 / 255.0).unwrap();
        for name in ["a.png", "a.ppm"] {
            let path = dir.path().join(name);
            img.save(&path).unwrap();
            let back = Image::load(&path).unwrap();
            assert_eq!(back.to_rgb8(), img.to_rgb8());
        }
        let raw = std::fs::read(dir.path().join("a.ppm")).unwrap();
        assert!(raw.starts_with(b"P6"));
    }

    #[test]
    fn signed_view_round_trip() {
        let img = Image::from_fn(2, 2, 1, |y, x, _| (y * 2 + x) as f64 / 3.0).unwrap();
        let s = img.to_signed();
        assert_eq!(s.range(), ValueRange::Signed);
        assert_eq!(s.get(0, 0, 0), -1.0);
        let u = s.to_unit();
        for (a, b) in u.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
