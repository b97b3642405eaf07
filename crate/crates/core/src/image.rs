//! Planar RGB raster used for linear radiance as well as tone-mapped images.

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// Three-channel planar image (`[c][y][x]`), stored in double precision.
///
/// Linear-radiance (HDR) images are unbounded but nonnegative; tone-mapped
/// images live in `[0, 1)`. Both share this type; [`Image::validate_hdr`]
/// checks the HDR invariants.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Image {
            width,
            height,
            data: vec![value; CHANNELS * width * height],
        }
    }

    /// Build from `f(channel, y, x)`.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let data = (0..CHANNELS)
            .flat_map(|c| (0..height).flat_map(move |y| (0..width).map(move |x| (c, y, x))))
            .map(|(c, y, x)| f(c, y, x))
            .collect();
        Image {
            width,
            height,
            data,
        }
    }

    /// Build from planar data (`3 * height * width` samples).
    pub fn from_planar(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != CHANNELS * width * height {
            return Err(Error::Shape(format!(
                "expected {} samples for {width}x{height}x3, got {}",
                CHANNELS * width * height,
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    /// Build from interleaved RGB data, row-major top to bottom.
    pub fn from_interleaved(width: usize, height: usize, rgb: &[f64]) -> Result<Self> {
        if rgb.len() != CHANNELS * width * height {
            return Err(Error::Shape(format!(
                "expected {} interleaved samples, got {}",
                CHANNELS * width * height,
                rgb.len()
            )));
        }
        let mut img = Image::zeros(width, height);
        let plane = width * height;
        for (i, px) in rgb.chunks_exact(CHANNELS).enumerate() {
            for c in 0..CHANNELS {
                img.data[c * plane + i] = px[c];
            }
        }
        Ok(img)
    }

    /// Build an HDR image and check its invariants.
    pub fn hdr(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        let img = Self::from_planar(width, height, data)?;
        img.validate_hdr()?;
        Ok(img)
    }

    pub fn to_interleaved(&self) -> Vec<f64> {
        let plane = self.plane_len();
        let mut out = Vec::with_capacity(self.data.len());
        for i in 0..plane {
            for c in 0..CHANNELS {
                out.push(self.data[c * plane + i]);
            }
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn check_same_shape(&self, other: &Image) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// All samples finite and nonnegative.
    pub fn validate_hdr(&self) -> Result<()> {
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite sample at index {i}")));
        }
        if let Some(i) = self.data.iter().position(|&v| v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "negative radiance {} at index {i}",
                self.data[i]
            )));
        }
        Ok(())
    }

    /// Horizontal mirror image.
    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for c in 0..CHANNELS {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.set(c, y, x, self.get(c, y, self.width - 1 - x));
                }
            }
        }
        out
    }

    /// Copy out a `w`x`h` window starting at (`x0`, `y0`).
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Shape(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut out = Image::zeros(w, h);
        for c in 0..CHANNELS {
            for y in 0..h {
                let src = &self.channel(c)[(y0 + y) * self.width + x0..][..w];
                out.channel_mut(c)[y * w..(y + 1) * w].copy_from_slice(src);
            }
        }
        Ok(out)
    }
}
