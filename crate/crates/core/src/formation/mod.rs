//! Image formation: `y = tonemap(clip(scene * psf + noise))`.
//!
//! Scenes are linear radiance. Degraded images are clipped at the sensor
//! range `x_max` and tone mapped with `x / (x + alpha)`; targets are the
//! tone-mapped scene without clipping.

mod psf;
mod scene;

pub use psf::{fuse_psf_exposures, rotate_psf, PsfStack, DEFAULT_SATURATION, PSF_EXPOSURE_RATIOS};
pub use scene::{count_regions_above, gen_synthetic_scene};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{ensure, Error, Result};
use crate::fft;
use crate::image::{Image, CHANNELS};
use crate::kernel_code::KernelCode;

/// Rotation angles of the evaluation kernel set, degrees.
pub const ROTATION_SET: [f64; 9] = [-12.0, -9.0, -6.0, -3.0, 0.0, 3.0, 6.0, 9.0, 12.0];

/// Rotation set exactly as printed in the source tables (probably a typo
/// for [`ROTATION_SET`]); kept selectable.
pub const ROTATION_SET_AS_PRINTED: [f64; 9] = [-12.0, 9.0, 6.0, 3.0, 0.0, 3.0, 6.0, 9.0, 12.0];

#[derive(Clone, Debug, PartialEq)]
pub struct FormationParams {
    /// Sensor clipping threshold, radiance units.
    pub x_max: f64,
    /// Tone-map scale.
    pub alpha: f64,
    /// Std-dev of additive Gaussian noise in the linear domain.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for FormationParams {
    fn default() -> Self {
        FormationParams {
            x_max: 500.0,
            alpha: 0.25,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl FormationParams {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.x_max > 0.0,
            "x_max must be positive, got {}",
            self.x_max
        );
        ensure!(
            self.alpha > 0.0,
            "alpha must be positive, got {}",
            self.alpha
        );
        ensure!(
            self.noise_sigma >= 0.0,
            "noise_sigma must be >= 0, got {}",
            self.noise_sigma
        );
        Ok(())
    }
}

/// Degraded/target pair in the tone-mapped domain, with the kernel code of
/// the PSF that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub degraded: Image,
    pub target: Image,
    pub code: KernelCode,
    pub angle_deg: f64,
}

/// Output of [`simulate_degraded`].
#[derive(Clone, Debug, PartialEq)]
pub struct DegradedPair {
    pub degraded: Image,
    pub target: Image,
}

impl DegradedPair {
    pub fn with_code(self, code: KernelCode, angle_deg: f64) -> TrainingPair {
        TrainingPair {
            degraded: self.degraded,
            target: self.target,
            code,
            angle_deg,
        }
    }
}

/// Linear 2-D convolution of one plane, zero padded, cropped to the input
/// size with the kernel center aligned ("same" output).
pub fn convolve_plane(
    plane: &[f64],
    width: usize,
    height: usize,
    kernel: &[f64],
    ksize: usize,
) -> Vec<f64> {
    let rows = fft::fast_len(height + ksize - 1);
    let cols = fft::fast_len(width + ksize - 1);
    let mut a = vec![Complex64::default(); rows * cols];
    for y in 0..height {
        for x in 0..width {
            a[y * cols + x] = Complex64::new(plane[y * width + x], 0.0);
        }
    }
    let mut b = vec![Complex64::default(); rows * cols];
    for y in 0..ksize {
        for x in 0..ksize {
            b[y * cols + x] = Complex64::new(kernel[y * ksize + x], 0.0);
        }
    }
    fft::fft2(&mut a, rows, cols);
    fft::fft2(&mut b, rows, cols);
    a.iter_mut().zip(&b).for_each(|(u, v)| *u *= v);
    fft::ifft2(&mut a, rows, cols);

    let r = ksize / 2;
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            out.push(a[(y + r) * cols + x + r].re);
        }
    }
    out
}

/// Convolve each channel with the matching PSF channel via FFT.
pub fn convolve_psf(scene: &Image, psf: &PsfStack) -> Result<Image> {
    let k = psf.size();
    if k > 4 * scene.width() || k > 4 * scene.height() {
        return Err(Error::Shape(format!(
            "kernel {k}x{k} exceeds 4x the image side ({}x{})",
            scene.width(),
            scene.height()
        )));
    }
    let (w, h) = (scene.width(), scene.height());
    let planes: Vec<Vec<f64>> = (0..CHANNELS)
        .into_par_iter()
        .map(|c| convolve_plane(scene.channel(c), w, h, psf.kernel(c), k))
        .collect();
    let data = planes.into_iter().flatten().map(|v| v.max(0.0)).collect();
    Image::from_planar(w, h, data)
}

/// Pointwise `min(x, x_max)`.
pub fn clip(image: &Image, x_max: f64) -> Image {
    image.map(|v| v.min(x_max))
}

/// `x / (x + alpha)`, mapping `[0, inf)` into `[0, 1)`.
pub fn tonemap(image: &Image, alpha: f64) -> Image {
    image.map(|v| tonemap_value(v, alpha))
}

#[inline]
pub fn tonemap_value(x: f64, alpha: f64) -> f64 {
    x / (x + alpha)
}

#[inline]
pub fn inverse_tonemap_value(y: f64, alpha: f64) -> f64 {
    y * alpha / (1.0 - y)
}

/// `y * alpha / (1 - y)`; rejects values outside `[0, 1)`.
pub fn inverse_tonemap(image: &Image, alpha: f64) -> Result<Image> {
    ensure!(alpha > 0.0, "alpha must be positive");
    if let Some(v) = image.data().iter().find(|v| !(0.0..1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!(
            "tone-mapped value {v} outside [0, 1)"
        )));
    }
    Ok(image.map(|v| inverse_tonemap_value(v, alpha)))
}

/// Add i.i.d. Gaussian noise and clamp at zero. `sigma == 0` is the identity.
pub fn add_noise(image: &Image, sigma: f64, seed: u64) -> Result<Image> {
    ensure!(
        sigma >= 0.0 && sigma.is_finite(),
        "noise sigma must be >= 0, got {sigma}"
    );
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = image.clone();
    for v in out.data_mut() {
        *v = (*v + normal.sample(&mut rng)).max(0.0);
    }
    Ok(out)
}

/// Apply the full degradation model to a linear scene.
pub fn simulate_degraded(
    scene: &Image,
    psf: &PsfStack,
    p: &FormationParams,
) -> Result<DegradedPair> {
    p.validate()?;
    scene.validate_hdr()?;
    let blurred = convolve_psf(scene, psf)?;
    let noisy = add_noise(&blurred, p.noise_sigma, p.seed)?;
    Ok(DegradedPair {
        degraded: tonemap(&clip(&noisy, p.x_max), p.alpha),
        target: tonemap(scene, p.alpha),
    })
}

/// Flare energy: `sum(degraded - target)` over pixels whose target is
/// below 0.5 (the unsaturated neighborhood of highlights).
pub fn flare_energy(pair: &DegradedPair) -> f64 {
    pair.degraded
        .data()
        .iter()
        .zip(pair.target.data())
        .filter(|(_, &t)| t < 0.5)
        .map(|(d, t)| d - t)
        .sum()
}
