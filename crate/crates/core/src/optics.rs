//! Wave-optics PSF simulation for a camera behind a display panel.
//!
//! A unit-amplitude point source produces a spherical wavefront at the
//! display, which is modulated by the display transmittance, propagated to
//! the lens, focused by the lens phase and propagated to the sensor. The PSF
//! is the intensity of the sensor field.
//!
//! Free-space propagation uses the Fresnel transfer function
//! `H(fx, fy) = exp(-i pi lambda z (fx^2 + fy^2))`. On the discrete grid it
//! has unit modulus, so propagation is exactly unitary.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{ensure, Error, Result};
use crate::fft;
use crate::formation::PsfStack;

/// Complex amplitude sampled on an `n`x`n` grid centered on the optical axis.
///
/// Sample `(row, col)` sits at `q = (row - n/2) * pitch`, `p = (col - n/2) * pitch`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField {
    n: usize,
    pitch: f64,
    data: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(n: usize, pitch: f64, data: Vec<Complex64>) -> Result<Self> {
        check_grid(n, pitch)?;
        if data.len() != n * n {
            return Err(Error::Shape(format!(
                "field needs {} samples, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(ComplexField { n, pitch, data })
    }

    /// Field built by evaluating `f(p, q)` at every sample position.
    pub fn from_fn(n: usize, pitch: f64, f: impl Fn(f64, f64) -> Complex64) -> Result<Self> {
        check_grid(n, pitch)?;
        let mut data = Vec::with_capacity(n * n);
        for row in 0..n {
            for col in 0..n {
                let (p, q) = sample_position(n, pitch, row, col);
                data.push(f(p, q));
            }
        }
        Ok(ComplexField { n, pitch, data })
    }

    pub fn constant(n: usize, pitch: f64, value: Complex64) -> Result<Self> {
        Self::new(n, pitch, vec![value; n * n])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn at(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.n + col]
    }

    pub fn re(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.re).collect()
    }

    pub fn im(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.im).collect()
    }

    /// Total power `sum |u|^2`.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.norm_sqr()).collect()
    }

    fn check_compatible(&self, n: usize, pitch: f64) -> Result<()> {
        if self.n != n || (self.pitch - pitch).abs() > 1e-12 * self.pitch {
            return Err(Error::Shape(format!(
                "grid {}x{} @ {:e} m vs {n}x{n} @ {pitch:e} m",
                self.n, self.n, self.pitch
            )));
        }
        Ok(())
    }
}

/// Real display transmittance in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplayPattern {
    n: usize,
    pitch: f64,
    t: Vec<f64>,
}

impl DisplayPattern {
    pub fn new(n: usize, pitch: f64, t: Vec<f64>) -> Result<Self> {
        check_grid(n, pitch)?;
        if t.len() != n * n {
            return Err(Error::Shape(format!(
                "pattern needs {} samples, got {}",
                n * n,
                t.len()
            )));
        }
        if let Some(v) = t.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "transmittance {v} outside [0, 1]"
            )));
        }
        Ok(DisplayPattern { n, pitch, t })
    }

    pub fn open(n: usize, pitch: f64) -> Result<Self> {
        Self::new(n, pitch, vec![1.0; n * n])
    }

    pub fn from_fn(n: usize, pitch: f64, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut t = Vec::with_capacity(n * n);
        for row in 0..n {
            for col in 0..n {
                t.push(f(row, col));
            }
        }
        Self::new(n, pitch, t)
    }

    /// Vertical bars: open for `open` samples out of every `period` columns.
    pub fn vertical_stripes(n: usize, pitch: f64, period: usize, open: usize) -> Result<Self> {
        ensure!(
            period > 0 && open <= period,
            "bad stripe geometry {open}/{period}"
        );
        Self::from_fn(
            n,
            pitch,
            |_, col| if col % period < open { 1.0 } else { 0.0 },
        )
    }

    /// Synthetic pixel-grid display: a lattice of rectangular openings with
    /// the given period, clipped to a circular pupil of `pupil_frac * n/2`
    /// samples radius. The layout is 180-degree symmetric about the grid
    /// center.
    pub fn pixel_grid(
        n: usize,
        pitch: f64,
        period: usize,
        open_w: usize,
        open_h: usize,
        pupil_frac: f64,
    ) -> Result<Self> {
        ensure!(
            period > 0 && open_w <= period && open_h <= period,
            "bad pixel geometry"
        );
        let c = (n / 2) as i64;
        let radius = pupil_frac * (n / 2) as f64;
        let half_w = open_w as i64 / 2;
        let half_h = open_h as i64 / 2;
        let period = period as i64;
        Self::from_fn(n, pitch, |row, col| {
            let dy = row as i64 - c;
            let dx = col as i64 - c;
            if ((dx * dx + dy * dy) as f64).sqrt() > radius {
                return 0.0;
            }
            let ox = dx.rem_euclid(period);
            let oy = dy.rem_euclid(period);
            let in_x = ox <= half_w || ox >= period - half_w;
            let in_y = oy <= half_h || oy >= period - half_h;
            if in_x && in_y {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn transmittance(&self) -> &[f64] {
        &self.t
    }
}

/// Anything that can multiply a [`ComplexField`] pointwise.
pub enum Mask<'a> {
    Complex(&'a ComplexField),
    Transmittance(&'a DisplayPattern),
}

impl<'a> From<&'a ComplexField> for Mask<'a> {
    fn from(f: &'a ComplexField) -> Self {
        Mask::Complex(f)
    }
}

impl<'a> From<&'a DisplayPattern> for Mask<'a> {
    fn from(p: &'a DisplayPattern) -> Self {
        Mask::Transmittance(p)
    }
}

/// Geometry of the display/lens/sensor stack. Lengths in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct OpticalConfig {
    pub lambda_rgb: [f64; 3],
    /// Point source to display.
    pub z1: f64,
    /// Display to lens.
    pub d: f64,
    /// Focal length.
    pub f: f64,
    /// Lens to sensor.
    pub z2: f64,
    pub n: usize,
    pub pitch: f64,
}

impl Default for OpticalConfig {
    /// A 4 mm lens focused on a source 1 m away, 512 grid, pitch sized so
    /// the green channel sits at critical Fresnel sampling on the lens side.
    fn default() -> Self {
        let n = 512;
        let lambda_rgb = [610e-9, 530e-9, 470e-9];
        let z1 = 1.0;
        let d = 1.0e-3;
        let f = 4.0e-3;
        let z2 = in_focus_distance(z1 + d, f);
        let pitch = (lambda_rgb[1] * f / n as f64).sqrt();
        OpticalConfig {
            lambda_rgb,
            z1,
            d,
            f,
            z2,
            n,
            pitch,
        }
    }
}

impl OpticalConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_r", self.lambda_rgb[0]),
            ("lambda_g", self.lambda_rgb[1]),
            ("lambda_b", self.lambda_rgb[2]),
            ("z1", self.z1),
            ("d", self.d),
            ("f", self.f),
            ("z2", self.z2),
            ("pitch", self.pitch),
        ] {
            ensure!(v.is_finite() && v > 0.0, "{name} must be positive, got {v}");
        }
        ensure!(
            self.n.is_power_of_two() && (2..=2048).contains(&self.n),
            "grid_n must be a power of two in [2, 2048], got {}",
            self.n
        );
        Ok(())
    }

    /// Set `z2` so a source at `z1 + d` in front of the lens is in focus.
    pub fn focused(mut self) -> Self {
        self.z2 = in_focus_distance(self.z1 + self.d, self.f);
        self
    }
}

/// Thin-lens image distance for an object at `object_dist`.
pub fn in_focus_distance(object_dist: f64, f: f64) -> f64 {
    1.0 / (1.0 / f - 1.0 / object_dist)
}

/// Raised when the transfer function is undersampled:
/// `lambda * z / (n * pitch^2) > 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingWarning {
    pub lambda: f64,
    pub z: f64,
    pub n: usize,
    pub pitch: f64,
    /// `lambda * z / (n * pitch^2)`.
    pub ratio: f64,
}

impl std::fmt::Display for SamplingWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Fresnel transfer function undersampled: lambda*z/(n*pitch^2) = {:.3} > 1 \
             (lambda={:e} m, z={:e} m, n={}, pitch={:e} m)",
            self.ratio, self.lambda, self.z, self.n, self.pitch
        )
    }
}

pub fn sampling_check(lambda: f64, z: f64, n: usize, pitch: f64) -> Option<SamplingWarning> {
    let ratio = lambda * z / (n as f64 * pitch * pitch);
    (ratio > 1.0).then_some(SamplingWarning {
        lambda,
        z,
        n,
        pitch,
        ratio,
    })
}

/// Field of a unit point source `z1` in front of the display for color
/// channel `channel`.
pub fn spherical_wavefront(cfg: &OpticalConfig, channel: usize) -> Result<ComplexField> {
    cfg.validate()?;
    ensure!(channel < 3, "channel must be 0, 1 or 2, got {channel}");
    let k = PI / (cfg.lambda_rgb[channel] * cfg.z1);
    ComplexField::from_fn(cfg.n, cfg.pitch, |p, q| {
        Complex64::from_polar(1.0, k * (p * p + q * q))
    })
}

pub fn modulate<'a>(field: &ComplexField, mask: impl Into<Mask<'a>>) -> Result<ComplexField> {
    let data = match mask.into() {
        Mask::Complex(m) => {
            field.check_compatible(m.n, m.pitch)?;
            field.data.iter().zip(&m.data).map(|(a, b)| a * b).collect()
        }
        Mask::Transmittance(t) => {
            field.check_compatible(t.n, t.pitch)?;
            field.data.iter().zip(&t.t).map(|(a, &b)| a * b).collect()
        }
    };
    Ok(ComplexField {
        n: field.n,
        pitch: field.pitch,
        data,
    })
}

/// Thin-lens phase `exp(-i pi r^2 / (lambda f))`.
pub fn lens_modulate(field: &ComplexField, lambda: f64, f: f64) -> Result<ComplexField> {
    ensure!(
        f > 0.0 && f.is_finite(),
        "focal length must be positive, got {f}"
    );
    ensure!(lambda > 0.0, "wavelength must be positive, got {lambda}");
    Ok(quadratic_phase(field, -PI / (lambda * f)))
}

/// Multiply by `exp(i k r^2)`.
pub(crate) fn quadratic_phase(field: &ComplexField, k: f64) -> ComplexField {
    let n = field.n;
    let mut data = field.data.clone();
    for row in 0..n {
        for col in 0..n {
            let (p, q) = sample_position(n, field.pitch, row, col);
            data[row * n + col] *= Complex64::from_polar(1.0, k * (p * p + q * q));
        }
    }
    ComplexField {
        n,
        pitch: field.pitch,
        data,
    }
}

/// Fresnel propagation over distance `z` via the transfer function.
///
/// Undersampling of the transfer function is reported through `log` and
/// does not fail; use [`sampling_check`] to inspect it programmatically.
pub fn fresnel_propagate(field: &ComplexField, lambda: f64, z: f64) -> Result<ComplexField> {
    ensure!(
        z > 0.0 && z.is_finite(),
        "propagation distance must be positive, got {z}"
    );
    ensure!(lambda > 0.0, "wavelength must be positive, got {lambda}");
    if let Some(w) = sampling_check(lambda, z, field.n, field.pitch) {
        log::warn!("{w}");
    }
    let n = field.n;
    let mut spec = field.data.clone();
    fft::fft2(&mut spec, n, n);
    let df = 1.0 / (n as f64 * field.pitch);
    let k = -PI * lambda * z * df * df;
    let phase_1d: Vec<f64> = (0..n)
        .map(|i| {
            let f = fft::signed_bin(i, n);
            k * f * f
        })
        .collect();
    for row in 0..n {
        for col in 0..n {
            spec[row * n + col] *= Complex64::from_polar(1.0, phase_1d[row] + phase_1d[col]);
        }
    }
    fft::ifft2(&mut spec, n, n);
    Ok(ComplexField {
        n,
        pitch: field.pitch,
        data: spec,
    })
}

/// Result of [`simulate_psf`]: the PSF plus any sampling warnings raised
/// along the way.
#[derive(Clone, Debug)]
pub struct PsfSimulation {
    pub psf: PsfStack,
    pub warnings: Vec<SamplingWarning>,
}

/// Unnormalized sensor intensity `|U_S|^2` for one channel.
pub fn simulate_channel(
    pattern: &DisplayPattern,
    cfg: &OpticalConfig,
    channel: usize,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if pattern.n != cfg.n || (pattern.pitch - cfg.pitch).abs() > 1e-12 * cfg.pitch {
        return Err(Error::Shape(format!(
            "pattern grid {}@{:e} does not match optics grid {}@{:e}",
            pattern.n, pattern.pitch, cfg.n, cfg.pitch
        )));
    }
    let lambda = cfg.lambda_rgb[channel];
    let u = spherical_wavefront(cfg, channel)?;
    let u = modulate(&u, pattern)?;
    let u = fresnel_propagate(&u, lambda, cfg.d)?;
    let u = lens_modulate(&u, lambda, cfg.f)?;
    let u = fresnel_propagate(&u, lambda, cfg.z2)?;
    Ok(u.intensity())
}

/// Simulate the three-channel PSF.
///
/// Each channel is normalized to unit sum; the pre-normalization energies
/// are kept as the stack's channel gains. The `n`x`n` grid is cropped to
/// `(n-1)`x`(n-1)` by dropping the first row and column so the optical axis
/// lands on the center sample.
pub fn simulate_psf(pattern: &DisplayPattern, cfg: &OpticalConfig) -> Result<PsfSimulation> {
    cfg.validate()?;
    let mut warnings = Vec::new();
    for &lambda in &cfg.lambda_rgb {
        warnings.extend(sampling_check(lambda, cfg.d, cfg.n, cfg.pitch));
        warnings.extend(sampling_check(lambda, cfg.z2, cfg.n, cfg.pitch));
    }
    let channels: Vec<Vec<f64>> = (0..3)
        .into_par_iter()
        .map(|c| simulate_channel(pattern, cfg, c))
        .collect::<Result<_>>()?;

    let n = cfg.n;
    let k = n - 1;
    let mut kernels = Vec::with_capacity(3 * k * k);
    for ch in &channels {
        for row in 1..n {
            kernels.extend_from_slice(&ch[row * n + 1..(row + 1) * n]);
        }
    }
    let psf = PsfStack::from_unnormalized(k, kernels, 0.0)?;
    Ok(PsfSimulation { psf, warnings })
}

fn check_grid(n: usize, pitch: f64) -> Result<()> {
    ensure!(
        n.is_power_of_two(),
        "grid side must be a power of two, got {n}"
    );
    ensure!(
        pitch > 0.0 && pitch.is_finite(),
        "pitch must be positive, got {pitch}"
    );
    Ok(())
}

#[inline]
fn sample_position(n: usize, pitch: f64, row: usize, col: usize) -> (f64, f64) {
    let c = (n / 2) as f64;
    ((col as f64 - c) * pitch, (row as f64 - c) * pitch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cfg(n: usize) -> OpticalConfig {
        let f = 4.0e-3;
        let lambda_rgb = [610e-9, 530e-9, 470e-9];
        OpticalConfig {
            lambda_rgb,
            z1: 1.0,
            d: 1.0e-3,
            f,
            z2: 0.0,
            n,
            pitch: (lambda_rgb[1] * f / n as f64).sqrt(),
        }
        .focused()
    }

    fn random_field(n: usize, seed: u64) -> ComplexField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        ComplexField::new(n, 2e-6, data).unwrap()
    }

    #[test]
    fn wavefront_is_unit_phase_and_even() {
        let cfg = small_cfg(64);
        let u = spherical_wavefront(&cfg, 1).unwrap();
        let c = 32;
        assert_eq!(u.at(c, c), Complex64::new(1.0, 0.0));
        assert!(u.data().iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        for dr in -31i64..=31 {
            for dc in -31i64..=31 {
                let a = u.at((c as i64 + dr) as usize, (c as i64 + dc) as usize);
                let b = u.at((c as i64 - dr) as usize, (c as i64 - dc) as usize);
                assert_eq!(a, b);
            }
        }
        assert!(spherical_wavefront(&cfg, 3).is_err());
    }

    #[test]
    fn modulation_by_masks() {
        let u = random_field(16, 1);
        let ones = DisplayPattern::open(16, 2e-6).unwrap();
        assert_eq!(modulate(&u, &ones).unwrap(), u);
        let zeros = DisplayPattern::new(16, 2e-6, vec![0.0; 256]).unwrap();
        assert!(modulate(&u, &zeros).unwrap().energy() == 0.0);
        let mut t = vec![1.0; 256];
        t[37] = 0.5;
        let half = DisplayPattern::new(16, 2e-6, t).unwrap();
        let out = modulate(&u, &half).unwrap();
        assert!((out.data()[37].norm() - 0.5 * u.data()[37].norm()).abs() < 1e-15);
        let other = DisplayPattern::open(32, 2e-6).unwrap();
        assert!(matches!(modulate(&u, &other), Err(Error::Shape(_))));
        assert!(DisplayPattern::new(2, 1e-6, vec![0.0, 1.0, 1.5, 0.2]).is_err());
    }

    #[test]
    fn lens_phase_properties() {
        let u = random_field(32, 2);
        let out = lens_modulate(&u, 530e-9, 4e-3).unwrap();
        assert_eq!(out.at(16, 16), u.at(16, 16));
        for (a, b) in out.data().iter().zip(u.data()) {
            assert!((a.norm() - b.norm()).abs() < 1e-12);
        }
        let back = quadratic_phase(&out, PI / (530e-9 * 4e-3));
        for (a, b) in back.data().iter().zip(u.data()) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!(lens_modulate(&u, 530e-9, 0.0).is_err());
        assert!(lens_modulate(&u, 530e-9, -1.0).is_err());
    }

    #[test]
    fn propagation_conserves_energy_and_plane_waves() {
        let u = random_field(64, 3);
        let out = fresnel_propagate(&u, 530e-9, 1e-3).unwrap();
        assert!(((out.energy() - u.energy()) / u.energy()).abs() < 1e-6);

        let plane = ComplexField::constant(64, 2e-6, Complex64::new(0.3, -0.4)).unwrap();
        let out = fresnel_propagate(&plane, 530e-9, 5e-3).unwrap();
        assert!(out.data().iter().all(|z| (z.norm() - 0.5).abs() < 1e-12));
        assert!(fresnel_propagate(&u, 530e-9, 0.0).is_err());
    }

    #[test]
    fn propagation_semigroup() {
        let u = random_field(64, 4);
        let twice =
            fresnel_propagate(&fresnel_propagate(&u, 530e-9, 2e-3).unwrap(), 530e-9, 2e-3).unwrap();
        let once = fresnel_propagate(&u, 530e-9, 4e-3).unwrap();
        for (a, b) in twice.data().iter().zip(once.data()) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn sampling_warning_threshold() {
        assert!(sampling_check(500e-9, 1e-3, 256, 2e-6).is_none());
        let w = sampling_check(500e-9, 1e-2, 256, 2e-6).unwrap();
        assert!((w.ratio - 500e-9 * 1e-2 / (256.0 * 4e-12)).abs() < 1e-12);
    }

    #[test]
    fn channel_simulation_is_independent() {
        let cfg = small_cfg(64);
        let pattern = DisplayPattern::pixel_grid(64, cfg.pitch, 8, 4, 4, 0.8).unwrap();
        let alone = simulate_channel(&pattern, &cfg, 2).unwrap();
        let sim = simulate_psf(&pattern, &cfg).unwrap();
        let full = simulate_channel(&pattern, &cfg, 2).unwrap();
        assert_eq!(alone, full);
        assert!(sim.psf.kernel(2).iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_cfg(64);
        cfg.n = 48;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg(64);
        cfg.d = 0.0;
        assert!(cfg.validate().is_err());
        assert!(OpticalConfig::default().validate().is_ok());
    }
}
