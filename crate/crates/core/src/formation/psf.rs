//! Per-channel PSF kernels and the operations that act on them directly:
//! rotation and multi-exposure fusion.

use crate::error::{ensure, Error, Result};
use crate::image::{Image, CHANNELS};

const SUM_TOLERANCE: f64 = 1e-6;

/// Three square, odd-sized, nonnegative kernels, each summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct PsfStack {
    size: usize,
    kernels: Vec<f64>,
    /// Rotation applied relative to the measured/simulated PSF, degrees.
    pub angle_deg: f64,
    /// Per-channel energy before normalization.
    pub channel_gains: [f64; 3],
}

impl PsfStack {
    pub fn new(
        size: usize,
        kernels: Vec<f64>,
        angle_deg: f64,
        channel_gains: [f64; 3],
    ) -> Result<Self> {
        check_layout(size, kernels.len())?;
        if let Some(v) = kernels.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "PSF sample {v} is negative or non-finite"
            )));
        }
        let plane = size * size;
        for c in 0..CHANNELS {
            let s: f64 = kernels[c * plane..(c + 1) * plane].iter().sum();
            if (s - 1.0).abs() > SUM_TOLERANCE {
                return Err(Error::InvalidArgument(format!(
                    "PSF channel {c} sums to {s}, expected 1"
                )));
            }
        }
        Ok(PsfStack {
            size,
            kernels,
            angle_deg,
            channel_gains,
        })
    }

    /// Normalize each channel to unit sum, recording the sums as gains.
    /// Negative samples (numerical noise) are clamped to zero first.
    pub fn from_unnormalized(size: usize, mut kernels: Vec<f64>, angle_deg: f64) -> Result<Self> {
        check_layout(size, kernels.len())?;
        if kernels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite PSF sample".into()));
        }
        let plane = size * size;
        let mut gains = [0.0; 3];
        for (c, gain) in gains.iter_mut().enumerate() {
            let ch = &mut kernels[c * plane..(c + 1) * plane];
            ch.iter_mut().for_each(|v| *v = v.max(0.0));
            let s: f64 = ch.iter().sum();
            if s <= 0.0 {
                return Err(Error::Numeric(format!("PSF channel {c} has zero energy")));
            }
            ch.iter_mut().for_each(|v| *v /= s);
            *gain = s;
        }
        Ok(PsfStack {
            size,
            kernels,
            angle_deg,
            channel_gains: gains,
        })
    }

    /// Same single-channel kernel replicated to all three channels.
    pub fn from_mono(size: usize, kernel: &[f64]) -> Result<Self> {
        let mut all = Vec::with_capacity(3 * kernel.len());
        for _ in 0..CHANNELS {
            all.extend_from_slice(kernel);
        }
        Self::from_unnormalized(size, all, 0.0)
    }

    /// Unit impulse at the center.
    pub fn delta(size: usize) -> Result<Self> {
        let mut k = vec![0.0; size * size];
        k[size * size / 2] = 1.0;
        Self::from_mono(size, &k)
    }

    /// Isotropic Gaussian truncated to `size`x`size`.
    pub fn gaussian(size: usize, sigma: f64) -> Result<Self> {
        ensure!(sigma > 0.0, "sigma must be positive");
        let c = (size / 2) as f64;
        let k: Vec<f64> = (0..size * size)
            .map(|i| {
                let (y, x) = ((i / size) as f64 - c, (i % size) as f64 - c);
                (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        Self::from_mono(size, &k)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn kernels(&self) -> &[f64] {
        &self.kernels
    }

    pub fn kernel(&self, c: usize) -> &[f64] {
        let plane = self.size * self.size;
        &self.kernels[c * plane..(c + 1) * plane]
    }

    /// Channel-mean kernel.
    pub fn luminance(&self) -> Vec<f64> {
        let plane = self.size * self.size;
        (0..plane)
            .map(|i| {
                (0..CHANNELS)
                    .map(|c| self.kernels[c * plane + i])
                    .sum::<f64>()
                    / CHANNELS as f64
            })
            .collect()
    }

    /// Keep the central `size`x`size` window and renormalize.
    pub fn center_crop(&self, size: usize) -> Result<Self> {
        ensure!(
            size % 2 == 1 && size <= self.size,
            "crop size {size} must be odd and <= {}",
            self.size
        );
        let off = (self.size - size) / 2;
        let mut out = Vec::with_capacity(3 * size * size);
        for c in 0..CHANNELS {
            let k = self.kernel(c);
            for y in 0..size {
                out.extend_from_slice(&k[(y + off) * self.size + off..][..size]);
            }
        }
        let mut psf = Self::from_unnormalized(size, out, self.angle_deg)?;
        psf.channel_gains = self.channel_gains;
        Ok(psf)
    }

    /// View as an RGB image (for PFM output).
    pub fn to_image(&self) -> Image {
        Image::from_planar(self.size, self.size, self.kernels.clone()).expect("layout checked")
    }

    /// Read kernels from an RGB image; normalizes each channel.
    pub fn from_image(img: &Image) -> Result<Self> {
        ensure!(
            img.width() == img.height(),
            "PSF image must be square, got {}x{}",
            img.width(),
            img.height()
        );
        Self::from_unnormalized(img.width(), img.data().to_vec(), 0.0)
    }
}

fn check_layout(size: usize, len: usize) -> Result<()> {
    if size % 2 == 0 {
        return Err(Error::Shape(format!("PSF side must be odd, got {size}")));
    }
    if len != CHANNELS * size * size {
        return Err(Error::Shape(format!(
            "PSF needs {} samples, got {len}",
            CHANNELS * size * size
        )));
    }
    Ok(())
}

/// Rotate every channel by `angle_deg` about the kernel center using
/// bilinear resampling (zero outside the support), then renormalize.
pub fn rotate_psf(psf: &PsfStack, angle_deg: f64) -> Result<PsfStack> {
    ensure!(
        angle_deg.is_finite() && angle_deg.abs() <= 45.0,
        "rotation angle must lie in [-45, 45] degrees, got {angle_deg}"
    );
    if angle_deg == 0.0 {
        return Ok(psf.clone());
    }
    let n = psf.size;
    let c = (n - 1) as f64 / 2.0;
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let mut out = vec![0.0; psf.kernels.len()];
    for ch in 0..CHANNELS {
        let src = psf.kernel(ch);
        let dst = &mut out[ch * n * n..(ch + 1) * n * n];
        for y in 0..n {
            for x in 0..n {
                let dx = x as f64 - c;
                let dy = y as f64 - c;
                // inverse mapping: sample the source at R(-angle) * (dx, dy)
                let sx = c + cos * dx + sin * dy;
                let sy = c - sin * dx + cos * dy;
                dst[y * n + x] = bilinear(src, n, sx, sy).max(0.0);
            }
        }
    }
    let mut rotated = PsfStack::from_unnormalized(n, out, psf.angle_deg + angle_deg)?;
    rotated.channel_gains = psf.channel_gains;
    Ok(rotated)
}

fn bilinear(src: &[f64], n: usize, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let sample = |xi: i64, yi: i64| -> f64 {
        if xi < 0 || yi < 0 || xi >= n as i64 || yi >= n as i64 {
            0.0
        } else {
            src[yi as usize * n + xi as usize]
        }
    };
    let (xi, yi) = (x0 as i64, y0 as i64);
    (1.0 - fy) * ((1.0 - fx) * sample(xi, yi) + fx * sample(xi + 1, yi))
        + fy * ((1.0 - fx) * sample(xi, yi + 1) + fx * sample(xi + 1, yi + 1))
}

/// Exposure times used for PSF capture, relative to the longest.
pub const PSF_EXPOSURE_RATIOS: [f64; 3] = [1.0, 1.0 / 32.0, 1.0 / 768.0];

/// Default saturation threshold as a fraction of the capture's full scale.
pub const DEFAULT_SATURATION: f64 = 0.95;

/// Fuse bracketed captures of a point source into one HDR PSF.
///
/// Each capture is brought to a common radiance scale by dividing by its
/// exposure time. Per sample, unsaturated values (raw `< sat_level`) are
/// averaged; samples saturated in every capture fall back to the shortest
/// exposure.
pub fn fuse_psf_exposures(
    captures: &[Image],
    exposure_times: &[f64],
    sat_level: f64,
) -> Result<PsfStack> {
    ensure!(!captures.is_empty(), "at least one capture is required");
    ensure!(
        captures.len() == exposure_times.len(),
        "{} captures but {} exposure times",
        captures.len(),
        exposure_times.len()
    );
    ensure!(
        exposure_times.iter().all(|&t| t > 0.0 && t.is_finite()),
        "exposure times must be positive"
    );
    ensure!(sat_level > 0.0, "saturation level must be positive");
    let first = &captures[0];
    for c in &captures[1..] {
        first.check_same_shape(c)?;
    }
    let shortest = exposure_times
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();

    let len = first.data().len();
    let mut fused = vec![0.0; len];
    for (i, out) in fused.iter_mut().enumerate() {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (cap, &t) in captures.iter().zip(exposure_times) {
            let raw = cap.data()[i];
            if raw < sat_level {
                sum += raw / t;
                count += 1;
            }
        }
        *out = if count > 0 {
            sum / count as f64
        } else {
            captures[shortest].data()[i] / exposure_times[shortest]
        };
    }
    let img = Image::from_planar(first.width(), first.height(), fused)?;
    PsfStack::from_image(&img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l1(a: &PsfStack, b: &PsfStack) -> f64 {
        a.kernels()
            .iter()
            .zip(b.kernels())
            .map(|(x, y)| (x - y).abs())
            .sum()
    }

    #[test]
    fn validation() {
        assert!(PsfStack::delta(4).is_err());
        let d = PsfStack::delta(5).unwrap();
        assert_eq!(d.kernel(1)[12], 1.0);
        assert!(PsfStack::new(1, vec![0.5, 0.5, 0.5], 0.0, [1.0; 3]).is_err());
        assert!(PsfStack::new(1, vec![1.0, -1.0, 1.0], 0.0, [1.0; 3]).is_err());
        assert!(PsfStack::new(1, vec![1.0, 1.0, 1.0], 0.0, [1.0; 3]).is_ok());
    }

    #[test]
    fn rotation_zero_is_identity() {
        let g = PsfStack::gaussian(15, 2.0).unwrap();
        let r = rotate_psf(&g, 0.0).unwrap();
        assert!(l1(&g, &r) < 1e-7);
        assert!(rotate_psf(&g, 46.0).is_err());
        assert!(rotate_psf(&g, -45.5).is_err());
    }

    #[test]
    fn rotation_of_symmetric_kernel() {
        let g = PsfStack::gaussian(41, 5.0).unwrap();
        let r = rotate_psf(&g, 12.0).unwrap();
        let max_diff = g
            .kernels()
            .iter()
            .zip(r.kernels())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-4, "{max_diff}");
        assert_eq!(r.angle_deg, 12.0);
    }

    #[test]
    fn rotation_round_trip() {
        // anisotropic, off-center blob with a dimmer satellite; bilinear
        // resampling blurs by up to a quarter pixel variance per pass, so the
        // blob must be a few pixels wide for the round trip to stay within 1e-2
        let n = 45;
        let k: Vec<f64> = (0..n * n)
            .map(|i| {
                let (y, x) = ((i / n) as f64 - 22.0, (i % n) as f64 - 22.0);
                (-(x * x / 100.0 + y * y / 40.0)).exp()
                    + 0.2 * (-((x - 6.0).powi(2) + (y + 3.0).powi(2)) / 36.0).exp()
            })
            .collect();
        let psf = PsfStack::from_mono(n, &k).unwrap();
        for angle in [3.0, -9.0, 12.0] {
            let rt = rotate_psf(&rotate_psf(&psf, angle).unwrap(), -angle).unwrap();
            let err = l1(&psf, &rt) / 3.0;
            assert!(err < 1e-2, "angle {angle}: {err}");
            assert!(rt.kernels().iter().all(|&v| v >= 0.0));
            for c in 0..3 {
                assert!((rt.kernel(c).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fusion_single_capture() {
        let img = Image::from_planar(3, 3, (0..27).map(|i| i as f64 * 0.01).collect()).unwrap();
        let psf = fuse_psf_exposures(std::slice::from_ref(&img), &[1.0], 0.95).unwrap();
        let expected = PsfStack::from_image(&img).unwrap();
        assert!(l1(&psf, &expected) < 1e-15);
    }

    #[test]
    fn fusion_selection_rule() {
        // pixel 0 saturated at t=1 but not at t=1/32
        let mut long = Image::filled(3, 3, 0.1);
        let mut short = Image::filled(3, 3, 0.1 / 32.0);
        long.data_mut()[0] = 1.0;
        short.data_mut()[0] = 0.5;
        let psf = fuse_psf_exposures(&[long, short], &[1.0, 1.0 / 32.0], 0.95).unwrap();
        // radiance 16 at pixel 0 vs 0.1 elsewhere (eight others)
        let total = 16.0 + 8.0 * 0.1;
        assert!((psf.kernel(0)[0] - 16.0 / total).abs() < 1e-12);
        assert!((psf.kernel(0)[1] - 0.1 / total).abs() < 1e-12);
    }

    #[test]
    fn fusion_all_saturated_uses_shortest() {
        let a = Image::filled(1, 1, 1.0);
        let b = Image::filled(1, 1, 1.0);
        let psf = fuse_psf_exposures(&[a, b], &[1.0, 0.5], 0.95).unwrap();
        assert_eq!(psf.kernel(0)[0], 1.0);
    }

    #[test]
    fn fusion_rejects_bad_lists() {
        let a = Image::filled(3, 3, 0.1);
        assert!(fuse_psf_exposures(&[a.clone(), a.clone()], &[1.0], 0.95).is_err());
        assert!(fuse_psf_exposures(&[a.clone()], &[0.0], 0.95).is_err());
        assert!(fuse_psf_exposures(&[a, Image::filled(5, 5, 0.1)], &[1.0, 0.5], 0.95).is_err());
    }
}
