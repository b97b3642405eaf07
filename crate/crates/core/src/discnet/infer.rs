//! Tiled inference on full-size images.

use crate::error::{ensure, Error, Result};
use crate::formation::PsfStack;
use crate::image::{Image, CHANNELS};
use crate::kernel_code::{encode_kernel, KernelCode, PcaBasis};

use super::graph::Graph;
use super::network::{forward, ForwardOptions, NetworkParams};
use super::tensor::Tensor;

/// Smallest accepted image side.
pub const MIN_SIDE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InferOptions {
    /// Tile side (rounded down to a multiple of 4).
    pub tile: usize,
    /// Overlap between neighbouring tiles, blended with linear ramps.
    pub overlap: usize,
}

impl Default for InferOptions {
    fn default() -> Self {
        InferOptions {
            tile: 128,
            overlap: 16,
        }
    }
}

/// Start offsets of tiles of length `tile` covering `len`.
fn tile_starts(len: usize, tile: usize, overlap: usize) -> Vec<usize> {
    if len <= tile {
        return vec![0];
    }
    let step = tile - overlap;
    let mut starts: Vec<usize> = (0..)
        .map(|i| i * step)
        .take_while(|&s| s + tile < len)
        .collect();
    starts.push(len - tile);
    starts
}

/// Blend weight at offset `i` within a tile of length `n`: a linear ramp
/// over `overlap + 1` samples at both ends, never zero.
fn ramp(i: usize, n: usize, overlap: usize) -> f64 {
    let r = (overlap + 1) as f64;
    let d = (i + 1).min(n - i) as f64;
    (d / r).min(1.0)
}

/// Edge-replicate `img` up to `w`x`h`.
fn pad_replicate(img: &Image, w: usize, h: usize) -> Image {
    let mut out = Image::zeros(w, h);
    for c in 0..CHANNELS {
        for y in 0..h {
            for x in 0..w {
                let v = img.get(c, y.min(img.height() - 1), x.min(img.width() - 1));
                out.set(c, y, x, v);
            }
        }
    }
    out
}

fn run_tile(params: &NetworkParams, tile: &Image, code: &KernelCode) -> Result<Vec<f32>> {
    let (w, h) = (tile.width(), tile.height());
    let b = code.dim();
    let x = Tensor::from_vec(
        [1, 3, h, w],
        tile.data().iter().map(|&v| v as f32).collect(),
    )?;
    let mut maps = Vec::with_capacity(b * w * h);
    for &c in code.as_slice() {
        maps.extend(std::iter::repeat_n(c as f32, w * h));
    }
    let maps = Tensor::from_vec([1, b, h, w], maps)?;
    let mut g = Graph::<f32>::new();
    let nodes = params.bind(&mut g, false);
    let xn = g.leaf(x, false);
    let mn = g.leaf(maps, false);
    let trace = forward(
        &mut g,
        &nodes,
        params.config(),
        xn,
        mn,
        ForwardOptions::default(),
    )?;
    Ok(g.value(trace.output).data().to_vec())
}

/// Restore `degraded` (tone-mapped) given the kernel code of its PSF. The
/// output is not clamped.
pub fn infer(
    params: &NetworkParams,
    degraded: &Image,
    code: &KernelCode,
    opts: &InferOptions,
) -> Result<Image> {
    let (w, h) = (degraded.width(), degraded.height());
    ensure!(
        w >= MIN_SIDE && h >= MIN_SIDE,
        "image {w}x{h} is smaller than the minimum {MIN_SIDE}x{MIN_SIDE}"
    );
    if code.dim() != params.config().code_dim {
        return Err(Error::Shape(format!(
            "kernel code has {} entries, network expects {}",
            code.dim(),
            params.config().code_dim
        )));
    }
    let tile = opts.tile / 4 * 4;
    ensure!(
        tile >= MIN_SIDE,
        "tile must be at least {MIN_SIDE}, got {}",
        opts.tile
    );
    ensure!(
        opts.overlap < tile / 2,
        "overlap {} too large for tile {tile}",
        opts.overlap
    );

    let (pw, ph) = (w.div_ceil(4) * 4, h.div_ceil(4) * 4);
    let padded = pad_replicate(degraded, pw, ph);
    let (tw, th) = (tile.min(pw), tile.min(ph));
    let mut acc = vec![0.0f64; CHANNELS * pw * ph];
    let mut wsum = vec![0.0f64; pw * ph];
    for &y0 in &tile_starts(ph, th, opts.overlap) {
        for &x0 in &tile_starts(pw, tw, opts.overlap) {
            let t = padded.crop(x0, y0, tw, th)?;
            let out = run_tile(params, &t, code)?;
            for y in 0..th {
                let wy = ramp(y, th, opts.overlap);
                for x in 0..tw {
                    let wt = wy * ramp(x, tw, opts.overlap);
                    let dst = (y0 + y) * pw + x0 + x;
                    wsum[dst] += wt;
                    for c in 0..CHANNELS {
                        acc[c * pw * ph + dst] += wt * out[(c * th + y) * tw + x] as f64;
                    }
                }
            }
        }
    }
    let mut result = Image::zeros(w, h);
    for c in 0..CHANNELS {
        for y in 0..h {
            for x in 0..w {
                let i = y * pw + x;
                result.set(c, y, x, acc[c * pw * ph + i] / wsum[i]);
            }
        }
    }
    Ok(result)
}

/// [`infer`] with the code computed from a PSF.
pub fn infer_with_psf(
    params: &NetworkParams,
    degraded: &Image,
    psf: &PsfStack,
    basis: &PcaBasis,
    opts: &InferOptions,
) -> Result<Image> {
    let code = encode_kernel(psf, basis)?;
    infer(params, degraded, &code, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discnet::{build_network, NetworkConfig};

    #[test]
    fn tiles_cover_the_range() {
        assert_eq!(tile_starts(100, 128, 16), vec![0]);
        assert_eq!(tile_starts(128, 128, 16), vec![0]);
        let s = tile_starts(300, 128, 16);
        assert_eq!(s, vec![0, 112, 172]);
        for w in s.windows(2) {
            assert!(w[1] - w[0] <= 112);
        }
    }

    #[test]
    fn ramp_is_positive() {
        for i in 0..40 {
            let r = ramp(i, 40, 16);
            assert!(r > 0.0 && r <= 1.0);
        }
        assert_eq!(ramp(20, 40, 16), 1.0);
    }

    fn cfg() -> NetworkConfig {
        NetworkConfig {
            base_channels: 2,
            code_dim: 2,
            filter_size: 3,
            ..NetworkConfig::default()
        }
    }

    #[test]
    fn single_tile_matches_direct_forward() {
        let p = build_network(&cfg(), 3).unwrap();
        let img = Image::from_planar(
            12,
            8,
            (0..3 * 96)
                .map(|i| ((i * 37) % 101) as f64 / 101.0)
                .collect(),
        )
        .unwrap();
        let code = KernelCode(vec![0.3, -0.1]);
        let out = infer(&p, &img, &code, &InferOptions::default()).unwrap();
        let direct = run_tile(&p, &img, &code).unwrap();
        for (a, b) in out.data().iter().zip(&direct) {
            assert!((a - *b as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn odd_sizes_and_tiling_keep_shape() {
        let p = build_network(&cfg(), 3).unwrap();
        let img = Image::filled(37, 29, 0.4);
        let opts = InferOptions {
            tile: 16,
            overlap: 4,
        };
        let out = infer(&p, &img, &KernelCode(vec![0.0, 0.0]), &opts).unwrap();
        assert_eq!((out.width(), out.height()), (37, 29));
        assert!(out.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_tiny_images_and_wrong_codes() {
        let p = build_network(&cfg(), 3).unwrap();
        let opts = InferOptions::default();
        assert!(infer(
            &p,
            &Image::filled(7, 20, 0.1),
            &KernelCode(vec![0.0; 2]),
            &opts
        )
        .is_err());
        assert!(infer(
            &p,
            &Image::filled(8, 8, 0.1),
            &KernelCode(vec![0.0; 3]),
            &opts
        )
        .is_err());
    }
}
