//! PCA kernel codes.
//!
//! PSFs are reduced to a luminance kernel, area-resampled to a fixed
//! `side`x`side` grid and flattened. A PCA basis fitted over a kernel set
//! maps each PSF to a short code vector; the code is then broadcast over the
//! image plane to form the network's degradation maps.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{ensure, Error, Result};
use crate::formation::PsfStack;

pub const DEFAULT_CODE_DIM: usize = 5;
pub const DEFAULT_SIDE: usize = 64;

/// Relative eigenvalue floor below which a direction counts as absent.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct KernelCode(pub Vec<f64>);

impl KernelCode {
    pub fn zeros(b: usize) -> Self {
        KernelCode(vec![0.0; b])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaBasis {
    pub side: usize,
    pub mean: Vec<f64>,
    /// `b` rows of length `side * side`, by decreasing variance.
    pub components: Vec<Vec<f64>>,
}

impl PcaBasis {
    pub fn new(side: usize, mean: Vec<f64>, components: Vec<Vec<f64>>) -> Result<Self> {
        ensure!(side > 0, "side must be positive");
        ensure!(!components.is_empty(), "basis needs at least one component");
        let d = side * side;
        if mean.len() != d || components.iter().any(|c| c.len() != d) {
            return Err(Error::Shape(format!("basis vectors must have length {d}")));
        }
        Ok(PcaBasis {
            side,
            mean,
            components,
        })
    }

    pub fn code_dim(&self) -> usize {
        self.components.len()
    }
}

/// Per-pixel degradation maps: the code repeated at every position,
/// stored planar as `[b][h][w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradationMaps {
    pub b: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl DegradationMaps {
    /// Code vector at pixel (`y`, `x`).
    pub fn at(&self, y: usize, x: usize) -> Vec<f64> {
        let plane = self.height * self.width;
        (0..self.b)
            .map(|i| self.data[i * plane + y * self.width + x])
            .collect()
    }
}

/// Resample a square `n`x`n` grid to `side`x`side` by area averaging.
pub fn area_resample(src: &[f64], n: usize, side: usize) -> Vec<f64> {
    let weights = overlap_weights(n, side);
    // rows first, then columns
    let mut tmp = vec![0.0; side * n];
    for (oy, wy) in weights.iter().enumerate() {
        for &(iy, w) in wy {
            for x in 0..n {
                tmp[oy * n + x] += w * src[iy * n + x];
            }
        }
    }
    let mut out = vec![0.0; side * side];
    for oy in 0..side {
        for (ox, wx) in weights.iter().enumerate() {
            out[oy * side + ox] = wx.iter().map(|&(ix, w)| w * tmp[oy * n + ix]).sum();
        }
    }
    out
}

/// For each output cell, the input cells it covers and the covered
/// fraction of the output cell (weights sum to one).
fn overlap_weights(n: usize, side: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n as f64 / side as f64;
    (0..side)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = lo + scale;
            let mut cells = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < n {
                let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    cells.push((i, overlap / scale));
                }
                i += 1;
            }
            cells
        })
        .collect()
}

/// Flattened, resampled luminance of a PSF.
pub fn flatten_kernel(psf: &PsfStack, side: usize) -> Vec<f64> {
    area_resample(&psf.luminance(), psf.size(), side)
}

/// Fit a `b`-component PCA basis over `kernels`.
///
/// Uses the Gram matrix of the centered samples (kernel count is small
/// compared to `side^2`). Directions with no variance are filled with zero
/// components and a warning is logged.
pub fn fit_pca(kernels: &[PsfStack], b: usize, side: usize) -> Result<PcaBasis> {
    ensure!(b >= 1, "code dimension must be at least 1");
    ensure!(side >= 1, "side must be at least 1");
    ensure!(
        kernels.len() > b,
        "need at least b+1 = {} kernels, got {}",
        b + 1,
        kernels.len()
    );
    let m = kernels.len();
    let d = side * side;
    let samples: Vec<Vec<f64>> = kernels.iter().map(|k| flatten_kernel(k, side)).collect();
    let mut mean = vec![0.0; d];
    for s in &samples {
        mean.iter_mut().zip(s).for_each(|(a, v)| *a += v / m as f64);
    }
    let centered = DMatrix::from_fn(m, d, |i, j| samples[i][j] - mean[j]);
    let gram = &centered * centered.transpose();
    let eig = SymmetricEigen::new(gram);

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let top = eig.eigenvalues[order[0]].max(0.0);

    let mut components = Vec::with_capacity(b);
    let mut missing = 0;
    for &idx in order.iter().take(b) {
        let lambda = eig.eigenvalues[idx];
        if lambda <= RANK_TOLERANCE * top.max(f64::MIN_POSITIVE) || lambda <= 0.0 {
            components.push(vec![0.0; d]);
            missing += 1;
            continue;
        }
        // u = X^T v / sqrt(lambda) has unit norm when v is a unit eigenvector of X X^T
        let v = eig.eigenvectors.column(idx);
        let u = centered.transpose() * v / lambda.sqrt();
        components.push(u.iter().copied().collect());
    }
    if missing > 0 {
        log::warn!(
            "kernel set spans only {} of {b} requested PCA directions; padding with zeros",
            b - missing
        );
    }
    PcaBasis::new(side, mean, components)
}

/// Project a flattened kernel onto the basis.
pub fn encode_flat(flat: &[f64], basis: &PcaBasis) -> Result<KernelCode> {
    if flat.len() != basis.mean.len() {
        return Err(Error::Shape(format!(
            "flattened kernel has {} samples, basis expects {}",
            flat.len(),
            basis.mean.len()
        )));
    }
    Ok(KernelCode(
        basis
            .components
            .iter()
            .map(|c| {
                c.iter()
                    .zip(flat)
                    .zip(&basis.mean)
                    .map(|((u, x), m)| u * (x - m))
                    .sum()
            })
            .collect(),
    ))
}

pub fn encode_kernel(psf: &PsfStack, basis: &PcaBasis) -> Result<KernelCode> {
    encode_flat(&flatten_kernel(psf, basis.side), basis)
}

/// `mean + sum_i code_i * component_i`.
pub fn decode_kernel(code: &KernelCode, basis: &PcaBasis) -> Result<Vec<f64>> {
    if code.dim() != basis.code_dim() {
        return Err(Error::Shape(format!(
            "code has {} entries, basis has {} components",
            code.dim(),
            basis.code_dim()
        )));
    }
    let mut out = basis.mean.clone();
    for (c, comp) in code.0.iter().zip(&basis.components) {
        out.iter_mut().zip(comp).for_each(|(o, u)| *o += c * u);
    }
    Ok(out)
}

pub fn stretch_code(code: &KernelCode, height: usize, width: usize) -> Result<DegradationMaps> {
    ensure!(
        height > 0 && width > 0,
        "map size must be positive, got {height}x{width}"
    );
    let plane = height * width;
    let mut data = Vec::with_capacity(code.dim() * plane);
    for &c in &code.0 {
        data.extend(std::iter::repeat_n(c, plane));
    }
    Ok(DegradationMaps {
        b: code.dim(),
        height,
        width,
        data,
    })
}
