//! Two-dimensional FFT helpers on row-major complex grids.

use rustfft::num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

/// In-place 2-D FFT of a `rows`x`cols` row-major grid. The inverse is
/// unnormalized; callers divide by `rows * cols`.
pub fn fft2_in_place(data: &mut [Complex64], rows: usize, cols: usize, direction: FftDirection) {
    assert_eq!(data.len(), rows * cols);
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft(cols, direction);
    let col_fft = planner.plan_fft(rows, direction);

    let mut scratch = vec![
        Complex64::default();
        row_fft
            .get_inplace_scratch_len()
            .max(col_fft.get_inplace_scratch_len())
    ];
    for row in data.chunks_exact_mut(cols) {
        row_fft.process_with_scratch(row, &mut scratch);
    }

    let mut column = vec![Complex64::default(); rows];
    for c in 0..cols {
        for r in 0..rows {
            column[r] = data[r * cols + c];
        }
        col_fft.process_with_scratch(&mut column, &mut scratch);
        for r in 0..rows {
            data[r * cols + c] = column[r];
        }
    }
}

pub fn fft2(data: &mut [Complex64], rows: usize, cols: usize) {
    fft2_in_place(data, rows, cols, FftDirection::Forward);
}

/// Normalized inverse 2-D FFT.
pub fn ifft2(data: &mut [Complex64], rows: usize, cols: usize) {
    fft2_in_place(data, rows, cols, FftDirection::Inverse);
    let scale = 1.0 / (rows * cols) as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
}

/// Signed frequency index of FFT bin `k` on an `n`-point grid.
#[inline]
pub fn signed_bin(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Smallest 5-smooth integer `>= n` (fast FFT length).
pub fn fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let (r, c) = (6, 10);
        let orig: Vec<Complex64> = (0..r * c)
            .map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos()))
            .collect();
        let mut d = orig.clone();
        fft2(&mut d, r, c);
        ifft2(&mut d, r, c);
        for (a, b) in d.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn fast_lengths() {
        assert_eq!(fast_len(1), 1);
        assert_eq!(fast_len(7), 8);
        assert_eq!(fast_len(13), 15);
        assert_eq!(fast_len(97), 100);
    }
}
