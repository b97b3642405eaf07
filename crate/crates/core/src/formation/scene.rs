//! Synthetic HDR scenes: a smooth low-dynamic-range base with a few small,
//! very bright discs standing in for light sources.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{Image, CHANNELS};

/// Generate a `width`x`height` scene. The base lies in `[0, 1]`; each of the
/// `n_highlights` discs has a radiance drawn log-uniformly from
/// `[peak / 10, peak]`. Discs do not touch each other.
pub fn gen_synthetic_scene(
    width: usize,
    height: usize,
    n_highlights: usize,
    peak: f64,
    seed: u64,
) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::zeros(width, height);

    for c in 0..CHANNELS {
        let waves: Vec<(f64, f64, f64, f64)> = (0..4)
            .map(|_| {
                (
                    rng.random_range(0.2..1.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(0.0..2.0 * PI),
                )
            })
            .collect();
        let lo = rng.random_range(0.0..0.2);
        let hi = rng.random_range(0.6..1.0);
        let plane = img.channel_mut(c);
        for y in 0..height {
            for x in 0..width {
                let u = x as f64 / width.max(1) as f64;
                let v = y as f64 / height.max(1) as f64;
                plane[y * width + x] = waves
                    .iter()
                    .map(|&(a, fx, fy, ph)| a * (2.0 * PI * (fx * u + fy * v) + ph).cos())
                    .sum();
            }
        }
        let (mn, mx) = plane
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        let span = (mx - mn).max(1e-12);
        for v in plane.iter_mut() {
            *v = lo + (hi - lo) * (*v - mn) / span;
        }
    }

    let mut discs: Vec<(f64, f64, f64)> = Vec::new();
    for _ in 0..n_highlights {
        let r = rng.random_range(1.5..3.5);
        let margin = r + 1.0;
        if width as f64 <= 2.0 * margin || height as f64 <= 2.0 * margin {
            break;
        }
        let mut placed = None;
        for _attempt in 0..1000 {
            let cx = rng.random_range(margin..width as f64 - margin);
            let cy = rng.random_range(margin..height as f64 - margin);
            let clear = discs
                .iter()
                .all(|&(ox, oy, or)| ((cx - ox).powi(2) + (cy - oy).powi(2)).sqrt() > r + or + 2.0);
            if clear {
                placed = Some((cx, cy));
                break;
            }
        }
        let Some((cx, cy)) = placed else { break };
        let value = (peak / 10.0) * 10f64.powf(rng.random_range(0.0..1.0));
        discs.push((cx, cy, r));
        for y in 0..height {
            for x in 0..width {
                if (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r {
                    for c in 0..CHANNELS {
                        img.set(c, y, x, value);
                    }
                }
            }
        }
    }
    img
}

/// Number of 4-connected regions whose per-pixel channel maximum exceeds
/// `threshold`.
pub fn count_regions_above(img: &Image, threshold: f64) -> usize {
    let (w, h) = (img.width(), img.height());
    let hot: Vec<bool> = (0..w * h)
        .map(|i| (0..CHANNELS).any(|c| img.channel(c)[i] > threshold))
        .collect();
    let mut seen = vec![false; w * h];
    let mut regions = 0;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !hot[start] || seen[start] {
            continue;
        }
        regions += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if hot[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
    }
    regions
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_highlights_stays_ldr() {
        let s = gen_synthetic_scene(64, 48, 0, 5000.0, 1);
        assert!(s.max_value() <= 1.0);
        assert!(s.min_value() >= 0.0);
    }

    #[test]
    fn highlight_regions_are_counted() {
        for seed in 0..10 {
            let s = gen_synthetic_scene(64, 64, 3, 5000.0, seed);
            assert_eq!(count_regions_above(&s, 500.0), 3, "seed {seed}");
            assert!(s.max_value() <= 5000.0);
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(
            gen_synthetic_scene(32, 32, 2, 100.0, 7),
            gen_synthetic_scene(32, 32, 2, 100.0, 7)
        );
        assert_ne!(
            gen_synthetic_scene(32, 32, 2, 100.0, 7),
            gen_synthetic_scene(32, 32, 2, 100.0, 8)
        );
    }
}
