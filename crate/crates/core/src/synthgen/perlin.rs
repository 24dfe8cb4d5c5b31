//! Classic 2-D Perlin gradient noise.

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::synthgen::Image;

/// Quintic fade 6t^5 - 15t^4 + 10t^3.
#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Gradient noise over a (rows x cols) cell grid: unit gradients at random
/// angles on the (rows+1) x (cols+1) lattice, per-pixel dot products with
/// the offset vectors of the surrounding cell corners, quintic-fade
/// bilinear interpolation, then per-image min-max normalization to [0, 1].
/// A pixel landing exactly on a lattice node gets raw value 0.
///
/// Deterministic in `seed`; lattice angles are drawn row-major as
/// `2*pi*u` from a counter stream keyed by the seed.
pub fn perlin_field(seed: u64, grid: (usize, usize), shape: (usize, usize)) -> Result<Image> {
    let (rows, cols) = grid;
    let (height, width) = shape;
    if rows < 1 || cols < 1 {
        return Err(Error::Config(format!("perlin grid {rows}x{cols} must be >= 1x1")));
    }
    if height < 8 || width < 8 {
        return Err(Error::Config(format!("image shape {height}x{width} must be >= 8x8")));
    }

    let mut rng = CounterRng::new(seed);
    let lat_h = rows + 1;
    let lat_w = cols + 1;
    let mut gradients = Vec::with_capacity(lat_h * lat_w);
    for _ in 0..lat_h * lat_w {
        let angle = 2.0 * std::f64::consts::PI * rng.next_f64();
        gradients.push((angle.cos(), angle.sin()));
    }
    let grad = |i: usize, j: usize| gradients[i * lat_w + j];

    let mut raw = vec![0.0f64; height * width];
    let sy = rows as f64 / height as f64;
    let sx = cols as f64 / width as f64;
    for r in 0..height {
        let y = r as f64 * sy;
        let i0 = y.floor() as usize;
        let ty = y - i0 as f64;
        let v = fade(ty);
        for c in 0..width {
            let x = c as f64 * sx;
            let j0 = x.floor() as usize;
            let tx = x - j0 as f64;
            let u = fade(tx);

            let d00 = dot(grad(i0, j0), tx, ty);
            let d01 = dot(grad(i0, j0 + 1), tx - 1.0, ty);
            let d10 = dot(grad(i0 + 1, j0), tx, ty - 1.0);
            let d11 = dot(grad(i0 + 1, j0 + 1), tx - 1.0, ty - 1.0);

            let top = lerp(d00, d01, u);
            let bottom = lerp(d10, d11, u);
            raw[r * width + c] = lerp(top, bottom, v);
        }
    }

    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= min {
        return Err(Error::Numeric(format!("perlin field (seed {seed:#x}) is constant")));
    }
    let scale = 1.0 / (max - min);
    let pixels = raw.iter().map(|&v| ((v - min) * scale) as f32).collect();
    Image::new(height, width, pixels)
}

#[inline]
fn dot(g: (f64, f64), dx: f64, dy: f64) -> f64 {
    g.0 * dx + g.1 * dy
}

/// Raw (pre-normalization) field, exposed for tests.
#[cfg(test)]
pub(crate) fn perlin_raw(seed: u64, grid: (usize, usize), shape: (usize, usize)) -> Vec<f64> {
    let (rows, cols) = grid;
    let (height, width) = shape;
    let mut rng = CounterRng::new(seed);
    let lat_w = cols + 1;
    let mut gradients = Vec::new();
    for _ in 0..(rows + 1) * lat_w {
        let angle = 2.0 * std::f64::consts::PI * rng.next_f64();
        gradients.push((angle.cos(), angle.sin()));
    }
    let grad = |i: usize, j: usize| gradients[i * lat_w + j];
    let mut raw = vec![0.0f64; height * width];
    for r in 0..height {
        let y = r as f64 * rows as f64 / height as f64;
        let i0 = y.floor() as usize;
        let ty = y - i0 as f64;
        for c in 0..width {
            let x = c as f64 * cols as f64 / width as f64;
            let j0 = x.floor() as usize;
            let tx = x - j0 as f64;
            let d00 = dot(grad(i0, j0), tx, ty);
            let d01 = dot(grad(i0, j0 + 1), tx - 1.0, ty);
            let d10 = dot(grad(i0 + 1, j0), tx, ty - 1.0);
            let d11 = dot(grad(i0 + 1, j0 + 1), tx - 1.0, ty - 1.0);
            let top = lerp(d00, d01, fade(tx));
            let bottom = lerp(d10, d11, fade(tx));
            raw[r * width + c] = lerp(top, bottom, fade(ty));
        }
    }
    raw
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straight-line reference: same lattice draws, independent arithmetic
    /// (explicit corner loop instead of the nested-lerp formulation).
    fn reference_field(seed: u64, grid: (usize, usize), shape: (usize, usize)) -> Vec<f64> {
        let (rows, cols) = grid;
        let (height, width) = shape;
        let mut rng = CounterRng::new(seed);
        let mut angles = Vec::new();
        for _ in 0..(rows + 1) * (cols + 1) {
            angles.push(2.0 * std::f64::consts::PI * rng.next_f64());
        }
        let mut out = vec![0.0f64; height * width];
        for r in 0..height {
            for c in 0..width {
                let y = r as f64 * rows as f64 / height as f64;
                let x = c as f64 * cols as f64 / width as f64;
                let i0 = y.floor() as usize;
                let j0 = x.floor() as usize;
                // corner dot products, weighted by separable fade weights
                let mut value = 0.0;
                for di in 0..2usize {
                    for dj in 0..2usize {
                        let gi = i0 + di;
                        let gj = j0 + dj;
                        let a = angles[gi * (cols + 1) + gj];
                        let (gx, gy) = (a.cos(), a.sin());
                        let ox = x - gj as f64;
                        let oy = y - gi as f64;
                        let d = gx * ox + gy * oy;
                        let ty = y - i0 as f64;
                        let tx = x - j0 as f64;
                        let wy = if di == 0 { 1.0 - fade_ref(ty) } else { fade_ref(ty) };
                        let wx = if dj == 0 { 1.0 - fade_ref(tx) } else { fade_ref(tx) };
                        value += wx * wy * d;
                    }
                }
                out[r * width + c] = value;
            }
        }
        out
    }

    fn fade_ref(t: f64) -> f64 {
        6.0 * t.powi(5) - 15.0 * t.powi(4) + 10.0 * t.powi(3)
    }

    #[test]
    fn matches_reference_raster() {
        let raw = perlin_raw(7, (2, 2), (8, 8));
        let reference = reference_field(7, (2, 2), (8, 8));
        for (i, (a, b)) in raw.iter().zip(&reference).enumerate() {
            assert!((a - b).abs() < 1e-6, "pixel {i}: {a} vs {b}");
        }
    }

    #[test]
    fn lattice_nodes_are_zero() {
        // grid (2,2) on 8x8: cell size 4, so pixels at rows/cols {0, 4}
        // sit exactly on lattice nodes
        let raw = perlin_raw(123, (2, 2), (8, 8));
        for &r in &[0usize, 4] {
            for &c in &[0usize, 4] {
                assert!(
                    raw[r * 8 + c].abs() < 1e-12,
                    "node pixel ({r},{c}) = {}",
                    raw[r * 8 + c]
                );
            }
        }
    }

    #[test]
    fn normalized_to_unit_range() {
        for seed in [0u64, 7, 991] {
            let img = perlin_field(seed, (5, 8), (64, 64)).unwrap();
            let min = img.pixels().iter().copied().fold(f32::INFINITY, f32::min);
            let max = img.pixels().iter().copied().fold(f32::NEG_INFINITY, f32::max);
            assert_eq!(min, 0.0);
            assert_eq!(max, 1.0);
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = perlin_field(42, (5, 8), (32, 48)).unwrap();
        let b = perlin_field(42, (5, 8), (32, 48)).unwrap();
        assert_eq!(a, b);
        let c = perlin_field(43, (5, 8), (32, 48)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_configs_error() {
        assert!(perlin_field(1, (0, 2), (8, 8)).is_err());
        assert!(perlin_field(1, (2, 2), (4, 8)).is_err());
    }
}
