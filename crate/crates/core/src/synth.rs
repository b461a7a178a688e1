//! Seeded synthetic textures: separable causal auto-regressive Gaussian
//! fields, handy for smoke-testing training and recovery without a dataset.

use crate::grid::Grid2D;
use crate::rng::SeededRng;

/// Stationary AR(1)xAR(1) field mapped into [0,1].
///
/// The latent field follows
/// `f[i,j] = rho_v f[i-1,j] + rho_h f[i,j-1] - rho_v rho_h f[i-1,j-1] + e[i,j]`
/// with the innovation variance chosen so the marginal variance is 1; the
/// output is `0.5 + contrast * f`, clamped to [0,1].
pub fn gaussian_mrf(
    rows: usize,
    cols: usize,
    rho_h: f64,
    rho_v: f64,
    contrast: f64,
    seed: u64,
) -> Grid2D {
    assert!(rho_h.abs() < 1.0 && rho_v.abs() < 1.0);
    let mut rng = SeededRng::new(seed);
    let e_std = ((1.0 - rho_h * rho_h) * (1.0 - rho_v * rho_v)).sqrt();
    let mut f = Grid2D::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let left = if c > 0 { f.get(r, c - 1) } else { 0.0 };
            let top = if r > 0 { f.get(r - 1, c) } else { 0.0 };
            let diag = if r > 0 && c > 0 { f.get(r - 1, c - 1) } else { 0.0 };
            let v = rho_h * left + rho_v * top - rho_h * rho_v * diag + e_std * rng.next_gaussian();
            f.set(r, c, v);
        }
    }
    f.map(|v| (0.5 + contrast * v).clamp(0.0, 1.0))
}

/// A small corpus of textures with shared statistics and per-image seeds.
pub fn texture_corpus(count: usize, rows: usize, cols: usize, seed: u64) -> Vec<Grid2D> {
    (0..count)
        .map(|k| gaussian_mrf(rows, cols, 0.8, 0.8, 0.18, seed.wrapping_add(k as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_is_seeded_and_in_range() {
        let a = gaussian_mrf(24, 24, 0.8, 0.8, 0.18, 7);
        let b = gaussian_mrf(24, 24, 0.8, 0.8, 0.18, 7);
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        // Should actually be textured, not constant.
        let mean = a.data().iter().sum::<f64>() / a.len() as f64;
        let var = a.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / a.len() as f64;
        assert!(var > 1e-3, "variance {var}");
    }

    #[test]
    fn neighboring_pixels_are_correlated() {
        let g = gaussian_mrf(64, 64, 0.9, 0.9, 0.15, 11);
        let mut num = 0.0;
        let mut den = 0.0;
        let mean = g.data().iter().sum::<f64>() / g.len() as f64;
        for r in 0..64 {
            for c in 1..64 {
                num += (g.get(r, c) - mean) * (g.get(r, c - 1) - mean);
            }
        }
        for v in g.data() {
            den += (v - mean) * (v - mean);
        }
        let corr = num / den;
        assert!(corr > 0.6, "horizontal correlation {corr}");
    }
}
