//! PSNR and SSIM with a boundary trim.
//!
//! A 2-pixel ring is excluded from both metrics by default: the causal model
//! has no context at the top-left border, so border pixels are discounted
//! when comparing reconstructions.

use crate::error::{Error, Result};
use crate::grid::Grid2D;

#[derive(Debug, Clone)]
pub struct MetricConfig {
    /// Pixels stripped from every side before comparing.
    pub trim: usize,
    /// Dynamic range L of the intensities.
    pub dynamic_range: f64,
    /// SSIM window side length.
    pub ssim_window: usize,
    /// Gaussian sigma of the SSIM window.
    pub ssim_sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            trim: 2,
            dynamic_range: 1.0,
            ssim_window: 11,
            ssim_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

fn trimmed_shape(a: &Grid2D, b: &Grid2D, cfg: &MetricConfig, context: &str) -> Result<(usize, usize)> {
    if !a.same_shape(b) {
        return Err(Error::shape(
            context,
            format!("{}x{}", a.rows(), a.cols()),
            format!("{}x{}", b.rows(), b.cols()),
        ));
    }
    let t = 2 * cfg.trim;
    if a.rows() <= t || a.cols() <= t {
        return Err(Error::InvalidArg(format!(
            "{context}: image {}x{} is empty after trimming {} pixels per side",
            a.rows(),
            a.cols(),
            cfg.trim
        )));
    }
    Ok((a.rows() - t, a.cols() - t))
}

/// Peak signal-to-noise ratio in dB over the trimmed interior. Identical
/// images report `f64::INFINITY` (rendered as "inf" in CSV output).
pub fn psnr(a: &Grid2D, b: &Grid2D, cfg: &MetricConfig) -> Result<f64> {
    let (rows, cols) = trimmed_shape(a, b, cfg, "psnr")?;
    let mut se = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            let d = a.get(r + cfg.trim, c + cfg.trim) - b.get(r + cfg.trim, c + cfg.trim);
            se += d * d;
        }
    }
    let mse = se / (rows * cols) as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (cfg.dynamic_range * cfg.dynamic_range / mse).log10())
}

/// Mean local SSIM over the trimmed interior, Gaussian-weighted windows.
pub fn ssim(a: &Grid2D, b: &Grid2D, cfg: &MetricConfig) -> Result<f64> {
    let (rows, cols) = trimmed_shape(a, b, cfg, "ssim")?;
    let win = cfg.ssim_window;
    if rows < win || cols < win {
        return Err(Error::InvalidArg(format!(
            "ssim: trimmed interior {rows}x{cols} is smaller than the {win}x{win} window"
        )));
    }
    let weights = gaussian_window(win, cfg.ssim_sigma);
    let c1 = (cfg.k1 * cfg.dynamic_range).powi(2);
    let c2 = (cfg.k2 * cfg.dynamic_range).powi(2);

    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=(rows - win) {
        for c0 in 0..=(cols - win) {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            for wr in 0..win {
                for wc in 0..win {
                    let w = weights[wr * win + wc];
                    mu_a += w * a.get(cfg.trim + r0 + wr, cfg.trim + c0 + wc);
                    mu_b += w * b.get(cfg.trim + r0 + wr, cfg.trim + c0 + wc);
                }
            }
            let mut var_a = 0.0;
            let mut var_b = 0.0;
            let mut cov = 0.0;
            for wr in 0..win {
                for wc in 0..win {
                    let w = weights[wr * win + wc];
                    let da = a.get(cfg.trim + r0 + wr, cfg.trim + c0 + wc) - mu_a;
                    let db = b.get(cfg.trim + r0 + wr, cfg.trim + c0 + wc) - mu_b;
                    var_a += w * da * da;
                    var_b += w * db * db;
                    cov += w * da * db;
                }
            }
            let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn gaussian_window(win: usize, sigma: f64) -> Vec<f64> {
    let center = (win as f64 - 1.0) / 2.0;
    let mut w = vec![0.0; win * win];
    let mut sum = 0.0;
    for r in 0..win {
        for c in 0..win {
            let dr = r as f64 - center;
            let dc = c as f64 - center;
            let v = (-(dr * dr + dc * dc) / (2.0 * sigma * sigma)).exp();
            w[r * win + c] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn noisy(rows: usize, cols: usize, seed: u64) -> Grid2D {
        let mut rng = SeededRng::new(seed);
        Grid2D::from_vec(rows, cols, (0..rows * cols).map(|_| rng.next_uniform()).collect()).unwrap()
    }

    #[test]
    fn identical_images_are_infinite_psnr_and_unit_ssim() {
        let a = noisy(16, 16, 1);
        let cfg = MetricConfig::default();
        assert!(psnr(&a, &a, &cfg).unwrap().is_infinite());
        assert!((ssim(&a, &a, &cfg).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_offset_has_closed_form_psnr() {
        let a = Grid2D::filled(10, 10, 0.4);
        let b = Grid2D::filled(10, 10, 0.5);
        let got = psnr(&a, &b, &MetricConfig::default()).unwrap();
        // MSE = 0.01 exactly, so 10*log10(1/0.01) = 20 dB.
        assert!((got - 20.0).abs() < 1e-12, "{got}");
    }

    #[test]
    fn trim_ignores_the_outer_ring() {
        let a = noisy(16, 16, 2);
        let mut b = a.clone();
        for r in 0..16 {
            for c in 0..16 {
                if r < 2 || c < 2 || r >= 14 || c >= 14 {
                    b.set(r, c, 1.0 - b.get(r, c));
                }
            }
        }
        let cfg = MetricConfig::default();
        assert!(psnr(&a, &b, &cfg).unwrap().is_infinite());
        assert!((ssim(&a, &b, &cfg).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_symmetric_and_monotone() {
        let a = noisy(12, 12, 3);
        let cfg = MetricConfig::default();
        let small = a.map(|v| v + 0.01);
        let large = a.map(|v| v + 0.05);
        assert_eq!(psnr(&a, &small, &cfg).unwrap(), psnr(&small, &a, &cfg).unwrap());
        assert!(psnr(&a, &small, &cfg).unwrap() > psnr(&a, &large, &cfg).unwrap());
    }

    #[test]
    fn inverted_checkerboard_has_negative_ssim() {
        let mut a = Grid2D::zeros(16, 16);
        for r in 0..16 {
            for c in 0..16 {
                a.set(r, c, ((r + c) % 2) as f64);
            }
        }
        let b = a.map(|v| 1.0 - v);
        let cfg = MetricConfig::default();
        let s = ssim(&a, &b, &cfg).unwrap();
        assert!(s < 0.0, "ssim {s}");
        assert!(s >= -1.0 - 1e-12);
    }

    #[test]
    fn constant_images_reduce_to_luminance_term() {
        let a = Grid2D::filled(16, 16, 0.3);
        let b = Grid2D::filled(16, 16, 0.4);
        let cfg = MetricConfig::default();
        let c1 = (cfg.k1 * cfg.dynamic_range).powi(2);
        let want = (2.0 * 0.3 * 0.4 + c1) / (0.3f64.powi(2) + 0.4f64.powi(2) + c1);
        let got = ssim(&a, &b, &cfg).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn shape_and_size_errors() {
        let cfg = MetricConfig::default();
        let a = noisy(8, 8, 4);
        let b = noisy(8, 9, 5);
        assert!(psnr(&a, &b, &cfg).is_err());
        // 8x8 leaves a 4x4 interior: fine for PSNR, too small for SSIM.
        let b8 = noisy(8, 8, 6);
        assert!(psnr(&a, &b8, &cfg).is_ok());
        assert!(ssim(&a, &b8, &cfg).is_err());
        let tiny = noisy(4, 4, 7);
        assert!(psnr(&tiny, &tiny, &cfg).is_err());
    }
}
