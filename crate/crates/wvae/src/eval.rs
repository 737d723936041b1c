//! Reconstruction and structure metrics, sparsity statistics and a
//! high-frequency energy diagnostic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image2D;
use crate::wavelet::{dwt2d_multi, WaveletPyramid2D};

/// SSIM window side; uniform weights, stride 1.
pub const SSIM_WINDOW: usize = 8;
/// Stabilizers from the usual (0.01, 0.03) constants at dynamic range 1.
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
/// Predictions are clamped into [BCE_EPS, 1 - BCE_EPS] before the log.
pub const BCE_EPS: f64 = 1e-7;

fn check_same_shape(x: &Image2D, y: &Image2D) -> Result<()> {
    if !x.same_shape(y) {
        return Err(Error::Shape(format!(
            "image shapes differ: {}x{}x{} vs {}x{}x{}",
            x.height(),
            x.width(),
            x.channels(),
            y.height(),
            y.width(),
            y.channels()
        )));
    }
    Ok(())
}

/// Mean squared error over all pixel-channel pairs.
pub fn mse(x: &Image2D, y: &Image2D) -> Result<f64> {
    check_same_shape(x, y)?;
    let sum: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / x.len() as f64)
}

/// Mean binary cross-entropy of predictions `y` against targets `x` in
/// [0, 1]; `y` is clamped away from {0, 1} so the result stays finite.
pub fn bce(x: &Image2D, y: &Image2D) -> Result<f64> {
    check_same_shape(x, y)?;
    let sum: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&t, &p)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / x.len() as f64)
}

/// Mean local SSIM over 8x8 uniform windows with stride 1. Multi-channel
/// images are converted to grayscale by unweighted channel mean first.
pub fn ssim(x: &Image2D, y: &Image2D) -> Result<f64> {
    check_same_shape(x, y)?;
    let (h, w) = (x.height(), x.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let gx = x.to_grayscale();
    let gy = y.to_grayscale();
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for y0 in 0..=h - SSIM_WINDOW {
        for x0 in 0..=w - SSIM_WINDOW {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..SSIM_WINDOW {
                let base = (y0 + dy) * w + x0;
                for dx in 0..SSIM_WINDOW {
                    let a = gx[base + dx];
                    let b = gy[base + dx];
                    sx += a;
                    sy += b;
                    sxx += a * a;
                    syy += b * b;
                    sxy += a * b;
                }
            }
            let mx = sx / n;
            let my = sy / n;
            let vx = sxx / n - mx * mx;
            let vy = syy / n - my * my;
            let cov = sxy / n - mx * my;
            total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

/// Mean absolute detail coefficient and the fraction of detail coefficients
/// with magnitude below `threshold`.
pub fn sparsity_stats(p: &WaveletPyramid2D, threshold: f64) -> Result<(f64, f64)> {
    if threshold <= 0.0 {
        return Err(Error::Domain(format!(
            "near-zero threshold must be positive, got {threshold}"
        )));
    }
    let mut sum_abs = 0.0;
    let mut near_zero = 0usize;
    let mut count = 0usize;
    for bands in &p.details {
        for band in [&bands.hl, &bands.lh, &bands.hh] {
            for &v in band.data() {
                sum_abs += v.abs();
                if v.abs() < threshold {
                    near_zero += 1;
                }
                count += 1;
            }
        }
    }
    Ok((sum_abs / count as f64, near_zero as f64 / count as f64))
}

/// Fraction of the image's coefficient energy held by the detail bands of
/// its `levels`-deep decomposition. Zero for constant images; always in
/// [0, 1].
pub fn hf_energy_ratio(img: &Image2D, levels: usize) -> Result<f64> {
    let p = dwt2d_multi(img, levels)?;
    let approx_energy: f64 = p.approx.data().iter().map(|v| v * v).sum();
    let mut detail_energy = 0.0;
    for bands in &p.details {
        for band in [&bands.hl, &bands.lh, &bands.hh] {
            detail_energy += band.data().iter().map(|v| v * v).sum::<f64>();
        }
    }
    let total = approx_energy + detail_energy;
    if total == 0.0 {
        return Ok(0.0);
    }
    Ok(detail_energy / total)
}

/// One evaluation's metric set; serialized as a single JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bce: Option<f64>,
    pub ssim: f64,
    pub detail_l1_mean: f64,
    pub detail_near_zero_fraction: f64,
    pub hf_energy_ratio: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Image2D {
        let data = (0..h * w * c).map(|_| rng.random_range(0.0..1.0)).collect();
        Image2D::from_vec(h, w, c, data).unwrap()
    }

    fn checkerboard(h: usize, w: usize) -> Image2D {
        let mut img = Image2D::zeros(h, w, 1);
        for y in 0..h {
            for x in 0..w {
                img.set(0, y, x, ((x + y) % 2) as f64);
            }
        }
        img
    }

    #[test]
    fn mse_cases() {
        let x = Image2D::from_vec(1, 2, 1, vec![0.0, 1.0]).unwrap();
        let y = Image2D::from_vec(1, 2, 1, vec![1.0, 1.0]).unwrap();
        assert_eq!(mse(&x, &x).unwrap(), 0.0);
        assert!((mse(&x, &y).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(mse(&x, &y).unwrap(), mse(&y, &x).unwrap());
        let z = Image2D::zeros(2, 2, 1);
        assert!(matches!(mse(&x, &z), Err(Error::Shape(_))));
    }

    #[test]
    fn mse_bce_match_reordered_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_image(&mut rng, 6, 5, 3);
        let y = random_image(&mut rng, 6, 5, 3);
        // Same sums accumulated per-pixel-then-channel instead of flat.
        let mut se = 0.0;
        let mut ce = 0.0;
        for yy in 0..6 {
            for xx in 0..5 {
                for c in 0..3 {
                    let a = x.get(c, yy, xx);
                    let b = y.get(c, yy, xx);
                    se += (a - b) * (a - b);
                    let p = b.clamp(BCE_EPS, 1.0 - BCE_EPS);
                    ce += -(a * p.ln() + (1.0 - a) * (1.0 - p).ln());
                }
            }
        }
        assert!((mse(&x, &y).unwrap() - se / 90.0).abs() <= 1e-12);
        assert!((bce(&x, &y).unwrap() - ce / 90.0).abs() <= 1e-12);
    }

    #[test]
    fn bce_cases() {
        let half = Image2D::from_vec(1, 1, 1, vec![0.5]).unwrap();
        assert!((bce(&half, &half).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let ones = Image2D::from_vec(1, 1, 1, vec![1.0]).unwrap();
        let v = bce(&ones, &ones).unwrap();
        assert!((0.0..1e-6).contains(&v));
        let zeros = Image2D::from_vec(1, 1, 1, vec![0.0]).unwrap();
        assert!(bce(&ones, &zeros).unwrap().is_finite());
        assert!(bce(&zeros, &ones).unwrap().is_finite());
    }

    #[test]
    fn ssim_self_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_image(&mut rng, 12, 12, 3);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_symmetry_and_window_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_image(&mut rng, 10, 10, 1);
        let y = random_image(&mut rng, 10, 10, 1);
        assert!((ssim(&x, &y).unwrap() - ssim(&y, &x).unwrap()).abs() < 1e-12);
        let small = Image2D::zeros(4, 4, 1);
        assert!(matches!(ssim(&small, &small), Err(Error::Shape(_))));
    }

    // Direct windowed evaluation with its own running sums, kept separate
    // from the implementation above.
    fn ssim_brute(x: &Image2D, y: &Image2D) -> f64 {
        let gx = x.to_grayscale();
        let gy = y.to_grayscale();
        let (h, w) = (x.height(), x.width());
        let mut vals = Vec::new();
        for y0 in 0..=h - 8 {
            for x0 in 0..=w - 8 {
                let mut wx = Vec::new();
                let mut wy = Vec::new();
                for dy in 0..8 {
                    for dx in 0..8 {
                        wx.push(gx[(y0 + dy) * w + x0 + dx]);
                        wy.push(gy[(y0 + dy) * w + x0 + dx]);
                    }
                }
                let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
                let mx = mean(&wx);
                let my = mean(&wy);
                let vx = mean(&wx.iter().map(|a| (a - mx) * (a - mx)).collect::<Vec<_>>());
                let vy = mean(&wy.iter().map(|a| (a - my) * (a - my)).collect::<Vec<_>>());
                let cov = mean(
                    &wx.iter()
                        .zip(&wy)
                        .map(|(a, b)| (a - mx) * (b - my))
                        .collect::<Vec<_>>(),
                );
                vals.push(
                    ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)),
                );
            }
        }
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    #[test]
    fn ssim_inverted_checkerboard_is_negative() {
        let x = checkerboard(16, 16);
        let mut y = x.clone();
        for v in y.data_mut() {
            *v = 1.0 - *v;
        }
        let s = ssim(&x, &y).unwrap();
        assert!(s < 0.0, "ssim = {s}");
        assert!((s - ssim_brute(&x, &y)).abs() < 1e-9);
        assert!(s >= -1.0);
    }

    #[test]
    fn sparsity_cases() {
        let img = Image2D::from_vec(4, 4, 1, vec![0.5; 16]).unwrap();
        let p = dwt2d_multi(&img, 1).unwrap();
        let (l1, frac) = sparsity_stats(&p, 1e-3).unwrap();
        assert_eq!(l1, 0.0);
        assert_eq!(frac, 1.0);

        // One nonzero among the 12 detail coefficients of a 4x4 level-1
        // pyramid; counting gives the exact statistics.
        let mut p2 = p.clone();
        p2.details[0].hl.data_mut()[0] = 1.0;
        let (l1, frac) = sparsity_stats(&p2, 0.5).unwrap();
        assert!((l1 - 1.0 / 12.0).abs() < 1e-15);
        assert!((frac - 11.0 / 12.0).abs() < 1e-15);

        // Sign flips leave both statistics unchanged.
        let mut p3 = p2.clone();
        for v in p3.details[0].hl.data_mut() {
            *v = -*v;
        }
        assert_eq!(
            sparsity_stats(&p3, 0.5).unwrap(),
            sparsity_stats(&p2, 0.5).unwrap()
        );

        assert!(matches!(sparsity_stats(&p, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn hf_ratio_cases() {
        let flat = Image2D::from_vec(4, 4, 1, vec![0.7; 16]).unwrap();
        assert_eq!(hf_energy_ratio(&flat, 1).unwrap(), 0.0);

        // A single impulse at the origin splits its energy evenly over the
        // four level-1 bands, leaving 3/4 in the details.
        let mut impulse = Image2D::zeros(4, 4, 1);
        impulse.set(0, 0, 0, 1.0);
        assert!((hf_energy_ratio(&impulse, 1).unwrap() - 0.75).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..5 {
            let img = random_image(&mut rng, 8, 8, 2);
            let r = hf_energy_ratio(&img, 2).unwrap();
            assert!((0.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn hf_ratio_drops_under_box_blur() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            // Smooth base plus noise so there is detail energy to remove.
            let mut img = Image2D::zeros(16, 16, 1);
            for y in 0..16 {
                for x in 0..16 {
                    let base = 0.5 + 0.3 * ((x as f64) / 15.0 - 0.5);
                    img.set(
                        0,
                        y,
                        x,
                        (base + rng.random_range(-0.2..0.2)).clamp(0.0, 1.0),
                    );
                }
            }
            let mut blurred = Image2D::zeros(16, 16, 1);
            for y in 0..16 {
                for x in 0..16 {
                    let mut acc = 0.0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            acc += img.get(0, (y + dy).min(15), (x + dx).min(15));
                        }
                    }
                    blurred.set(0, y, x, acc / 4.0);
                }
            }
            let orig = hf_energy_ratio(&img, 2).unwrap();
            let blur = hf_energy_ratio(&blurred, 2).unwrap();
            assert!(orig > 0.0);
            assert!(blur <= orig, "blurred {blur} > original {orig}");
        }
    }

    #[test]
    fn metric_report_serializes_as_single_object() {
        let report = MetricReport {
            mse: 0.1,
            bce: Some(0.2),
            ssim: 0.9,
            detail_l1_mean: 0.01,
            detail_near_zero_fraction: 0.5,
            hf_energy_ratio: 0.25,
        };
        let line = serde_json::to_string(&report).unwrap();
        assert!(!line.contains('\n'));
        let back: MetricReport = serde_json::from_str(&line).unwrap();
        assert_eq!(back.mse, report.mse);
    }
}
