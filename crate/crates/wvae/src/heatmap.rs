//! Coefficient-magnitude heatmaps in the nested-quadrant wavelet mosaic:
//! the approximation band sits in the top-left corner at its native
//! resolution, and each level's detail bands fill the remaining quadrants
//! (HL top-right, LH bottom-left, HH bottom-right).

use crate::error::Result;
use crate::image::Image2D;
use crate::wavelet::WaveletPyramid2D;

/// Render per-coefficient magnitudes (channel mean of |c|) into a single
/// grayscale mosaic with the same dimensions as the original image.
pub fn heatmap_mosaic(p: &WaveletPyramid2D) -> Result<Image2D> {
    let (h, w) = p.image_shape();
    let mut mosaic = Image2D::zeros(h, w, 1);
    let channels = p.channels() as f64;

    let mut blit = |band: &Image2D, y0: usize, x0: usize| {
        for y in 0..band.height() {
            for x in 0..band.width() {
                let mut mag = 0.0;
                for c in 0..band.channels() {
                    mag += band.get(c, y, x).abs();
                }
                mosaic.set(0, y0 + y, x0 + x, mag / channels);
            }
        }
    };

    blit(&p.approx, 0, 0);
    for bands in &p.details {
        let (bh, bw) = (bands.hl.height(), bands.hl.width());
        blit(&bands.hl, 0, bw);
        blit(&bands.lh, bh, 0);
        blit(&bands.hh, bh, bw);
    }
    Ok(mosaic)
}

/// Scale so the largest magnitude maps to exactly 1.0 (then 255 after byte
/// quantization). An all-zero mosaic stays all-zero.
pub fn normalize_to_unit(img: &Image2D) -> Image2D {
    let max = img.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return img.clone();
    }
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = v.abs() / max;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::intensity_to_byte;
    use crate::wavelet::{dwt2d_multi, pyramid_unflatten, PyramidLayout};

    #[test]
    fn zero_coefficients_render_black() {
        let layout = PyramidLayout::new(8, 8, 1, 2).unwrap();
        let p = pyramid_unflatten(&vec![0.0; layout.total_len()], &layout).unwrap();
        let mosaic = heatmap_mosaic(&p).unwrap();
        assert_eq!((mosaic.height(), mosaic.width()), (8, 8));
        let normalized = normalize_to_unit(&mosaic);
        assert!(normalized.data().iter().all(|&v| intensity_to_byte(v) == 0));
    }

    #[test]
    fn single_nonzero_coefficient_peaks_at_255() {
        let layout = PyramidLayout::new(8, 8, 1, 1).unwrap();
        let mut flat = vec![0.0; layout.total_len()];
        // First entry of the HL band.
        flat[layout.bands[1].offset] = -0.37;
        let p = pyramid_unflatten(&flat, &layout).unwrap();
        let normalized = normalize_to_unit(&heatmap_mosaic(&p).unwrap());
        let bytes: Vec<u8> = normalized
            .data()
            .iter()
            .map(|&v| intensity_to_byte(v))
            .collect();
        assert_eq!(bytes.iter().filter(|&&b| b == 255).count(), 1);
        assert_eq!(bytes.iter().filter(|&&b| b == 0).count(), bytes.len() - 1);
        // The peak lands in the top-right quadrant.
        assert_eq!(bytes[4], 255);
    }

    #[test]
    fn mosaic_matches_input_dims_and_covers_all_bands() {
        let mut img = Image2D::zeros(16, 8, 3);
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = (i % 13) as f64 / 13.0;
        }
        let p = dwt2d_multi(&img, 3).unwrap();
        let mosaic = heatmap_mosaic(&p).unwrap();
        assert_eq!(
            (mosaic.height(), mosaic.width(), mosaic.channels()),
            (16, 8, 1)
        );
    }
}
