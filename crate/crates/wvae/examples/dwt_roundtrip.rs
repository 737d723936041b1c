//! Multi-level Haar analysis and synthesis on a random image: band shapes,
//! energy preservation, and exact reconstruction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wvae::image::Image2D;
use wvae::wavelet::{dwt2d_multi, idwt2d_multi, pyramid_flatten};

fn main() -> wvae::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let data: Vec<f64> = (0..32 * 32 * 3)
        .map(|_| rng.random_range(0.0..1.0))
        .collect();
    let img = Image2D::from_vec(32, 32, 3, data)?;

    let levels = 3;
    let pyramid = dwt2d_multi(&img, levels)?;
    println!(
        "decomposed 32x32x3 at {levels} levels: approx {}x{}, {} detail triples",
        pyramid.approx.height(),
        pyramid.approx.width(),
        pyramid.details.len()
    );
    for bands in &pyramid.details {
        println!(
            "  level {}: HL/LH/HH are {}x{} per channel",
            bands.level,
            bands.hl.height(),
            bands.hl.width()
        );
    }

    let (flat, layout) = pyramid_flatten(&pyramid)?;
    println!(
        "flattened to {} coefficients across {} bands",
        flat.len(),
        layout.bands.len()
    );

    let energy_in: f64 = img.data().iter().map(|v| v * v).sum();
    let energy_out: f64 = flat.iter().map(|v| v * v).sum();
    println!("energy in {energy_in:.12}, energy out {energy_out:.12}");

    let back = idwt2d_multi(&pyramid)?;
    let max_err = back
        .data()
        .iter()
        .zip(img.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("max reconstruction error {max_err:.3e}");
    Ok(())
}
