//! MSE, BCE, SSIM and the high-frequency diagnostics between an image and a
//! blurred copy of itself.

use wvae::data::{synth_dataset, upscale_bicubic, SynthKind};
use wvae::eval::{bce, hf_energy_ratio, mse, ssim};
use wvae::image::Image2D;

fn box_blur(img: &Image2D) -> Image2D {
    let (h, w) = (img.height(), img.width());
    let mut out = Image2D::zeros(h, w, img.channels());
    for c in 0..img.channels() {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        acc += img.get(c, (y + dy).min(h - 1), (x + dx).min(w - 1));
                    }
                }
                out.set(c, y, x, acc / 4.0);
            }
        }
    }
    out
}

fn main() -> wvae::Result<()> {
    let ds = synth_dataset(SynthKind::Edges, 1, 32, 11)?;
    let sharp = ds.get(0);
    let blurred = box_blur(sharp);

    println!(
        "sharp vs itself : mse {:.6}, ssim {:.4}",
        mse(sharp, sharp)?,
        ssim(sharp, sharp)?
    );
    println!(
        "sharp vs blurred: mse {:.6}, bce {:.4}, ssim {:.4}",
        mse(sharp, &blurred)?,
        bce(sharp, &blurred)?,
        ssim(sharp, &blurred)?
    );
    println!(
        "high-frequency energy ratio: sharp {:.4}, blurred {:.4}",
        hf_energy_ratio(sharp, 2)?,
        hf_energy_ratio(&blurred, 2)?
    );

    let upscaled = upscale_bicubic(sharp, 2)?;
    println!(
        "bicubic 2x upscale: {}x{} -> {}x{}, hf ratio {:.4}",
        sharp.height(),
        sharp.width(),
        upscaled.height(),
        upscaled.width(),
        hf_energy_ratio(&upscaled, 2)?
    );
    Ok(())
}
