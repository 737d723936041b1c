//! Train the diagonal-Gaussian baseline and compare its reconstruction
//! against the wavelet model on the same data and seed.

use wvae::data::SynthKind;
use wvae::net::ModelKind;
use wvae::train::{train, DataSource, TrainConfig};

fn main() -> wvae::Result<()> {
    let shared = TrainConfig {
        data: DataSource::Synth(SynthKind::GaussianBlobs),
        synth_count: 32,
        synth_size: 16,
        levels: 2,
        steps: 250,
        batch: 16,
        hidden: vec![64, 64],
        seed: 2,
        ..TrainConfig::default()
    };

    let baseline = TrainConfig {
        model: ModelKind::Vae,
        beta: 1e-3,
        latent_dim: 32,
        ..shared.clone()
    };
    let (_, vae_log) = train(&baseline)?;

    let wavelet = TrainConfig {
        model: ModelKind::Wvae,
        lambda: 1e-3,
        ..shared
    };
    let (_, wvae_log) = train(&wavelet)?;

    let v = vae_log.final_report().unwrap();
    let w = wvae_log.final_report().unwrap();
    println!(
        "baseline vae : mse {:.5}, ssim {:.4}, hf ratio {:.4}",
        v.mse, v.ssim, v.hf_energy_ratio
    );
    println!(
        "wavelet model: mse {:.5}, ssim {:.4}, hf ratio {:.4}",
        w.mse, w.ssim, w.hf_energy_ratio
    );
    Ok(())
}
