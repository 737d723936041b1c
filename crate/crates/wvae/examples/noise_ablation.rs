//! Fixed versus learnable noise scale on the same data and seed.

use wvae::data::SynthKind;
use wvae::train::{ablate_noise_scale, DataSource, TrainConfig};

fn main() -> wvae::Result<()> {
    let base = TrainConfig {
        data: DataSource::Synth(SynthKind::GaussianBlobs),
        synth_count: 32,
        synth_size: 16,
        levels: 2,
        steps: 250,
        batch: 16,
        hidden: vec![64, 64],
        seed: 3,
        ..TrainConfig::default()
    };
    let (report, _, learn_log) = ablate_noise_scale(&base)?;

    println!(
        "fixed     : final mse {:.6}, final total {:.6}, s=({:.4}, {:.4})",
        report.fixed.final_mse,
        report.fixed.final_total,
        report.fixed.s_approx,
        report.fixed.s_detail
    );
    println!(
        "learnable : final mse {:.6}, final total {:.6}, s=({:.4}, {:.4})",
        report.learnable.final_mse,
        report.learnable.final_total,
        report.learnable.s_approx,
        report.learnable.s_detail
    );
    println!(
        "relative mse difference (fixed - learnable)/fixed: {:.4}",
        report.relative_mse_difference
    );

    let series: Vec<f64> = learn_log.step_records().map(|r| r.s_detail).collect();
    println!(
        "learnable s_detail trajectory: start {:.4} -> min {:.4} -> end {:.4}",
        series.first().unwrap(),
        series.iter().cloned().fold(f64::INFINITY, f64::min),
        series.last().unwrap()
    );
    Ok(())
}
