//! Render the encoder's coefficient magnitudes for one image as the nested
//! wavelet mosaic and write it as a PGM file.

use wvae::data::{synth_dataset, SynthKind};
use wvae::heatmap::{heatmap_mosaic, normalize_to_unit};
use wvae::image::write_pnm;
use wvae::train::{train, DataSource, TrainConfig};
use wvae::wavelet::{pyramid_unflatten, PyramidLayout};

fn main() -> wvae::Result<()> {
    let config = TrainConfig {
        data: DataSource::Synth(SynthKind::Edges),
        synth_count: 16,
        synth_size: 16,
        levels: 2,
        steps: 150,
        batch: 8,
        hidden: vec![32, 32],
        seed: 5,
        ..TrainConfig::default()
    };
    let (net, _) = train(&config)?;

    let probe = synth_dataset(SynthKind::Edges, 1, 16, 99)?;
    let image = probe.get(0);
    let coeffs = net.encode(image)?;
    let layout = PyramidLayout::new(16, 16, 1, 2)?;
    let pyramid = pyramid_unflatten(&coeffs, &layout)?;
    let mosaic = normalize_to_unit(&heatmap_mosaic(&pyramid)?);

    let dir = std::env::temp_dir().join("wvae-heatmap-example");
    std::fs::create_dir_all(&dir)?;
    let input_path = dir.join("input.pgm");
    let heat_path = dir.join("heatmap.pgm");
    write_pnm(image, &input_path)?;
    write_pnm(&mosaic, &heat_path)?;

    let bright = mosaic.data().iter().filter(|&&v| v > 0.5).count();
    println!("input   -> {}", input_path.display());
    println!("heatmap -> {}", heat_path.display());
    println!(
        "mosaic {}x{}, {} of {} cells brighter than half scale",
        mosaic.height(),
        mosaic.width(),
        bright,
        mosaic.len()
    );
    Ok(())
}
