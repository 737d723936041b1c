//! Build a tiny file in the CIFAR-10 binary layout, parse it back, and
//! verify the exact byte-to-intensity mapping.

use wvae::data::load_cifar10;

fn main() -> wvae::Result<()> {
    // Three records: 1 label byte + 3 channel planes of 1024 bytes each.
    let mut bytes = Vec::new();
    for record in 0..3u32 {
        bytes.push((record % 10) as u8);
        for i in 0..3072u32 {
            bytes.push(((i + record * 7) % 256) as u8);
        }
    }
    let dir = std::env::temp_dir().join("wvae-cifar-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("tiny_batch.bin");
    std::fs::write(&path, &bytes)?;

    let dataset = load_cifar10(&path)?;
    println!("parsed {} records from {}", dataset.len(), path.display());
    println!("labels: {:?}", dataset.labels().unwrap());
    let img = dataset.get(1);
    println!(
        "record 1: {}x{}x{}, first red byte {} -> intensity {:.6}",
        img.height(),
        img.width(),
        img.channels(),
        7,
        img.data()[0]
    );
    assert_eq!(img.data()[0], 7.0 / 255.0);

    // A truncated file is rejected with a format error.
    let bad = dir.join("truncated.bin");
    std::fs::write(&bad, &bytes[..3072])?;
    match load_cifar10(&bad) {
        Err(e) => println!("truncated file rejected: {e}"),
        Ok(_) => unreachable!("truncated file must not parse"),
    }
    Ok(())
}
