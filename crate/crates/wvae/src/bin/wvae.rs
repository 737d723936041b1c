//! Command-line front end; all logic lives in the library.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use wvae::data::synth_dataset;
use wvae::error::{Error, Result};
use wvae::eval::{self, MetricReport};
use wvae::heatmap::{heatmap_mosaic, normalize_to_unit};
use wvae::image::{read_pnm, write_pnm, Image2D};
use wvae::net::{load_checkpoint, ModelKind};
use wvae::train::{
    ablate_noise_scale, load_data, reconstruct_images, train, DataSource, TrainConfig,
};
use wvae::wavelet::{
    dwt2d_multi, idwt2d_multi, pyramid_unflatten, read_coefficient_dump, write_coefficient_dump,
    PyramidLayout,
};

#[derive(Parser)]
#[command(
    name = "wvae",
    about = "Wavelet-latent variational autoencoder: transforms, training, metrics",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose a PGM/PPM image into a coefficient dump.
    Dwt {
        /// Decomposition depth.
        #[arg(long, default_value_t = 2)]
        levels: usize,
        /// Output dump file.
        #[arg(long)]
        out: PathBuf,
        /// Input image (binary PGM or PPM, maxval 255).
        image: PathBuf,
    },
    /// Reconstruct an image from a coefficient dump.
    Idwt {
        /// Output image file (PGM for 1 channel, PPM for 3).
        #[arg(long)]
        out: PathBuf,
        /// Input coefficient dump.
        dump: PathBuf,
    },
    /// Train a model and write runlog.jsonl plus checkpoint.wvn.
    Train(RunArgs),
    /// Train fixed and learnable noise scales on one seed and compare.
    Ablate(RunArgs),
    /// Reconstruct images through a checkpoint; writes images and metrics.
    Reconstruct {
        /// Checkpoint file written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long, default_value = "wvae-out")]
        out: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        threshold: f64,
        /// Data source (cifar10:<path> or synth:<kind>) used when no image
        /// files are given.
        #[arg(long)]
        data: Option<String>,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 16)]
        size: usize,
        /// Cap on the number of images drawn from --data.
        #[arg(long)]
        limit: Option<usize>,
        /// Input images (binary PGM/PPM).
        images: Vec<PathBuf>,
    },
    /// Metric report between two images, printed as one JSON object.
    Metrics {
        #[arg(long, default_value_t = 2)]
        levels: usize,
        #[arg(long, default_value_t = 1e-3)]
        threshold: f64,
        /// Reference image.
        image_x: PathBuf,
        /// Image under evaluation.
        image_y: PathBuf,
    },
    /// Render the encoder's coefficient magnitudes as a wavelet mosaic PGM.
    Heatmap {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output PGM file.
        #[arg(long)]
        out: PathBuf,
        image: PathBuf,
    },
    /// Generate a synthetic dataset as PGM files.
    Synth {
        /// Dataset to generate (synth:<kind>).
        #[arg(long, default_value = "synth:gaussian-blobs")]
        data: String,
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long, default_value_t = 16)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Flags shared by `train` and `ablate`. Precedence: defaults, then the
/// config file, then explicit flags.
#[derive(Args)]
struct RunArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model kind: wvae or vae.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    levels: Option<usize>,
    /// Sparsity weight for the wavelet objective.
    #[arg(long)]
    lambda: Option<f64>,
    /// KL weight for the baseline objective.
    #[arg(long)]
    beta: Option<f64>,
    /// Noise mode: learnable or fixed:<v>.
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Data source: cifar10:<path> or synth:<kind>.
    #[arg(long)]
    data: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reconstruction likelihood: mse or bce.
    #[arg(long)]
    recon: Option<String>,
    /// Comma-separated hidden layer widths.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long = "latent-dim")]
    latent_dim: Option<usize>,
    /// Synthetic dataset image count.
    #[arg(long)]
    count: Option<usize>,
    /// Synthetic dataset image side.
    #[arg(long)]
    size: Option<usize>,
    /// Cap on the number of images loaded.
    #[arg(long)]
    limit: Option<usize>,
    /// Bicubic upscale factor (2 or 4) applied to loaded images.
    #[arg(long)]
    upscale: Option<usize>,
    /// Near-zero magnitude threshold for sparsity statistics.
    #[arg(long)]
    threshold: Option<f64>,
}

impl RunArgs {
    fn build_config(&self) -> Result<TrainConfig> {
        let mut config = TrainConfig {
            out_dir: Some(PathBuf::from("wvae-out")),
            ..TrainConfig::default()
        };
        if let Some(path) = &self.config {
            config.apply_file(path)?;
        }
        if let Some(v) = &self.model {
            config.model = v.parse()?;
        }
        if let Some(v) = self.levels {
            config.levels = v;
        }
        if let Some(v) = self.lambda {
            config.lambda = v;
        }
        if let Some(v) = self.beta {
            config.beta = v;
        }
        if let Some(v) = &self.noise {
            config.noise = v.parse()?;
        }
        if let Some(v) = self.steps {
            config.steps = v;
        }
        if let Some(v) = self.batch {
            config.batch = v;
        }
        if let Some(v) = self.lr {
            config.learning_rate = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = &self.data {
            config.data = v.parse()?;
        }
        if let Some(v) = &self.out {
            config.out_dir = Some(v.clone());
        }
        if let Some(v) = &self.recon {
            config.recon = v.parse()?;
        }
        if let Some(v) = &self.hidden {
            config.apply_kv("hidden", v)?;
        }
        if let Some(v) = self.latent_dim {
            config.latent_dim = v;
        }
        if let Some(v) = self.count {
            config.synth_count = v;
        }
        if let Some(v) = self.size {
            config.synth_size = v;
        }
        if let Some(v) = self.limit {
            config.limit = Some(v);
        }
        if let Some(v) = self.upscale {
            config.upscale = v;
        }
        if let Some(v) = self.threshold {
            config.near_zero_threshold = v;
        }
        Ok(config)
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Dwt { levels, out, image } => {
            let img = read_pnm(&image)?;
            let pyramid = dwt2d_multi(&img, levels)?;
            let mut writer = BufWriter::new(File::create(&out)?);
            write_coefficient_dump(&mut writer, &pyramid)?;
            println!(
                "decomposed {} ({}x{}x{}) at {} levels -> {}",
                image.display(),
                img.height(),
                img.width(),
                img.channels(),
                levels,
                out.display()
            );
        }
        Command::Idwt { out, dump } => {
            let mut reader = BufReader::new(File::open(&dump)?);
            let pyramid = read_coefficient_dump(&mut reader)?;
            let img = idwt2d_multi(&pyramid)?;
            write_pnm(&img, &out)?;
            println!(
                "reconstructed {}x{}x{} -> {}",
                img.height(),
                img.width(),
                img.channels(),
                out.display()
            );
        }
        Command::Train(args) => {
            let config = args.build_config()?;
            let (net, log) = train(&config)?;
            let last = log.last_step().expect("at least one step");
            println!(
                "trained {} steps: total {:.6}, reconstruction {:.6}, s_approx {:.6}, s_detail {:.6}",
                last.step,
                last.total,
                last.reconstruction,
                net.noise.scale_approx(),
                net.noise.scale_detail()
            );
            if let Some(report) = log.final_report() {
                println!(
                    "final metrics: {}",
                    serde_json::to_string(report)
                        .map_err(|e| Error::Format(format!("report encode failed: {e}")))?
                );
            }
            if let Some(dir) = &config.out_dir {
                println!("artifacts under {}", dir.display());
            }
        }
        Command::Ablate(args) => {
            let config = args.build_config()?;
            let (report, _, _) = ablate_noise_scale(&config)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report)
                    .map_err(|e| Error::Format(format!("report encode failed: {e}")))?
            );
        }
        Command::Reconstruct {
            checkpoint,
            seed,
            out,
            threshold,
            data,
            count,
            size,
            limit,
            images,
        } => {
            let (net, _) = load_checkpoint(&checkpoint)?;
            let inputs: Vec<Image2D> = if !images.is_empty() {
                if data.is_some() {
                    return Err(Error::Config(
                        "give either image files or --data, not both".into(),
                    ));
                }
                images.iter().map(|p| read_pnm(p)).collect::<Result<_>>()?
            } else {
                let source: DataSource = data
                    .as_deref()
                    .ok_or_else(|| Error::Config("need image files or --data".into()))?
                    .parse()?;
                let config = TrainConfig {
                    data: source,
                    synth_count: count,
                    synth_size: size,
                    seed,
                    limit,
                    ..TrainConfig::default()
                };
                load_data(&config)?.images().to_vec()
            };
            if inputs.is_empty() {
                return Err(Error::Config("no input images".into()));
            }
            std::fs::create_dir_all(&out)?;
            let results = reconstruct_images(&net, &inputs, seed, threshold)?;
            let mut lines = String::new();
            let mut mse_sum = 0.0;
            for (i, (recon, report)) in results.iter().enumerate() {
                let ext = if recon.channels() == 3 { "ppm" } else { "pgm" };
                let mut clamped = recon.clone();
                for v in clamped.data_mut() {
                    *v = v.clamp(0.0, 1.0);
                }
                write_pnm(&clamped, &out.join(format!("recon_{i:03}.{ext}")))?;
                lines.push_str(
                    &serde_json::to_string(report)
                        .map_err(|e| Error::Format(format!("report encode failed: {e}")))?,
                );
                lines.push('\n');
                mse_sum += report.mse;
            }
            std::fs::write(out.join("metrics.jsonl"), lines)?;
            println!(
                "reconstructed {} images, mean mse {:.6}, outputs under {}",
                results.len(),
                mse_sum / results.len() as f64,
                out.display()
            );
        }
        Command::Metrics {
            levels,
            threshold,
            image_x,
            image_y,
        } => {
            let x = read_pnm(&image_x)?;
            let y = read_pnm(&image_y)?;
            let pyramid = dwt2d_multi(&y, levels)?;
            let (detail_l1_mean, near_zero) = eval::sparsity_stats(&pyramid, threshold)?;
            let report = MetricReport {
                mse: eval::mse(&x, &y)?,
                bce: Some(eval::bce(&x, &y)?),
                ssim: eval::ssim(&x, &y)?,
                detail_l1_mean,
                detail_near_zero_fraction: near_zero,
                hf_energy_ratio: eval::hf_energy_ratio(&y, levels)?,
            };
            println!(
                "{}",
                serde_json::to_string(&report)
                    .map_err(|e| Error::Format(format!("report encode failed: {e}")))?
            );
        }
        Command::Heatmap {
            checkpoint,
            out,
            image,
        } => {
            let (net, _) = load_checkpoint(&checkpoint)?;
            if net.kind() != ModelKind::Wvae {
                return Err(Error::Usage(
                    "heatmap requires a wavelet-model checkpoint".into(),
                ));
            }
            let img = read_pnm(&image)?;
            let coeffs = net.encode(&img)?;
            let layout =
                PyramidLayout::new(img.height(), img.width(), img.channels(), net.arch.levels)?;
            let pyramid = pyramid_unflatten(&coeffs, &layout)?;
            let mosaic = normalize_to_unit(&heatmap_mosaic(&pyramid)?);
            write_pnm(&mosaic, &out)?;
            println!(
                "heatmap {}x{} -> {}",
                mosaic.height(),
                mosaic.width(),
                out.display()
            );
        }
        Command::Synth {
            data,
            count,
            size,
            seed,
            out,
        } => {
            let source: DataSource = data.parse()?;
            let kind = match source {
                DataSource::Synth(kind) => kind,
                DataSource::Cifar10(_) => {
                    return Err(Error::Config("synth requires a synth:<kind> source".into()));
                }
            };
            let dataset = synth_dataset(kind, count, size, seed)?;
            std::fs::create_dir_all(&out)?;
            for (i, img) in dataset.images().iter().enumerate() {
                write_pnm(img, &out.join(format!("{kind}_{i:03}.pgm")))?;
            }
            println!(
                "wrote {} {kind} images ({size}x{size}) under {}",
                dataset.len(),
                out.display()
            );
        }
    }
    Ok(())
}
