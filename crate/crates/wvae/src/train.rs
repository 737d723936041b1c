//! Experiment configuration, the deterministic training loop, the noise
//! scale ablation and reconstruction helpers.
//!
//! Everything a run produces (log records, checkpoints, reconstructions) is
//! a pure function of the configuration and seed: data order comes from a
//! seeded per-epoch shuffle recorded in the run log, and per-sample noise
//! seeds are derived from (seed, step, slot).

use std::fs;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::data::{load_cifar10, synth_dataset, upscale_bicubic, Dataset, SynthKind};
use crate::error::{Error, Result};
use crate::eval::{self, MetricReport};
use crate::image::Image2D;
use crate::latent::{NoiseScale, ReconLoss};
use crate::net::{
    init_network, save_checkpoint, ArchDescriptor, Gradients, ModelKind, Network, NOISE_SCALE_INIT,
};
use crate::wavelet::{dwt2d_multi, pyramid_unflatten, PyramidLayout, WaveletPyramid2D};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic sub-seed for a (stream, index) pair under a master seed.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(stream)) ^ index)
}

/// Where training data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Cifar10(PathBuf),
    Synth(SynthKind),
}

impl std::str::FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(path) = s.strip_prefix("cifar10:") {
            if path.is_empty() {
                return Err(Error::Config("cifar10: requires a path".into()));
            }
            return Ok(DataSource::Cifar10(PathBuf::from(path)));
        }
        if let Some(kind) = s.strip_prefix("synth:") {
            return Ok(DataSource::Synth(kind.parse()?));
        }
        Err(Error::Config(format!(
            "data source {s:?} must be cifar10:<path> or synth:<kind>"
        )))
    }
}

impl std::fmt::Display for DataSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DataSource::Cifar10(p) => write!(f, "cifar10:{}", p.display()),
            DataSource::Synth(k) => write!(f, "synth:{k}"),
        }
    }
}

/// Whether the noise log-scales receive gradient updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseMode {
    Learnable,
    Fixed(f64),
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "learnable" {
            return Ok(NoiseMode::Learnable);
        }
        if let Some(v) = s.strip_prefix("fixed:") {
            let v: f64 = v
                .parse()
                .map_err(|_| Error::Config(format!("bad fixed noise value {v:?}")))?;
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::Config(format!(
                    "fixed noise scale must be positive, got {v}"
                )));
            }
            return Ok(NoiseMode::Fixed(v));
        }
        Err(Error::Config(format!(
            "noise mode {s:?} must be learnable or fixed:<v>"
        )))
    }
}

impl std::fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NoiseMode::Learnable => f.write_str("learnable"),
            NoiseMode::Fixed(v) => write!(f, "fixed:{v}"),
        }
    }
}

/// Full description of a run. Defaults are desk-scale; every field can be
/// set from a key=value config file and overridden by CLI flags.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub levels: usize,
    pub lambda: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
    pub noise: NoiseMode,
    pub data: DataSource,
    pub out_dir: Option<PathBuf>,
    pub recon: ReconLoss,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub synth_count: usize,
    pub synth_size: usize,
    pub limit: Option<usize>,
    /// Bicubic upscale factor applied to every loaded image (1 = off).
    pub upscale: usize,
    pub near_zero_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::Wvae,
            levels: 2,
            lambda: 1e-3,
            beta: 1.0,
            learning_rate: 1e-3,
            batch: 32,
            steps: 1000,
            seed: 0,
            noise: NoiseMode::Learnable,
            data: DataSource::Synth(SynthKind::GaussianBlobs),
            out_dir: None,
            recon: ReconLoss::Mse,
            hidden: vec![256, 256],
            latent_dim: 64,
            synth_count: 64,
            synth_size: 16,
            limit: None,
            upscale: 1,
            near_zero_threshold: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::Config("levels must be at least 1".into()));
        }
        if self.steps < 1 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.batch < 1 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::Config(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        if self.beta < 0.0 || !self.beta.is_finite() {
            return Err(Error::Config(format!(
                "beta must be nonnegative, got {}",
                self.beta
            )));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.near_zero_threshold <= 0.0 {
            return Err(Error::Config("near-zero threshold must be positive".into()));
        }
        if !matches!(self.upscale, 1 | 2 | 4) {
            return Err(Error::Config(format!(
                "upscale must be 1, 2 or 4, got {}",
                self.upscale
            )));
        }
        Ok(())
    }

    /// Apply one `key=value` setting (config file line or CLI override).
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("bad value {value:?} for {what}"));
        match key {
            "model" => self.model = value.parse()?,
            "levels" => self.levels = value.parse().map_err(|_| bad("levels"))?,
            "lambda" => self.lambda = value.parse().map_err(|_| bad("lambda"))?,
            "beta" => self.beta = value.parse().map_err(|_| bad("beta"))?,
            "lr" => self.learning_rate = value.parse().map_err(|_| bad("lr"))?,
            "batch" => self.batch = value.parse().map_err(|_| bad("batch"))?,
            "steps" => self.steps = value.parse().map_err(|_| bad("steps"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "noise" => self.noise = value.parse()?,
            "data" => self.data = value.parse()?,
            "out" => self.out_dir = Some(PathBuf::from(value)),
            "recon" => self.recon = value.parse()?,
            "hidden" => {
                self.hidden = value
                    .split(',')
                    .filter(|t| !t.is_empty())
                    .map(|t| t.trim().parse::<usize>().map_err(|_| bad("hidden")))
                    .collect::<Result<_>>()?;
            }
            "latent-dim" => self.latent_dim = value.parse().map_err(|_| bad("latent-dim"))?,
            "count" => self.synth_count = value.parse().map_err(|_| bad("count"))?,
            "size" => self.synth_size = value.parse().map_err(|_| bad("size"))?,
            "limit" => self.limit = Some(value.parse().map_err(|_| bad("limit"))?),
            "upscale" => self.upscale = value.parse().map_err(|_| bad("upscale"))?,
            "threshold" => {
                self.near_zero_threshold = value.parse().map_err(|_| bad("threshold"))?;
            }
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parse a flat key=value config file; `#` starts a comment.
    pub fn apply_file(&mut self, path: &std::path::Path) -> Result<()> {
        let text = fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected key=value",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.apply_kv(key.trim(), value.trim())?;
        }
        Ok(())
    }
}

/// One training step's observables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub reconstruction: f64,
    pub regularizer: f64,
    pub total: f64,
    pub s_approx: f64,
    pub s_detail: f64,
}

/// Run log entries, persisted as one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RunRecord {
    /// The shuffled visit order for an epoch, recorded for exact replay.
    Epoch {
        epoch: usize,
        order: Vec<usize>,
    },
    Step(StepRecord),
    Report {
        report: MetricReport,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<RunRecord>,
}

impl RunLog {
    pub fn step_records(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            RunRecord::Step(s) => Some(s),
            _ => None,
        })
    }

    pub fn last_step(&self) -> Option<&StepRecord> {
        self.step_records().last()
    }

    pub fn final_report(&self) -> Option<&MetricReport> {
        self.records.iter().rev().find_map(|r| match r {
            RunRecord::Report { report } => Some(report),
            _ => None,
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("run records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_to(&self, path: &std::path::Path) -> Result<()> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }
}

/// Resolve the configured data source.
pub fn load_data(config: &TrainConfig) -> Result<Dataset> {
    let mut dataset = match &config.data {
        DataSource::Cifar10(path) => load_cifar10(path)?,
        DataSource::Synth(kind) => {
            synth_dataset(*kind, config.synth_count, config.synth_size, config.seed)?
        }
    };
    if let Some(limit) = config.limit {
        dataset.truncate(limit);
    }
    if config.upscale > 1 {
        let upscaled: Vec<Image2D> = dataset
            .images()
            .iter()
            .map(|img| upscale_bicubic(img, config.upscale))
            .collect::<Result<_>>()?;
        let labels = dataset.labels().map(|l| l.to_vec());
        let source = format!("{}:x{}", dataset.source(), config.upscale);
        dataset = Dataset::new(upscaled, labels, source)?;
    }
    Ok(dataset)
}

fn arch_for(config: &TrainConfig, dataset: &Dataset) -> Result<ArchDescriptor> {
    let first = dataset.get(0);
    let arch = ArchDescriptor {
        kind: config.model,
        height: first.height(),
        width: first.width(),
        channels: first.channels(),
        levels: config.levels,
        hidden: config.hidden.clone(),
        latent_dim: config.latent_dim,
    };
    arch.validate()?;
    Ok(arch)
}

/// Train on the configured data source. Writes `runlog.jsonl` and
/// `checkpoint.wvn` into the output directory when one is set.
pub fn train(config: &TrainConfig) -> Result<(Network, RunLog)> {
    config.validate()?;
    let dataset = load_data(config)?;
    train_with_dataset(config, &dataset)
}

/// Training loop against an already-loaded dataset.
pub fn train_with_dataset(config: &TrainConfig, dataset: &Dataset) -> Result<(Network, RunLog)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    let arch = arch_for(config, dataset)?;
    let mut net = init_network(&arch, config.seed)?;
    net.noise = match config.noise {
        NoiseMode::Learnable => NoiseScale::learnable(NOISE_SCALE_INIT)?,
        NoiseMode::Fixed(v) => NoiseScale::fixed(v)?,
    };
    let mut adam = Adam::new(net.param_count(), config.learning_rate);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0, 0));
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut cursor = order.len();
    let mut epoch = 0usize;
    let mut log = RunLog::default();

    for step in 1..=config.steps {
        if cursor >= order.len() {
            order.shuffle(&mut shuffle_rng);
            epoch += 1;
            cursor = 0;
            log.records.push(RunRecord::Epoch {
                epoch,
                order: order.clone(),
            });
        }
        let take = config.batch.min(order.len() - cursor);
        let batch = &order[cursor..cursor + take];
        cursor += take;

        let mut grads = Gradients::zeros_like(&net);
        let (mut recon_sum, mut reg_sum, mut total_sum) = (0.0, 0.0, 0.0);
        for (slot, &idx) in batch.iter().enumerate() {
            let x = dataset.get(idx);
            let noise_seed = derive_seed(config.seed, step as u64, slot as u64);
            let (_, tape) = net.forward(x, noise_seed)?;
            let loss = net.loss_from_tape(&tape, config.lambda, config.beta, config.recon)?;
            let sample_grads = net.backward(&tape, &loss)?;
            grads.accumulate(&sample_grads);
            recon_sum += loss.reconstruction;
            reg_sum += loss.regularizer;
            total_sum += loss.total;
        }
        let inv = 1.0 / take as f64;
        grads.scale(inv);

        let record = StepRecord {
            step,
            reconstruction: recon_sum * inv,
            regularizer: reg_sum * inv,
            total: total_sum * inv,
            s_approx: net.noise.scale_approx(),
            s_detail: net.noise.scale_detail(),
        };
        if !record.total.is_finite() || !grads.all_finite() {
            return Err(Error::NonFinite(format!(
                "non-finite loss or gradient at step {step} (total {})",
                record.total
            )));
        }
        if !net.noise.learnable {
            grads.zero_noise_grads();
        }
        let mut params = net.params_flat();
        adam.step(&mut params, &grads.flat());
        net.set_params_flat(&params)?;
        if !net.params_all_finite() {
            return Err(Error::NonFinite(format!(
                "non-finite parameter after step {step}"
            )));
        }
        log.records.push(RunRecord::Step(record));
    }

    let report = evaluate_dataset(&net, dataset, config.levels, config.near_zero_threshold)?;
    log.records.push(RunRecord::Report { report });

    if let Some(dir) = &config.out_dir {
        fs::create_dir_all(dir)?;
        log.write_to(&dir.join("runlog.jsonl"))?;
        save_checkpoint(&dir.join("checkpoint.wvn"), &net, &adam)?;
    }
    Ok((net, log))
}

fn latent_pyramid(net: &Network, latent: &[f64], x_hat: &Image2D) -> Result<WaveletPyramid2D> {
    match net.kind() {
        ModelKind::Wvae => {
            let layout = PyramidLayout::new(
                net.arch.height,
                net.arch.width,
                net.arch.channels,
                net.arch.levels,
            )?;
            pyramid_unflatten(latent, &layout)
        }
        // The baseline has no coefficient latent; its detail statistics
        // describe the reconstruction instead.
        ModelKind::Vae => dwt2d_multi(x_hat, net.arch.levels),
    }
}

/// Noise-free metrics for one image.
pub fn evaluate_single(
    net: &Network,
    x: &Image2D,
    levels: usize,
    near_zero_threshold: f64,
) -> Result<MetricReport> {
    let (x_hat, latent) = net.reconstruct_deterministic(x)?;
    let pyramid = latent_pyramid(net, &latent, &x_hat)?;
    let (detail_l1_mean, near_zero) = eval::sparsity_stats(&pyramid, near_zero_threshold)?;
    Ok(MetricReport {
        mse: eval::mse(x, &x_hat)?,
        bce: Some(eval::bce(x, &x_hat)?),
        ssim: eval::ssim(x, &x_hat)?,
        detail_l1_mean,
        detail_near_zero_fraction: near_zero,
        hf_energy_ratio: eval::hf_energy_ratio(&x_hat, levels)?,
    })
}

/// Field-wise mean of [`evaluate_single`] across the dataset.
pub fn evaluate_dataset(
    net: &Network,
    dataset: &Dataset,
    levels: usize,
    near_zero_threshold: f64,
) -> Result<MetricReport> {
    if dataset.is_empty() {
        return Err(Error::Config("cannot evaluate an empty dataset".into()));
    }
    let mut acc = MetricReport {
        mse: 0.0,
        bce: Some(0.0),
        ssim: 0.0,
        detail_l1_mean: 0.0,
        detail_near_zero_fraction: 0.0,
        hf_energy_ratio: 0.0,
    };
    for img in dataset.images() {
        let r = evaluate_single(net, img, levels, near_zero_threshold)?;
        acc.mse += r.mse;
        acc.bce = Some(acc.bce.unwrap() + r.bce.unwrap());
        acc.ssim += r.ssim;
        acc.detail_l1_mean += r.detail_l1_mean;
        acc.detail_near_zero_fraction += r.detail_near_zero_fraction;
        acc.hf_energy_ratio += r.hf_energy_ratio;
    }
    let n = dataset.len() as f64;
    acc.mse /= n;
    acc.bce = acc.bce.map(|v| v / n);
    acc.ssim /= n;
    acc.detail_l1_mean /= n;
    acc.detail_near_zero_fraction /= n;
    acc.hf_energy_ratio /= n;
    Ok(acc)
}

/// Final numbers from one ablation arm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRun {
    pub final_mse: f64,
    pub final_total: f64,
    pub s_approx: f64,
    pub s_detail: f64,
}

/// Fixed versus learnable noise scale on identical data and seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub fixed: AblationRun,
    pub learnable: AblationRun,
    /// (fixed - learnable) / fixed; positive when learning the scale helps.
    pub relative_mse_difference: f64,
}

/// Run both noise modes on the same configuration and compare. Writes
/// `ablation.json` plus per-arm artifacts under the output directory when
/// one is set.
pub fn ablate_noise_scale(base: &TrainConfig) -> Result<(AblationReport, RunLog, RunLog)> {
    let mut fixed_cfg = base.clone();
    fixed_cfg.noise = NoiseMode::Fixed(NOISE_SCALE_INIT);
    fixed_cfg.out_dir = base.out_dir.as_ref().map(|d| d.join("fixed"));
    let mut learn_cfg = base.clone();
    learn_cfg.noise = NoiseMode::Learnable;
    learn_cfg.out_dir = base.out_dir.as_ref().map(|d| d.join("learnable"));

    let (fixed_net, fixed_log) = train(&fixed_cfg)?;
    let (learn_net, learn_log) = train(&learn_cfg)?;

    let summarize = |net: &Network, log: &RunLog| -> Result<AblationRun> {
        Ok(AblationRun {
            final_mse: log
                .final_report()
                .ok_or_else(|| Error::Usage("run log has no final report".into()))?
                .mse,
            final_total: log
                .last_step()
                .ok_or_else(|| Error::Usage("run log has no steps".into()))?
                .total,
            s_approx: net.noise.scale_approx(),
            s_detail: net.noise.scale_detail(),
        })
    };
    let fixed = summarize(&fixed_net, &fixed_log)?;
    let learnable = summarize(&learn_net, &learn_log)?;
    let relative_mse_difference = if fixed.final_mse != 0.0 {
        (fixed.final_mse - learnable.final_mse) / fixed.final_mse
    } else {
        0.0
    };
    let report = AblationReport {
        fixed,
        learnable,
        relative_mse_difference,
    };
    if let Some(dir) = &base.out_dir {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("ablation.json"),
            serde_json::to_string_pretty(&report)
                .map_err(|e| Error::Format(format!("report encode failed: {e}")))?,
        )?;
    }
    Ok((report, fixed_log, learn_log))
}

/// Stochastic reconstructions with per-image metrics; deterministic for a
/// given seed, and seed-independent once the noise scales vanish.
pub fn reconstruct_images(
    net: &Network,
    images: &[Image2D],
    seed: u64,
    near_zero_threshold: f64,
) -> Result<Vec<(Image2D, MetricReport)>> {
    let mut out = Vec::with_capacity(images.len());
    for (i, x) in images.iter().enumerate() {
        let noise_seed = derive_seed(seed, 0, 1 + i as u64);
        let (x_hat, tape) = net.forward(x, noise_seed)?;
        let latent: Vec<f64> = match net.kind() {
            ModelKind::Wvae => tape.latent().expect("wavelet tape").coeffs.clone(),
            ModelKind::Vae => Vec::new(),
        };
        let pyramid = latent_pyramid(net, &latent, &x_hat)?;
        let (detail_l1_mean, near_zero) = eval::sparsity_stats(&pyramid, near_zero_threshold)?;
        let report = MetricReport {
            mse: eval::mse(x, &x_hat)?,
            bce: Some(eval::bce(x, &x_hat)?),
            ssim: eval::ssim(x, &x_hat)?,
            detail_l1_mean,
            detail_near_zero_fraction: near_zero,
            hf_energy_ratio: eval::hf_energy_ratio(&x_hat, net.arch.levels)?,
        };
        out.push((x_hat, report));
    }
    Ok(out)
}
