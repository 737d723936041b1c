//! Dataset ingestion: the CIFAR-10 binary format, deterministic synthetic
//! datasets for desk-scale runs, and bicubic upscaling.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image2D;

/// A uniform-shape image collection with optional integer labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Vec<Image2D>,
    labels: Option<Vec<u8>>,
    source: String,
}

impl Dataset {
    pub fn new(images: Vec<Image2D>, labels: Option<Vec<u8>>, source: String) -> Result<Self> {
        if let Some(first) = images.first() {
            if !images.iter().all(|img| img.same_shape(first)) {
                return Err(Error::Shape("dataset images must share one shape".into()));
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != images.len() {
                return Err(Error::Shape("label count must match image count".into()));
            }
        }
        for img in &images {
            if !img
                .data()
                .iter()
                .all(|v| v.is_finite() && (0.0..=1.0).contains(v))
            {
                return Err(Error::Format(
                    "dataset intensities must lie in [0, 1]".into(),
                ));
            }
        }
        Ok(Dataset {
            images,
            labels,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Image2D] {
        &self.images
    }

    pub fn get(&self, i: usize) -> &Image2D {
        &self.images[i]
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Keep only the first `n` images.
    pub fn truncate(&mut self, n: usize) {
        self.images.truncate(n);
        if let Some(labels) = &mut self.labels {
            labels.truncate(n);
        }
    }
}

const CIFAR_RECORD: usize = 3073;
const CIFAR_SIDE: usize = 32;
const CIFAR_PLANE: usize = CIFAR_SIDE * CIFAR_SIDE;

/// Load CIFAR-10 binary batches: each 3073-byte record is one label byte
/// followed by three 1024-byte channel planes; intensities become `b/255`.
/// A directory is read as its `*.bin` files in name order.
pub fn load_cifar10(path: &Path) -> Result<Dataset> {
    let mut files = Vec::new();
    if path.is_dir() {
        let mut entries: Vec<_> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|e| e == "bin").unwrap_or(false))
            .collect();
        entries.sort();
        if entries.is_empty() {
            return Err(Error::Format(format!(
                "no .bin files under {}",
                path.display()
            )));
        }
        files.extend(entries);
    } else {
        files.push(path.to_path_buf());
    }

    let mut images = Vec::new();
    let mut labels = Vec::new();
    for file in files {
        let bytes = fs::read(&file)?;
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::Format(format!(
                "{}: length {} is not a multiple of {CIFAR_RECORD}",
                file.display(),
                bytes.len()
            )));
        }
        for record in bytes.chunks_exact(CIFAR_RECORD) {
            let label = record[0];
            if label > 9 {
                return Err(Error::Format(format!(
                    "{}: label {label} outside 0..=9",
                    file.display()
                )));
            }
            let mut data = Vec::with_capacity(3 * CIFAR_PLANE);
            data.extend(record[1..].iter().map(|&b| b as f64 / 255.0));
            images.push(Image2D::from_vec(CIFAR_SIDE, CIFAR_SIDE, 3, data)?);
            labels.push(label);
        }
    }
    Dataset::new(images, Some(labels), format!("cifar10:{}", path.display()))
}

/// Synthetic dataset families; all grayscale, deterministic given the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    Constant,
    Checkerboard,
    GaussianBlobs,
    Edges,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(SynthKind::Constant),
            "checkerboard" => Ok(SynthKind::Checkerboard),
            "gaussian-blobs" => Ok(SynthKind::GaussianBlobs),
            "edges" => Ok(SynthKind::Edges),
            other => Err(Error::Config(format!(
                "unknown synthetic dataset kind {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for SynthKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SynthKind::Constant => "constant",
            SynthKind::Checkerboard => "checkerboard",
            SynthKind::GaussianBlobs => "gaussian-blobs",
            SynthKind::Edges => "edges",
        };
        f.write_str(s)
    }
}

/// Generate `count` square grayscale images of dyadic side `size`.
pub fn synth_dataset(kind: SynthKind, count: usize, size: usize, seed: u64) -> Result<Dataset> {
    if !size.is_power_of_two() || size < 2 {
        return Err(Error::Domain(format!(
            "size must be a dyadic power of two, got {size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(count);
    for index in 0..count {
        let mut img = Image2D::zeros(size, size, 1);
        match kind {
            SynthKind::Constant => {
                let v = rng.random_range(0.0..1.0);
                for p in img.data_mut() {
                    *p = v;
                }
            }
            SynthKind::Checkerboard => {
                // Unit-period board; the phase alternates with the index.
                let phase = index % 2;
                for y in 0..size {
                    for x in 0..size {
                        img.set(0, y, x, ((x + y + phase) % 2) as f64);
                    }
                }
            }
            SynthKind::GaussianBlobs => {
                let blobs = rng.random_range(2..=4);
                let mut params = Vec::with_capacity(blobs);
                for _ in 0..blobs {
                    let cx = rng.random_range(0.0..size as f64);
                    let cy = rng.random_range(0.0..size as f64);
                    let sigma = rng.random_range(size as f64 / 8.0..size as f64 / 4.0);
                    let amp = rng.random_range(0.4..1.0);
                    params.push((cx, cy, sigma, amp));
                }
                for y in 0..size {
                    for x in 0..size {
                        let mut v = 0.0;
                        for &(cx, cy, sigma, amp) in &params {
                            let dx = x as f64 - cx;
                            let dy = y as f64 - cy;
                            v += amp * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                        }
                        img.set(0, y, x, v.clamp(0.0, 1.0));
                    }
                }
            }
            SynthKind::Edges => {
                let angle = rng.random_range(0.0..std::f64::consts::PI);
                let offset = rng.random_range(-0.25..0.25) * size as f64;
                let lo = rng.random_range(0.0..0.3);
                let hi = rng.random_range(0.7..1.0);
                let (cos, sin) = (angle.cos(), angle.sin());
                let center = (size as f64 - 1.0) / 2.0;
                for y in 0..size {
                    for x in 0..size {
                        let proj = (x as f64 - center) * cos + (y as f64 - center) * sin;
                        img.set(0, y, x, if proj > offset { hi } else { lo });
                    }
                }
            }
        }
        images.push(img);
    }
    Dataset::new(images, None, format!("synth:{kind}:{count}x{size}:{seed}"))
}

// Cubic convolution kernel with a = -0.5.
fn cubic_weight(d: f64) -> f64 {
    let a = -0.5;
    let d = d.abs();
    if d <= 1.0 {
        (a + 2.0) * d * d * d - (a + 3.0) * d * d + 1.0
    } else if d < 2.0 {
        a * d * d * d - 5.0 * a * d * d + 8.0 * a * d - 4.0 * a
    } else {
        0.0
    }
}

// Interpolate one axis position: source coordinate for output index `o` at
// integer scale `factor`, with clamped edges.
fn axis_taps(o: usize, factor: usize, n: usize) -> ([usize; 4], [f64; 4]) {
    let src = (o as f64 + 0.5) / factor as f64 - 0.5;
    let base = src.floor();
    let t = src - base;
    let mut idx = [0usize; 4];
    let mut w = [0.0f64; 4];
    for k in 0..4 {
        let tap = base as isize + k as isize - 1;
        idx[k] = tap.clamp(0, n as isize - 1) as usize;
        w[k] = cubic_weight(t - (k as f64 - 1.0));
    }
    (idx, w)
}

/// Separable bicubic upscale by an integer factor of 2 or 4: centre-aligned
/// sampling, clamped edges, output clamped back to [0, 1].
pub fn upscale_bicubic(img: &Image2D, factor: usize) -> Result<Image2D> {
    if factor != 2 && factor != 4 {
        return Err(Error::Domain(format!(
            "upscale factor must be 2 or 4, got {factor}"
        )));
    }
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let (oh, ow) = (h * factor, w * factor);
    // Horizontal pass to h x ow, then vertical pass to oh x ow.
    let mut wide = Image2D::zeros(h, ow, ch);
    for c in 0..ch {
        for y in 0..h {
            for ox in 0..ow {
                let (idx, wt) = axis_taps(ox, factor, w);
                let mut v = 0.0;
                for k in 0..4 {
                    v += wt[k] * img.get(c, y, idx[k]);
                }
                wide.set(c, y, ox, v);
            }
        }
    }
    let mut out = Image2D::zeros(oh, ow, ch);
    for c in 0..ch {
        for oy in 0..oh {
            let (idx, wt) = axis_taps(oy, factor, h);
            for ox in 0..ow {
                let mut v = 0.0;
                for k in 0..4 {
                    v += wt[k] * wide.get(c, idx[k], ox);
                }
                out.set(c, oy, ox, v.clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}
