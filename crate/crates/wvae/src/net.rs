//! The differentiable model: an MLP encoder with a fixed-topology tape,
//! exact reverse-mode gradients through the whole objective (including the
//! linear synthesis decoder and both reparameterizations), and checkpoint
//! IO.
//!
//! Two model kinds share the machinery. The wavelet model's encoder emits
//! one coefficient per pixel-channel and its decoder is the parameter-free
//! inverse wavelet transform; the Gaussian baseline mirrors the encoder into
//! a learned decoder with a final sigmoid.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::error::{Error, Result};
use crate::eval::BCE_EPS;
use crate::format;
use crate::image::Image2D;
use crate::latent::{
    reparameterize_gaussian, reparameterize_wavelet, vae_loss, wvae_loss, GaussianPosterior,
    LatentSample, LossBreakdown, NoiseScale, ReconLoss,
};
use crate::wavelet::{
    dwt2d_multi, idwt2d_multi, pyramid_flatten, pyramid_unflatten, PyramidLayout,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Tanh,
    Sigmoid,
}

/// Dense layer: row-major `out_dim x in_dim` weights, bias, then an
/// elementwise nonlinearity.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl AffineLayer {
    fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        AffineLayer {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    fn forward(&self, input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.in_dim);
        let mut out = self.bias.clone();
        for (o, out_v) in out.iter_mut().enumerate() {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = 0.0;
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            *out_v += acc;
        }
        match self.activation {
            Activation::Linear => {}
            Activation::Tanh => {
                for v in &mut out {
                    *v = v.tanh();
                }
            }
            Activation::Sigmoid => {
                for v in &mut out {
                    *v = 1.0 / (1.0 + (-*v).exp());
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "wvae")]
    Wvae,
    #[serde(rename = "vae")]
    Vae,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wvae" => Ok(ModelKind::Wvae),
            "vae" => Ok(ModelKind::Vae),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Shape of the model: input image dims, hidden widths, decomposition depth
/// and (for the baseline) the Gaussian latent width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub kind: ModelKind,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub levels: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
}

impl ArchDescriptor {
    pub fn input_dim(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::Config("image dimensions must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if self.kind == ModelKind::Vae && self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        // Both kinds decompose images at `levels` (the baseline only for
        // diagnostics), so the divisibility requirement applies to both.
        PyramidLayout::new(self.height, self.width, self.channels, self.levels)?;
        Ok(())
    }
}

/// Encoder parameters, optional decoder parameters and the noise log-scales.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub arch: ArchDescriptor,
    pub encoder: Vec<AffineLayer>,
    pub decoder: Vec<AffineLayer>,
    pub noise: NoiseScale,
    revision: u64,
}

/// Initial noise scale; also the fixed value used by the ablation.
pub const NOISE_SCALE_INIT: f64 = 0.01;

type LayerDims = Vec<(usize, usize, Activation)>;

fn layer_dims(arch: &ArchDescriptor) -> (LayerDims, LayerDims) {
    let input = arch.input_dim();
    let mut enc = Vec::new();
    let mut prev = input;
    for &h in &arch.hidden {
        enc.push((prev, h, Activation::Tanh));
        prev = h;
    }
    match arch.kind {
        ModelKind::Wvae => {
            enc.push((prev, input, Activation::Linear));
            (enc, Vec::new())
        }
        ModelKind::Vae => {
            enc.push((prev, 2 * arch.latent_dim, Activation::Linear));
            let mut dec = Vec::new();
            let mut prev = arch.latent_dim;
            for &h in arch.hidden.iter().rev() {
                dec.push((prev, h, Activation::Tanh));
                prev = h;
            }
            dec.push((prev, input, Activation::Sigmoid));
            (enc, dec)
        }
    }
}

/// Seeded initialization: weights uniform in (-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// zero biases, noise log-scales at ln(0.01).
pub fn init_network(arch: &ArchDescriptor, seed: u64) -> Result<Network> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (enc_dims, dec_dims) = layer_dims(arch);
    let mut build = |dims: &[(usize, usize, Activation)]| -> Vec<AffineLayer> {
        dims.iter()
            .map(|&(i, o, act)| {
                let bound = 1.0 / (i as f64).sqrt();
                let mut layer = AffineLayer::zeros(i, o, act);
                for w in &mut layer.weight {
                    *w = rng.random_range(-bound..bound);
                }
                layer
            })
            .collect()
    };
    let encoder = build(&enc_dims);
    let decoder = build(&dec_dims);
    Ok(Network {
        arch: arch.clone(),
        encoder,
        decoder,
        noise: NoiseScale::learnable(NOISE_SCALE_INIT)?,
        revision: 0,
    })
}

fn stack_forward(layers: &[AffineLayer], input: &[f64]) -> Vec<Vec<f64>> {
    let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    for (l, layer) in layers.iter().enumerate() {
        let inp = if l == 0 { input } else { &outputs[l - 1] };
        outputs.push(layer.forward(inp));
    }
    outputs
}

/// Per-layer parameter gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients shaped like the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoder: Vec<LayerGrad>,
    pub decoder: Vec<LayerGrad>,
    pub rho_approx: f64,
    pub rho_detail: f64,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        let zero = |layers: &[AffineLayer]| {
            layers
                .iter()
                .map(|l| LayerGrad {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect()
        };
        Gradients {
            encoder: zero(&net.encoder),
            decoder: zero(&net.decoder),
            rho_approx: 0.0,
            rho_detail: 0.0,
        }
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        let add = |dst: &mut Vec<LayerGrad>, src: &[LayerGrad]| {
            for (d, s) in dst.iter_mut().zip(src) {
                for (a, b) in d.weight.iter_mut().zip(&s.weight) {
                    *a += b;
                }
                for (a, b) in d.bias.iter_mut().zip(&s.bias) {
                    *a += b;
                }
            }
        };
        add(&mut self.encoder, &other.encoder);
        add(&mut self.decoder, &other.decoder);
        self.rho_approx += other.rho_approx;
        self.rho_detail += other.rho_detail;
    }

    pub fn scale(&mut self, factor: f64) {
        for grads in [&mut self.encoder, &mut self.decoder] {
            for g in grads.iter_mut() {
                for v in &mut g.weight {
                    *v *= factor;
                }
                for v in &mut g.bias {
                    *v *= factor;
                }
            }
        }
        self.rho_approx *= factor;
        self.rho_detail *= factor;
    }

    pub fn zero_noise_grads(&mut self) {
        self.rho_approx = 0.0;
        self.rho_detail = 0.0;
    }

    /// Flatten in the network's parameter order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for grads in [&self.encoder, &self.decoder] {
            for g in grads {
                out.extend_from_slice(&g.weight);
                out.extend_from_slice(&g.bias);
            }
        }
        out.push(self.rho_approx);
        out.push(self.rho_detail);
        out
    }

    pub fn all_finite(&self) -> bool {
        self.flat().iter().all(|v| v.is_finite())
    }
}

struct WaveletTrace {
    sample: LatentSample,
}

struct GaussianTrace {
    mean: Vec<f64>,
    logvar: Vec<f64>,
    eps: Vec<f64>,
    z: Vec<f64>,
}

/// Recorded intermediates from one forward pass, consumed by
/// [`Network::backward`]. A tape is bound to the parameter revision it was
/// recorded against.
pub struct Tape {
    revision: u64,
    kind: ModelKind,
    input: Vec<f64>,
    enc_outputs: Vec<Vec<f64>>,
    wavelet: Option<WaveletTrace>,
    gaussian: Option<GaussianTrace>,
    dec_outputs: Vec<Vec<f64>>,
    output: Vec<f64>,
    pub seed: u64,
}

impl Tape {
    /// The noisy coefficient sample (wavelet model only).
    pub fn latent(&self) -> Option<&LatentSample> {
        self.wavelet.as_ref().map(|w| &w.sample)
    }

    /// The Gaussian posterior parameters (baseline only).
    pub fn posterior(&self) -> Option<GaussianPosterior> {
        self.gaussian.as_ref().map(|g| GaussianPosterior {
            mean: g.mean.clone(),
            logvar: g.logvar.clone(),
        })
    }
}

/// Synthesize an image from a flattened coefficient vector. This is the
/// wavelet model's entire decoder; it has no learnable parameters.
pub fn decode_wavelet_latent(coeffs: &[f64], layout: &PyramidLayout) -> Result<Image2D> {
    let pyramid = pyramid_unflatten(coeffs, layout)?;
    idwt2d_multi(&pyramid)
}

impl Network {
    pub fn kind(&self) -> ModelKind {
        self.arch.kind
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    fn check_input(&self, x: &Image2D) -> Result<()> {
        if x.height() != self.arch.height
            || x.width() != self.arch.width
            || x.channels() != self.arch.channels
        {
            return Err(Error::Shape(format!(
                "input {}x{}x{} does not match the architecture {}x{}x{}",
                x.height(),
                x.width(),
                x.channels(),
                self.arch.height,
                self.arch.width,
                self.arch.channels
            )));
        }
        Ok(())
    }

    /// Deterministic encoder output: coefficients for the wavelet model, or
    /// the concatenated posterior parameters for the baseline.
    pub fn encode(&self, x: &Image2D) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let outputs = stack_forward(&self.encoder, x.data());
        Ok(outputs.last().cloned().unwrap_or_else(|| x.data().to_vec()))
    }

    /// Forward pass dispatching on the model kind.
    pub fn forward(&self, x: &Image2D, seed: u64) -> Result<(Image2D, Tape)> {
        match self.arch.kind {
            ModelKind::Wvae => self.forward_wvae(x, seed),
            ModelKind::Vae => self.forward_vae(x, seed),
        }
    }

    /// Wavelet model: encode, perturb the coefficients, synthesize.
    pub fn forward_wvae(&self, x: &Image2D, seed: u64) -> Result<(Image2D, Tape)> {
        if self.arch.kind != ModelKind::Wvae {
            return Err(Error::Usage(
                "forward_wvae called on a non-wavelet model".into(),
            ));
        }
        self.check_input(x)?;
        let enc_outputs = stack_forward(&self.encoder, x.data());
        let coeffs = enc_outputs
            .last()
            .expect("encoder has at least the head layer");
        let layout = PyramidLayout::new(
            self.arch.height,
            self.arch.width,
            self.arch.channels,
            self.arch.levels,
        )?;
        let mask = layout.detail_mask();
        let sample = reparameterize_wavelet(coeffs, &mask, &self.noise, seed)?;
        let x_hat = decode_wavelet_latent(&sample.noisy, &layout)?;
        let tape = Tape {
            revision: self.revision,
            kind: ModelKind::Wvae,
            input: x.data().to_vec(),
            enc_outputs,
            wavelet: Some(WaveletTrace { sample }),
            gaussian: None,
            dec_outputs: Vec::new(),
            output: x_hat.data().to_vec(),
            seed,
        };
        Ok((x_hat, tape))
    }

    /// Gaussian baseline: encode to posterior parameters, sample, decode.
    pub fn forward_vae(&self, x: &Image2D, seed: u64) -> Result<(Image2D, Tape)> {
        if self.arch.kind != ModelKind::Vae {
            return Err(Error::Usage(
                "forward_vae called on a non-baseline model".into(),
            ));
        }
        self.check_input(x)?;
        let enc_outputs = stack_forward(&self.encoder, x.data());
        let head = enc_outputs
            .last()
            .expect("encoder has at least the head layer");
        let d = self.arch.latent_dim;
        let post = GaussianPosterior::new(head[..d].to_vec(), head[d..].to_vec())?;
        let (z, eps) = reparameterize_gaussian(&post, seed);
        let dec_outputs = stack_forward(&self.decoder, &z);
        let out = dec_outputs
            .last()
            .expect("decoder has at least the output layer")
            .clone();
        let x_hat = Image2D::from_vec(
            self.arch.height,
            self.arch.width,
            self.arch.channels,
            out.clone(),
        )?;
        let tape = Tape {
            revision: self.revision,
            kind: ModelKind::Vae,
            input: x.data().to_vec(),
            enc_outputs,
            wavelet: None,
            gaussian: Some(GaussianTrace {
                mean: post.mean,
                logvar: post.logvar,
                eps,
                z,
            }),
            dec_outputs,
            output: out,
            seed,
        };
        Ok((x_hat, tape))
    }

    /// Noise-free reconstruction (coefficients used directly; the baseline
    /// decodes the posterior mean). Returns the reconstruction and the
    /// deterministic latent.
    pub fn reconstruct_deterministic(&self, x: &Image2D) -> Result<(Image2D, Vec<f64>)> {
        match self.arch.kind {
            ModelKind::Wvae => {
                let coeffs = self.encode(x)?;
                let layout = PyramidLayout::new(
                    self.arch.height,
                    self.arch.width,
                    self.arch.channels,
                    self.arch.levels,
                )?;
                let x_hat = decode_wavelet_latent(&coeffs, &layout)?;
                Ok((x_hat, coeffs))
            }
            ModelKind::Vae => {
                let head = self.encode(x)?;
                let mean = head[..self.arch.latent_dim].to_vec();
                let dec = stack_forward(&self.decoder, &mean);
                let out = dec.last().unwrap().clone();
                let x_hat =
                    Image2D::from_vec(self.arch.height, self.arch.width, self.arch.channels, out)?;
                Ok((x_hat, mean))
            }
        }
    }

    /// Evaluate the configured objective for a recorded forward pass.
    pub fn loss_from_tape(
        &self,
        tape: &Tape,
        lambda: f64,
        beta: f64,
        recon_kind: ReconLoss,
    ) -> Result<LossBreakdown> {
        let x = Image2D::from_vec(
            self.arch.height,
            self.arch.width,
            self.arch.channels,
            tape.input.clone(),
        )?;
        let x_hat = Image2D::from_vec(
            self.arch.height,
            self.arch.width,
            self.arch.channels,
            tape.output.clone(),
        )?;
        match tape.kind {
            ModelKind::Wvae => {
                let trace = tape.wavelet.as_ref().expect("wavelet tape");
                wvae_loss(
                    &x,
                    &x_hat,
                    &trace.sample.coeffs,
                    &trace.sample.detail_mask,
                    lambda,
                    recon_kind,
                )
            }
            ModelKind::Vae => {
                let post = tape.posterior().expect("gaussian tape");
                vae_loss(&x, &x_hat, &post, beta, recon_kind)
            }
        }
    }

    /// Exact reverse-mode gradients of `loss.total` with respect to every
    /// parameter, including the noise log-scales. The tape must come from a
    /// forward pass against the current parameters.
    pub fn backward(&self, tape: &Tape, loss: &LossBreakdown) -> Result<Gradients> {
        if tape.revision != self.revision {
            return Err(Error::Usage(format!(
                "stale tape: recorded at revision {}, network is at {}",
                tape.revision, self.revision
            )));
        }
        if tape.kind != self.arch.kind {
            return Err(Error::Usage(
                "tape model kind does not match the network".into(),
            ));
        }
        let n = tape.output.len() as f64;
        // d total / d x_hat for the active reconstruction term.
        let grad_out: Vec<f64> = match loss.recon_kind {
            ReconLoss::Mse => tape
                .output
                .iter()
                .zip(&tape.input)
                .map(|(&y, &t)| 2.0 * (y - t) / n)
                .collect(),
            ReconLoss::Bce => tape
                .output
                .iter()
                .zip(&tape.input)
                .map(|(&y, &t)| {
                    if y <= BCE_EPS || y >= 1.0 - BCE_EPS {
                        // Clamped in the forward pass; flat in y.
                        0.0
                    } else {
                        (-t / y + (1.0 - t) / (1.0 - y)) / n
                    }
                })
                .collect(),
        };

        match tape.kind {
            ModelKind::Wvae => self.backward_wvae(tape, loss, grad_out),
            ModelKind::Vae => self.backward_vae(tape, loss, grad_out),
        }
    }

    fn backward_wvae(
        &self,
        tape: &Tape,
        loss: &LossBreakdown,
        grad_out: Vec<f64>,
    ) -> Result<Gradients> {
        let trace = tape.wavelet.as_ref().expect("wavelet tape");
        // The synthesis transform is orthonormal, so its adjoint is the
        // analysis transform applied to the incoming gradient image.
        let grad_img = Image2D::from_vec(
            self.arch.height,
            self.arch.width,
            self.arch.channels,
            grad_out,
        )?;
        let grad_pyramid = dwt2d_multi(&grad_img, self.arch.levels)?;
        let (grad_noisy, _) = pyramid_flatten(&grad_pyramid)?;

        // Chain rule through scale = exp(rho) for the two noise log-scales.
        let sample = &trace.sample;
        let (s_a, s_d) = (self.noise.scale_approx(), self.noise.scale_detail());
        let mut rho_approx = 0.0;
        let mut rho_detail = 0.0;
        for ((&g, &e), &is_detail) in grad_noisy
            .iter()
            .zip(&sample.noise)
            .zip(&sample.detail_mask)
        {
            if is_detail {
                rho_detail += g * e * s_d;
            } else {
                rho_approx += g * e * s_a;
            }
        }

        // d total / d coeffs: identity through the noise addition plus the
        // L1 subgradient on detail entries (zero at zero).
        let mut delta = grad_noisy;
        for ((d, &c), &is_detail) in delta
            .iter_mut()
            .zip(&sample.coeffs)
            .zip(&sample.detail_mask)
        {
            if is_detail && c != 0.0 {
                *d += loss.lambda * c.signum();
            }
        }

        let (encoder, _) = stack_backward(&self.encoder, &tape.input, &tape.enc_outputs, delta);
        Ok(Gradients {
            encoder,
            decoder: Vec::new(),
            rho_approx,
            rho_detail,
        })
    }

    fn backward_vae(
        &self,
        tape: &Tape,
        loss: &LossBreakdown,
        grad_out: Vec<f64>,
    ) -> Result<Gradients> {
        let trace = tape.gaussian.as_ref().expect("gaussian tape");
        let (decoder, delta_z) =
            stack_backward(&self.decoder, &trace.z, &tape.dec_outputs, grad_out);

        let d = self.arch.latent_dim;
        let mut delta_head = vec![0.0; 2 * d];
        for i in 0..d {
            let sigma = (trace.logvar[i] / 2.0).exp();
            // Reconstruction path through z = mean + sigma * eps, plus the
            // closed-form KL term weighted by beta.
            delta_head[i] = delta_z[i] + loss.beta * trace.mean[i];
            delta_head[d + i] = delta_z[i] * trace.eps[i] * sigma * 0.5
                + loss.beta * 0.5 * (trace.logvar[i].exp() - 1.0);
        }
        let (encoder, _) =
            stack_backward(&self.encoder, &tape.input, &tape.enc_outputs, delta_head);
        Ok(Gradients {
            encoder,
            decoder,
            rho_approx: 0.0,
            rho_detail: 0.0,
        })
    }

    pub fn param_count(&self) -> usize {
        let layers: usize = self
            .encoder
            .iter()
            .chain(&self.decoder)
            .map(|l| l.weight.len() + l.bias.len())
            .sum();
        layers + 2
    }

    /// Parameters flattened in a fixed order: encoder layers (weights then
    /// bias), decoder layers, then the two noise log-scales.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in self.encoder.iter().chain(&self.decoder) {
            out.extend_from_slice(&layer.weight);
            out.extend_from_slice(&layer.bias);
        }
        out.push(self.noise.rho_approx);
        out.push(self.noise.rho_detail);
        out
    }

    /// Overwrite all parameters from a flat vector (inverse of
    /// [`Network::params_flat`]). Invalidates existing tapes.
    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut pos = 0;
        for layer in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            let wlen = layer.weight.len();
            layer.weight.copy_from_slice(&flat[pos..pos + wlen]);
            pos += wlen;
            let blen = layer.bias.len();
            layer.bias.copy_from_slice(&flat[pos..pos + blen]);
            pos += blen;
        }
        self.noise.set_log_scales(flat[pos], flat[pos + 1]);
        self.revision += 1;
        Ok(())
    }

    pub fn params_all_finite(&self) -> bool {
        self.params_flat().iter().all(|v| v.is_finite())
    }
}

fn stack_backward(
    layers: &[AffineLayer],
    stack_input: &[f64],
    outputs: &[Vec<f64>],
    mut delta: Vec<f64>,
) -> (Vec<LayerGrad>, Vec<f64>) {
    let mut grads: Vec<LayerGrad> = Vec::with_capacity(layers.len());
    for _ in 0..layers.len() {
        grads.push(LayerGrad {
            weight: Vec::new(),
            bias: Vec::new(),
        });
    }
    for l in (0..layers.len()).rev() {
        let layer = &layers[l];
        let out = &outputs[l];
        let inp: &[f64] = if l == 0 { stack_input } else { &outputs[l - 1] };
        match layer.activation {
            Activation::Linear => {}
            Activation::Tanh => {
                for (d, &a) in delta.iter_mut().zip(out) {
                    *d *= 1.0 - a * a;
                }
            }
            Activation::Sigmoid => {
                for (d, &a) in delta.iter_mut().zip(out) {
                    *d *= a * (1.0 - a);
                }
            }
        }
        let mut gw = vec![0.0; layer.weight.len()];
        for o in 0..layer.out_dim {
            let dv = delta[o];
            let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
            for (g, &x) in row.iter_mut().zip(inp) {
                *g = dv * x;
            }
        }
        let mut dnext = vec![0.0; layer.in_dim];
        for (o, &dv) in delta.iter().enumerate() {
            let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
            for (dn, &w) in dnext.iter_mut().zip(row) {
                *dn += dv * w;
            }
        }
        grads[l] = LayerGrad {
            weight: gw,
            bias: delta.clone(),
        };
        delta = dnext;
    }
    (grads, delta)
}

const CHECKPOINT_MAGIC: &str = "WVN1";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    magic: String,
    arch: ArchDescriptor,
    noise_learnable: bool,
    step: u64,
    param_count: usize,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

/// Save parameters plus optimizer state: a JSON header line, then the
/// parameter vector and both moment vectors as little-endian doubles.
pub fn save_checkpoint(path: &Path, net: &Network, adam: &Adam) -> Result<()> {
    let header = CheckpointHeader {
        magic: CHECKPOINT_MAGIC.into(),
        arch: net.arch.clone(),
        noise_learnable: net.noise.learnable,
        step: adam.step,
        param_count: net.param_count(),
        learning_rate: adam.learning_rate,
        beta1: adam.beta1,
        beta2: adam.beta2,
        epsilon: adam.epsilon,
    };
    let mut payload = net.params_flat();
    payload.extend_from_slice(adam.first_moments());
    payload.extend_from_slice(adam.second_moments());
    let mut out = BufWriter::new(File::create(path)?);
    format::write_block(&mut out, &header, &payload)
}

/// Load a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(Network, Adam)> {
    let mut input = BufReader::new(File::open(path)?);
    let (header, payload): (CheckpointHeader, Vec<f64>) = format::read_block(&mut input)?;
    if header.magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {CHECKPOINT_MAGIC:?}",
            header.magic
        )));
    }
    header
        .arch
        .validate()
        .map_err(|e| Error::Format(format!("checkpoint arch invalid: {e}")))?;
    let mut net = init_network(&header.arch, 0)?;
    if header.param_count != net.param_count() {
        return Err(Error::Format(format!(
            "checkpoint declares {} parameters, architecture implies {}",
            header.param_count,
            net.param_count()
        )));
    }
    if payload.len() != 3 * header.param_count {
        return Err(Error::Format(format!(
            "checkpoint payload has {} doubles, expected {}",
            payload.len(),
            3 * header.param_count
        )));
    }
    let p = header.param_count;
    net.set_params_flat(&payload[..p])?;
    net.noise.learnable = header.noise_learnable;
    net.revision = 0;
    let adam = Adam::restore(
        header.learning_rate,
        header.beta1,
        header.beta2,
        header.epsilon,
        header.step,
        payload[p..2 * p].to_vec(),
        payload[2 * p..].to_vec(),
    );
    Ok((net, adam))
}

#[cfg(test)]
#[allow(clippy::approx_constant, clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::wavelet;

    fn small_wvae_arch() -> ArchDescriptor {
        ArchDescriptor {
            kind: ModelKind::Wvae,
            height: 4,
            width: 4,
            channels: 1,
            levels: 1,
            hidden: vec![6],
            latent_dim: 0,
        }
    }

    fn small_vae_arch() -> ArchDescriptor {
        ArchDescriptor {
            kind: ModelKind::Vae,
            height: 4,
            width: 4,
            channels: 1,
            levels: 1,
            hidden: vec![5],
            latent_dim: 3,
        }
    }

    fn test_image(seed: u64, h: usize, w: usize, c: usize) -> Image2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w * c).map(|_| rng.random_range(0.0..1.0)).collect();
        Image2D::from_vec(h, w, c, data).unwrap()
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let arch = small_wvae_arch();
        let a = init_network(&arch, 1).unwrap();
        let b = init_network(&arch, 1).unwrap();
        let c = init_network(&arch, 2).unwrap();
        assert_eq!(a.params_flat(), b.params_flat());
        assert_ne!(a.params_flat(), c.params_flat());
        for layer in &a.encoder {
            let bound = 1.0 / (layer.in_dim as f64).sqrt();
            assert!(layer.weight.iter().all(|w| w.abs() <= bound));
            assert!(layer.bias.iter().all(|&b| b == 0.0));
        }
        assert!((a.noise.rho_approx - (0.01f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn zeroed_wvae_outputs_zero_image() {
        let mut net = init_network(&small_wvae_arch(), 3).unwrap();
        let zeros = vec![0.0; net.param_count()];
        net.set_params_flat(&zeros).unwrap();
        net.noise = NoiseScale::from_log_scales(-50.0, -50.0, true);
        let x = test_image(4, 4, 4, 1);
        let (x_hat, _) = net.forward_wvae(&x, 9).unwrap();
        assert!(x_hat.data().iter().all(|v| v.abs() < 1e-18));
    }

    #[test]
    fn zeroed_vae_outputs_one_half() {
        let mut net = init_network(&small_vae_arch(), 3).unwrap();
        let zeros = vec![0.0; net.param_count()];
        net.set_params_flat(&zeros).unwrap();
        let x = test_image(5, 4, 4, 1);
        let (x_hat, tape) = net.forward_vae(&x, 9).unwrap();
        assert!(x_hat.data().iter().all(|v| (v - 0.5).abs() < 1e-15));
        let post = tape.posterior().unwrap();
        assert_eq!(post.mean.len(), 3);
        assert_eq!(post.logvar.len(), 3);
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let net = init_network(&small_wvae_arch(), 5).unwrap();
        let x = test_image(6, 4, 4, 1);
        let (a, _) = net.forward_wvae(&x, 123).unwrap();
        let (b, _) = net.forward_wvae(&x, 123).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
        let (c, _) = net.forward_wvae(&x, 124).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn seed_changes_noise_but_not_coefficients() {
        let net = init_network(&small_wvae_arch(), 5).unwrap();
        let x = test_image(6, 4, 4, 1);
        let (_, t1) = net.forward_wvae(&x, 1).unwrap();
        let (_, t2) = net.forward_wvae(&x, 2).unwrap();
        assert_eq!(t1.latent().unwrap().coeffs, t2.latent().unwrap().coeffs);
        assert_ne!(t1.latent().unwrap().noise, t2.latent().unwrap().noise);
    }

    #[test]
    fn encoder_bypass_reconstructs_input() {
        let x = test_image(7, 8, 8, 1);
        let layout = PyramidLayout::new(8, 8, 1, 2).unwrap();
        let pyramid = dwt2d_multi(&x, 2).unwrap();
        let (coeffs, _) = pyramid_flatten(&pyramid).unwrap();
        let scales = NoiseScale::from_log_scales(-50.0, -50.0, false);
        let sample = reparameterize_wavelet(&coeffs, &layout.detail_mask(), &scales, 11).unwrap();
        let x_hat = decode_wavelet_latent(&sample.noisy, &layout).unwrap();
        let max_err = x_hat
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= 1e-10, "max err {max_err}");
    }

    #[test]
    fn idwt_adjoint_identity() {
        // <decode(u), v> must equal <u, dwt_flatten(v)>.
        let layout = PyramidLayout::new(8, 8, 2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let u: Vec<f64> = (0..layout.total_len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let v = test_image(14, 8, 8, 2);
        let decoded = decode_wavelet_latent(&u, &layout).unwrap();
        let lhs: f64 = decoded
            .data()
            .iter()
            .zip(v.data())
            .map(|(a, b)| a * b)
            .sum();
        let (dwt_v, _) = pyramid_flatten(&dwt2d_multi(&v, 2).unwrap()).unwrap();
        let rhs: f64 = u.iter().zip(&dwt_v).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-10, "lhs {lhs} rhs {rhs}");
    }

    #[test]
    fn exact_reconstruction_has_zero_gradient() {
        // x_hat == x at lambda 0 sits at the reconstruction minimum.
        let mut net = init_network(&small_wvae_arch(), 14).unwrap();
        let zeros = vec![0.0; net.param_count()];
        net.set_params_flat(&zeros).unwrap();
        // exp(-1000) underflows to exactly zero scale.
        net.noise = NoiseScale::from_log_scales(-1000.0, -1000.0, true);
        let x = Image2D::zeros(4, 4, 1);
        let (x_hat, tape) = net.forward_wvae(&x, 3).unwrap();
        assert_eq!(x_hat.data(), x.data());
        let loss = net.loss_from_tape(&tape, 0.0, 0.0, ReconLoss::Mse).unwrap();
        assert_eq!(loss.total, 0.0);
        let grads = net.backward(&tape, &loss).unwrap();
        assert!(grads.flat().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut net = init_network(&small_wvae_arch(), 15).unwrap();
        let x = test_image(16, 4, 4, 1);
        let (_, tape) = net.forward_wvae(&x, 1).unwrap();
        let loss = net.loss_from_tape(&tape, 0.0, 0.0, ReconLoss::Mse).unwrap();
        let params = net.params_flat();
        net.set_params_flat(&params).unwrap();
        assert!(matches!(net.backward(&tape, &loss), Err(Error::Usage(_))));
    }

    #[test]
    fn single_affine_gradient_matches_hand_formula() {
        // One linear layer feeding the synthesis decoder on a 2x2 image with
        // vanishing noise; the MSE weight gradient is
        // 2/N * sum_j (xhat_j - x_j) * S[j][o] * in_i, with the synthesis
        // matrix S worked out by hand from the pairwise sums/differences.
        let arch = ArchDescriptor {
            kind: ModelKind::Wvae,
            height: 2,
            width: 2,
            channels: 1,
            levels: 1,
            hidden: vec![],
            latent_dim: 0,
        };
        let mut net = init_network(&arch, 21).unwrap();
        net.noise = NoiseScale::from_log_scales(-50.0, -50.0, false);
        let x = Image2D::from_vec(2, 2, 1, vec![0.3, 0.8, 0.1, 0.6]).unwrap();
        let (x_hat, tape) = net.forward_wvae(&x, 2).unwrap();
        let loss = net.loss_from_tape(&tape, 0.0, 0.0, ReconLoss::Mse).unwrap();
        let grads = net.backward(&tape, &loss).unwrap();

        // Analysis rows for [LL, HL, LH, HH] against pixels
        // [p00, p01, p10, p11]; synthesis is the transpose.
        let analysis = [
            [0.5, 0.5, 0.5, 0.5],
            [0.5, -0.5, 0.5, -0.5],
            [0.5, 0.5, -0.5, -0.5],
            [0.5, -0.5, -0.5, 0.5],
        ];
        for o in 0..4 {
            for i in 0..4 {
                let mut hand = 0.0;
                for j in 0..4 {
                    hand +=
                        2.0 / 4.0 * (x_hat.data()[j] - x.data()[j]) * analysis[o][j] * x.data()[i];
                }
                let got = grads.encoder[0].weight[o * 4 + i];
                assert!(
                    (hand - got).abs() < 1e-12,
                    "w[{o}][{i}]: hand {hand} got {got}"
                );
            }
        }
    }

    // Central finite differences over every parameter of the given network.
    fn finite_difference_check(
        net: &mut Network,
        x: &Image2D,
        seed: u64,
        lambda: f64,
        beta: f64,
        recon: ReconLoss,
    ) -> f64 {
        let (_, tape) = net.forward(x, seed).unwrap();
        let loss = net.loss_from_tape(&tape, lambda, beta, recon).unwrap();
        let analytic = net.backward(&tape, &loss).unwrap().flat();
        let base = net.params_flat();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for idx in 0..base.len() {
            let mut plus = base.clone();
            plus[idx] += h;
            net.set_params_flat(&plus).unwrap();
            let (_, t) = net.forward(x, seed).unwrap();
            let lp = net.loss_from_tape(&t, lambda, beta, recon).unwrap().total;
            let mut minus = base.clone();
            minus[idx] -= h;
            net.set_params_flat(&minus).unwrap();
            let (_, t) = net.forward(x, seed).unwrap();
            let lm = net.loss_from_tape(&t, lambda, beta, recon).unwrap().total;
            let numeric = (lp - lm) / (2.0 * h);
            if analytic[idx].abs() > 1e-8 {
                let rel = (numeric - analytic[idx]).abs() / numeric.abs().max(analytic[idx].abs());
                worst = worst.max(rel);
            }
        }
        net.set_params_flat(&base).unwrap();
        worst
    }

    #[test]
    fn gradients_match_finite_differences_wvae() {
        let mut net = init_network(&small_wvae_arch(), 31).unwrap();
        let x = test_image(32, 4, 4, 1);
        let worst = finite_difference_check(&mut net, &x, 77, 0.05, 0.0, ReconLoss::Mse);
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn gradients_match_finite_differences_vae() {
        let mut net = init_network(&small_vae_arch(), 33).unwrap();
        let x = test_image(34, 4, 4, 1);
        let worst = finite_difference_check(&mut net, &x, 78, 0.0, 0.7, ReconLoss::Mse);
        assert!(worst <= 1e-4, "worst relative error {worst}");
        // The BCE path backpropagates correctly as well.
        let worst = finite_difference_check(&mut net, &x, 79, 0.0, 0.4, ReconLoss::Bce);
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn noise_scale_gradient_matches_chain_rule() {
        let mut net = init_network(&small_wvae_arch(), 41).unwrap();
        net.noise = NoiseScale::learnable(0.05).unwrap();
        let x = test_image(42, 4, 4, 1);
        let (_, tape) = net.forward_wvae(&x, 5).unwrap();
        let loss = net.loss_from_tape(&tape, 0.0, 0.0, ReconLoss::Mse).unwrap();
        let grads = net.backward(&tape, &loss).unwrap();

        // Independent recomputation: d total / d rho = sum_i g_i * eps_i * s
        // with g = analysis transform of the reconstruction gradient.
        let sample = tape.latent().unwrap();
        let n = x.len() as f64;
        let gimg: Vec<f64> = tape
            .output
            .iter()
            .zip(x.data())
            .map(|(&y, &t)| 2.0 * (y - t) / n)
            .collect();
        let gimg = Image2D::from_vec(4, 4, 1, gimg).unwrap();
        let (gc, _) = pyramid_flatten(&wavelet::dwt2d_multi(&gimg, 1).unwrap()).unwrap();
        let mut expect_a = 0.0;
        let mut expect_d = 0.0;
        for i in 0..gc.len() {
            if sample.detail_mask[i] {
                expect_d += gc[i] * sample.noise[i] * net.noise.scale_detail();
            } else {
                expect_a += gc[i] * sample.noise[i] * net.noise.scale_approx();
            }
        }
        assert!((grads.rho_approx - expect_a).abs() <= 1e-12);
        assert!((grads.rho_detail - expect_d).abs() <= 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.wvn");
        let mut net = init_network(&small_vae_arch(), 51).unwrap();
        net.noise.learnable = false;
        let mut adam = Adam::new(net.param_count(), 0.01);
        let mut params = net.params_flat();
        let grads: Vec<f64> = (0..params.len()).map(|i| (i as f64 * 0.1).sin()).collect();
        adam.step(&mut params, &grads);
        net.set_params_flat(&params).unwrap();

        save_checkpoint(&path, &net, &adam).unwrap();
        let (net2, adam2) = load_checkpoint(&path).unwrap();
        assert_eq!(net2.arch, net.arch);
        assert_eq!(net2.params_flat(), net.params_flat());
        assert!(!net2.noise.learnable);
        assert_eq!(adam2.step, 1);
        assert_eq!(adam2.first_moments(), adam.first_moments());
        assert_eq!(adam2.second_moments(), adam.second_moments());
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.wvn");
        let net = init_network(&small_wvae_arch(), 52).unwrap();
        let adam = Adam::new(net.param_count(), 0.01);
        save_checkpoint(&path, &net, &adam).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
