//! Reparameterized latents and training objectives: the diagonal-Gaussian
//! baseline with its closed-form KL, and the wavelet-coefficient latent with
//! per-band learnable noise scales and an L1 sparsity penalty on the detail
//! coefficients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval;
use crate::image::Image2D;

/// Diagonal Gaussian posterior parameters (means and log-variances).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mean: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl GaussianPosterior {
    pub fn new(mean: Vec<f64>, logvar: Vec<f64>) -> Result<Self> {
        if mean.len() != logvar.len() || mean.is_empty() {
            return Err(Error::Shape(format!(
                "mean length {} and logvar length {} must match and be nonzero",
                mean.len(),
                logvar.len()
            )));
        }
        Ok(GaussianPosterior { mean, logvar })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Per-band noise scales. The free parameters are the log-scales, so the
/// scales themselves stay positive under gradient updates; the derived
/// scales are cached and refreshed only when a log-scale changes, which
/// keeps a frozen scale at its configured value bit-exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseScale {
    pub rho_approx: f64,
    pub rho_detail: f64,
    s_approx: f64,
    s_detail: f64,
    pub learnable: bool,
}

impl NoiseScale {
    /// Both bands share the initial scale `s`; updates to the log-scales are
    /// allowed during training.
    pub fn learnable(s: f64) -> Result<Self> {
        Self::with_scale(s, true)
    }

    /// Frozen scales: the log-scales are excluded from parameter updates.
    pub fn fixed(s: f64) -> Result<Self> {
        Self::with_scale(s, false)
    }

    fn with_scale(s: f64, learnable: bool) -> Result<Self> {
        if s <= 0.0 || !s.is_finite() {
            return Err(Error::Domain(format!(
                "noise scale must be positive, got {s}"
            )));
        }
        Ok(NoiseScale {
            rho_approx: s.ln(),
            rho_detail: s.ln(),
            s_approx: s,
            s_detail: s,
            learnable,
        })
    }

    pub fn from_log_scales(rho_approx: f64, rho_detail: f64, learnable: bool) -> Self {
        NoiseScale {
            rho_approx,
            rho_detail,
            s_approx: rho_approx.exp(),
            s_detail: rho_detail.exp(),
            learnable,
        }
    }

    /// Overwrite the log-scales; the cached scales are recomputed only for
    /// values that actually changed.
    pub fn set_log_scales(&mut self, rho_approx: f64, rho_detail: f64) {
        if rho_approx != self.rho_approx {
            self.rho_approx = rho_approx;
            self.s_approx = rho_approx.exp();
        }
        if rho_detail != self.rho_detail {
            self.rho_detail = rho_detail;
            self.s_detail = rho_detail.exp();
        }
    }

    pub fn scale_approx(&self) -> f64 {
        self.s_approx
    }

    pub fn scale_detail(&self) -> f64 {
        self.s_detail
    }

    #[inline]
    pub fn scale_for(&self, is_detail: bool) -> f64 {
        if is_detail {
            self.s_detail
        } else {
            self.s_approx
        }
    }
}

/// A noisy draw of the wavelet latent, with the noise retained so gradients
/// can be propagated back through the sampling step.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    /// Deterministic coefficients predicted by the encoder.
    pub coeffs: Vec<f64>,
    /// Standard normal draws, one per coefficient.
    pub noise: Vec<f64>,
    /// coeffs + scale(band) * noise, fed to the synthesis transform.
    pub noisy: Vec<f64>,
    /// True where the coefficient belongs to a detail band.
    pub detail_mask: Vec<bool>,
}

fn standard_normal_draws(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Draw z = mean + exp(logvar/2) * eps with eps ~ N(0, 1) from the seeded
/// generator. Returns (z, eps); the draws are deterministic given the seed.
pub fn reparameterize_gaussian(post: &GaussianPosterior, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let eps = standard_normal_draws(post.dim(), seed);
    let z = post
        .mean
        .iter()
        .zip(&post.logvar)
        .zip(&eps)
        .map(|((&m, &lv), &e)| m + (lv / 2.0).exp() * e)
        .collect();
    (z, eps)
}

/// Perturb encoder-predicted coefficients with band-dependent noise:
/// noisy[i] = coeffs[i] + scale(band i) * eps[i].
pub fn reparameterize_wavelet(
    coeffs: &[f64],
    detail_mask: &[bool],
    scales: &NoiseScale,
    seed: u64,
) -> Result<LatentSample> {
    if coeffs.len() != detail_mask.len() {
        return Err(Error::Shape(format!(
            "coefficient length {} and mask length {} must match",
            coeffs.len(),
            detail_mask.len()
        )));
    }
    let noise = standard_normal_draws(coeffs.len(), seed);
    let noisy = coeffs
        .iter()
        .zip(detail_mask)
        .zip(&noise)
        .map(|((&c, &is_detail), &e)| c + scales.scale_for(is_detail) * e)
        .collect();
    Ok(LatentSample {
        coeffs: coeffs.to_vec(),
        noise,
        noisy,
        detail_mask: detail_mask.to_vec(),
    })
}

/// Closed-form KL divergence from a diagonal Gaussian posterior to the
/// standard normal prior: sum of (mean^2 + var - log var - 1) / 2.
pub fn kl_gaussian_standard(post: &GaussianPosterior) -> f64 {
    post.mean
        .iter()
        .zip(&post.logvar)
        .map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - lv - 1.0))
        .sum()
}

/// Log-density of coefficients under the sparsity prior
/// p(c) = (lambda/2) exp(-lambda |c|): sum of log(lambda/2) - lambda |c|.
pub fn laplace_log_prior(coeffs: &[f64], lambda: f64) -> Result<f64> {
    if lambda <= 0.0 || !lambda.is_finite() {
        return Err(Error::Domain(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    Ok(coeffs
        .iter()
        .map(|c| (lambda / 2.0).ln() - lambda * c.abs())
        .sum())
}

/// Weighted L1 penalty lambda * sum |coeffs[i]| over the detail entries;
/// approximation coefficients are excluded.
pub fn l1_detail_penalty(coeffs: &[f64], detail_mask: &[bool], lambda: f64) -> Result<f64> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::Domain(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    if coeffs.len() != detail_mask.len() {
        return Err(Error::Shape(format!(
            "coefficient length {} and mask length {} must match",
            coeffs.len(),
            detail_mask.len()
        )));
    }
    Ok(lambda * detail_l1_sum(coeffs, detail_mask))
}

fn detail_l1_sum(coeffs: &[f64], detail_mask: &[bool]) -> f64 {
    coeffs
        .iter()
        .zip(detail_mask)
        .filter(|(_, &is_detail)| is_detail)
        .map(|(c, _)| c.abs())
        .sum()
}

/// Which reconstruction likelihood the objective uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconLoss {
    Mse,
    Bce,
}

impl std::str::FromStr for ReconLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(ReconLoss::Mse),
            "bce" => Ok(ReconLoss::Bce),
            other => Err(Error::Config(format!(
                "unknown reconstruction loss {other:?}"
            ))),
        }
    }
}

/// One objective evaluation. `regularizer` holds the unweighted term (the
/// detail L1 sum, or the KL divergence for the baseline) so that
/// `total = reconstruction + active_weight * regularizer` holds exactly.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub regularizer: f64,
    pub total: f64,
    pub lambda: f64,
    pub beta: f64,
    pub recon_kind: ReconLoss,
}

fn recon_term(kind: ReconLoss, x: &Image2D, x_hat: &Image2D) -> Result<f64> {
    match kind {
        ReconLoss::Mse => eval::mse(x, x_hat),
        ReconLoss::Bce => eval::bce(x, x_hat),
    }
}

/// Objective for the wavelet latent: reconstruction plus
/// lambda * sum of |detail coefficients| (taken on the deterministic encoder
/// outputs, not the noisy draw).
pub fn wvae_loss(
    x: &Image2D,
    x_hat: &Image2D,
    coeffs: &[f64],
    detail_mask: &[bool],
    lambda: f64,
    recon_kind: ReconLoss,
) -> Result<LossBreakdown> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::Domain(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    if coeffs.len() != detail_mask.len() {
        return Err(Error::Shape(
            "coefficient and mask lengths must match".into(),
        ));
    }
    let reconstruction = recon_term(recon_kind, x, x_hat)?;
    let regularizer = detail_l1_sum(coeffs, detail_mask);
    Ok(LossBreakdown {
        reconstruction,
        regularizer,
        total: reconstruction + lambda * regularizer,
        lambda,
        beta: 0.0,
        recon_kind,
    })
}

/// Objective for the Gaussian baseline: reconstruction plus beta * KL.
pub fn vae_loss(
    x: &Image2D,
    x_hat: &Image2D,
    post: &GaussianPosterior,
    beta: f64,
    recon_kind: ReconLoss,
) -> Result<LossBreakdown> {
    if beta < 0.0 || !beta.is_finite() {
        return Err(Error::Domain(format!(
            "beta must be nonnegative, got {beta}"
        )));
    }
    let reconstruction = recon_term(recon_kind, x, x_hat)?;
    let regularizer = kl_gaussian_standard(post);
    Ok(LossBreakdown {
        reconstruction,
        regularizer,
        total: reconstruction + beta * regularizer,
        lambda: 0.0,
        beta,
        recon_kind,
    })
}
