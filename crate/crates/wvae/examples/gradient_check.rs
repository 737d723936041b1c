//! Backpropagated gradients versus central finite differences for a small
//! wavelet model, parameter by parameter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wvae::image::Image2D;
use wvae::latent::{NoiseScale, ReconLoss};
use wvae::net::{init_network, ArchDescriptor, ModelKind};

fn main() -> wvae::Result<()> {
    let arch = ArchDescriptor {
        kind: ModelKind::Wvae,
        height: 8,
        width: 8,
        channels: 1,
        levels: 2,
        hidden: vec![12, 10],
        latent_dim: 0,
    };
    let mut net = init_network(&arch, 7)?;
    net.noise = NoiseScale::learnable(0.05)?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..1.0)).collect();
    let x = Image2D::from_vec(8, 8, 1, data)?;

    let (lambda, seed) = (1e-3, 11);
    let (_, tape) = net.forward(&x, seed)?;
    let loss = net.loss_from_tape(&tape, lambda, 0.0, ReconLoss::Mse)?;
    let analytic = net.backward(&tape, &loss)?.flat();

    let base = net.params_flat();
    let h = 1e-5;
    let mut worst = (0.0f64, 0usize);
    let mut checked = 0usize;
    for idx in 0..base.len() {
        let mut probe = base.clone();
        probe[idx] += h;
        net.set_params_flat(&probe)?;
        let (_, t) = net.forward(&x, seed)?;
        let plus = net.loss_from_tape(&t, lambda, 0.0, ReconLoss::Mse)?.total;
        probe[idx] = base[idx] - h;
        net.set_params_flat(&probe)?;
        let (_, t) = net.forward(&x, seed)?;
        let minus = net.loss_from_tape(&t, lambda, 0.0, ReconLoss::Mse)?.total;
        let numeric = (plus - minus) / (2.0 * h);
        if analytic[idx].abs() > 1e-8 {
            let rel = (numeric - analytic[idx]).abs() / numeric.abs().max(analytic[idx].abs());
            if rel > worst.0 {
                worst = (rel, idx);
            }
            checked += 1;
        }
    }

    let n = base.len();
    println!("checked {checked} of {n} parameters (|grad| > 1e-8)");
    println!(
        "worst relative error {:.3e} at parameter {}",
        worst.0, worst.1
    );
    // The last two parameters are the noise log-scales.
    println!(
        "noise log-scale gradients: approx {:.6e}, detail {:.6e}",
        analytic[n - 2],
        analytic[n - 1]
    );
    Ok(())
}
