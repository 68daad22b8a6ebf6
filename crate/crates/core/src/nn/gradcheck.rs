//! Backprop against central differences.
//!
//! The loss is the MSE of a training-mode forward pass. Dropout masks are
//! drawn from an RNG reseeded with the same seed for every evaluation, so each
//! evaluation sees the same masks and batch-norm uses the batch statistics of
//! the perturbed pass, exactly what backprop differentiates.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{mse_loss, Mode, Network};
use crate::error::Result;

fn loss(net: &Network, inputs: &[ArrayView2<f64>], labels: &Array2<f64>, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trace = net.forward(inputs, &mut Mode::Train(&mut rng))?;
    Ok(mse_loss(trace.output(), labels)?.0)
}

/// Backprop gradient, flattened in [`Network::params_mut`] order.
pub fn analytic_gradient(net: &Network, inputs: &[ArrayView2<f64>], labels: &Array2<f64>, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trace = net.forward(inputs, &mut Mode::Train(&mut rng))?;
    let (_, g) = mse_loss(trace.output(), labels)?;
    Ok(net.backward(&trace, &g)?.flatten())
}

pub fn numeric_gradient(
    net: &Network,
    inputs: &[ArrayView2<f64>],
    labels: &Array2<f64>,
    seed: u64,
    h: f64,
) -> Result<Vec<f64>> {
    let mut probe = net.clone();
    let sizes = probe.param_sizes();
    let mut out = Vec::with_capacity(sizes.iter().sum());
    for (t, &n) in sizes.iter().enumerate() {
        for k in 0..n {
            let orig = probe.params_mut()[t][k];
            probe.params_mut()[t][k] = orig + h;
            let up = loss(&probe, inputs, labels, seed)?;
            probe.params_mut()[t][k] = orig - h;
            let down = loss(&probe, inputs, labels, seed)?;
            probe.params_mut()[t][k] = orig;
            out.push((up - down) / (2.0 * h));
        }
    }
    Ok(out)
}

/// Largest `|a - n| / max(|a|, |n|, 1e-4)` over the entries. The floor keeps
/// entries that are exactly zero in theory (a bias feeding batch norm) from
/// turning rounding noise into a large ratio.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    const FLOOR: f64 = 1e-4;
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(FLOOR))
        .fold(0.0, f64::max)
}

pub fn grad_check(net: &Network, inputs: &[ArrayView2<f64>], labels: &Array2<f64>, h: f64) -> Result<f64> {
    const SEED: u64 = 0x9e3779b97f4a7c15;
    let a = analytic_gradient(net, inputs, labels, SEED)?;
    let n = numeric_gradient(net, inputs, labels, SEED, h)?;
    Ok(max_relative_error(&a, &n))
}
