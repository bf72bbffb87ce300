//! Batch normalization over (n, h, w) per channel, with affine scale/shift
//! and exponential-moving-average running statistics.

use super::Tensor4;
use crate::error::{Error, Result};

/// Whether normalization uses batch statistics (training) or the stored
/// running statistics (inference).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Everything the backward pass needs, plus the batch statistics required to
/// advance the running averages.
#[derive(Debug)]
pub struct BnCache {
    mode: BnMode,
    /// Normalized values before the affine map, same layout as the input.
    xhat: Vec<f32>,
    /// Per-channel 1/√(var+ε) actually used for normalization.
    inv_std: Vec<f64>,
    /// Per-channel batch mean / biased batch variance (Train mode only).
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    /// Elements per channel (n·h·w).
    m: usize,
    shape: (usize, usize, usize, usize),
}

fn check_param_lengths(c: usize, gamma: &[f32], beta: &[f32], rm: &[f32], rv: &[f32]) -> Result<()> {
    for (name, len) in [
        ("gamma", gamma.len()),
        ("beta", beta.len()),
        ("running_mean", rm.len()),
        ("running_var", rv.len()),
    ] {
        if len != c {
            return Err(Error::InvalidArgument(format!(
                "batchnorm {name} has length {len}, expected {c} channels"
            )));
        }
    }
    Ok(())
}

/// Normalize `input` per channel and apply the affine map. Pure: running
/// statistics are read, never written; pair with [`BnCache::update_running`]
/// (or use [`batchnorm_forward_updating`]) to advance them during training.
pub fn batchnorm_forward(
    input: &Tensor4,
    gamma: &[f32],
    beta: &[f32],
    running_mean: &[f32],
    running_var: &[f32],
    mode: BnMode,
    epsilon: f64,
) -> Result<(Tensor4, BnCache)> {
    let (n, c, h, w) = input.shape();
    check_param_lengths(c, gamma, beta, running_mean, running_var)?;
    if epsilon <= 0.0 {
        return Err(Error::InvalidArgument(format!("batchnorm epsilon must be > 0, got {epsilon}")));
    }
    input.ensure_finite("batchnorm_forward input")?;
    let m = n * h * w;
    if mode == BnMode::Train && m < 2 {
        return Err(Error::InvalidArgument(format!(
            "batchnorm in Train mode needs n·h·w >= 2 per channel, got {m}"
        )));
    }

    let hw = h * w;
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    let mut inv_std = vec![0.0f64; c];
    match mode {
        BnMode::Train => {
            for ci in 0..c {
                let mut sum = 0.0f64;
                for ni in 0..n {
                    sum += input.plane(ni, ci).iter().map(|&v| v as f64).sum::<f64>();
                }
                let mu = sum / m as f64;
                let mut sq = 0.0f64;
                for ni in 0..n {
                    sq += input
                        .plane(ni, ci)
                        .iter()
                        .map(|&v| {
                            let d = v as f64 - mu;
                            d * d
                        })
                        .sum::<f64>();
                }
                mean[ci] = mu;
                var[ci] = sq / m as f64;
                inv_std[ci] = 1.0 / (var[ci] + epsilon).sqrt();
            }
        }
        BnMode::Eval => {
            for ci in 0..c {
                mean[ci] = running_mean[ci] as f64;
                // Stored variances are kept positive by construction; clamp
                // anyway so a hand-edited checkpoint cannot divide by zero.
                let v = (running_var[ci] as f64).max(0.0);
                var[ci] = v;
                inv_std[ci] = 1.0 / (v + epsilon).sqrt();
            }
        }
    }

    let mut out = Tensor4::zeros(n, c, h, w);
    let mut xhat = vec![0.0f32; input.len()];
    for ni in 0..n {
        for ci in 0..c {
            let src = input.plane(ni, ci);
            let dst = out.plane_mut(ni, ci);
            let xh = &mut xhat[(ni * c + ci) * hw..(ni * c + ci) * hw + hw];
            let (mu, istd) = (mean[ci], inv_std[ci]);
            let (g, b) = (gamma[ci] as f64, beta[ci] as f64);
            for ((d, s), x) in dst.iter_mut().zip(src).zip(xh.iter_mut()) {
                let norm = (*s as f64 - mu) * istd;
                *x = norm as f32;
                *d = (g * norm + b) as f32;
            }
        }
    }

    let cache = BnCache {
        mode,
        xhat,
        inv_std,
        batch_mean: if mode == BnMode::Train { mean } else { Vec::new() },
        batch_var: if mode == BnMode::Train { var } else { Vec::new() },
        m,
        shape: (n, c, h, w),
    };
    Ok((out, cache))
}

impl BnCache {
    /// Advance running statistics by one exponential-moving-average step:
    /// `running ← (1−momentum)·running + momentum·batch`, using the unbiased
    /// variance (factor m/(m−1)) for the running variance. Train mode only.
    pub fn update_running(&self, running_mean: &mut [f32], running_var: &mut [f32], momentum: f64) {
        assert_eq!(self.mode, BnMode::Train, "running stats only update in Train mode");
        let unbias = self.m as f64 / (self.m as f64 - 1.0);
        for ci in 0..running_mean.len() {
            let rm = running_mean[ci] as f64;
            let rv = running_var[ci] as f64;
            running_mean[ci] = ((1.0 - momentum) * rm + momentum * self.batch_mean[ci]) as f32;
            running_var[ci] = ((1.0 - momentum) * rv + momentum * self.batch_var[ci] * unbias) as f32;
        }
    }
}

/// The training-step form: normalize and advance the running statistics.
pub fn batchnorm_forward_updating(
    input: &Tensor4,
    gamma: &[f32],
    beta: &[f32],
    running_mean: &mut [f32],
    running_var: &mut [f32],
    mode: BnMode,
    momentum: f64,
    epsilon: f64,
) -> Result<(Tensor4, BnCache)> {
    let (out, cache) =
        batchnorm_forward(input, gamma, beta, running_mean, running_var, mode, epsilon)?;
    if mode == BnMode::Train {
        cache.update_running(running_mean, running_var, momentum);
    }
    Ok((out, cache))
}

/// Backward pass. Returns gradients w.r.t. the input, gamma and beta.
pub fn batchnorm_backward(
    grad_out: &Tensor4,
    cache: &BnCache,
    gamma: &[f32],
) -> Result<(Tensor4, Vec<f32>, Vec<f32>)> {
    let (n, c, h, w) = cache.shape;
    if grad_out.shape() != cache.shape {
        return Err(Error::ShapeMismatch {
            context: "batchnorm_backward grad_out",
            lhs: grad_out.shape_string(),
            rhs: format!("({n},{c},{h},{w})"),
        });
    }
    let hw = h * w;
    let m = cache.m as f64;
    let mut grad_in = Tensor4::zeros(n, c, h, w);
    let mut grad_gamma = vec![0.0f32; c];
    let mut grad_beta = vec![0.0f32; c];
    for ci in 0..c {
        let mut dg = 0.0f64;
        let mut db = 0.0f64;
        for ni in 0..n {
            let go = grad_out.plane(ni, ci);
            let xh = &cache.xhat[(ni * c + ci) * hw..(ni * c + ci) * hw + hw];
            for (&g, &x) in go.iter().zip(xh) {
                dg += g as f64 * x as f64;
                db += g as f64;
            }
        }
        grad_gamma[ci] = dg as f32;
        grad_beta[ci] = db as f32;
        let scale = gamma[ci] as f64 * cache.inv_std[ci];
        match cache.mode {
            BnMode::Train => {
                let mean_dy = db / m;
                let mean_dyx = dg / m;
                for ni in 0..n {
                    let base = (ni * c + ci) * hw;
                    let go = grad_out.plane(ni, ci);
                    let dst = grad_in.plane_mut(ni, ci);
                    for idx in 0..hw {
                        let g = go[idx] as f64;
                        let x = cache.xhat[base + idx] as f64;
                        dst[idx] = (scale * (g - mean_dy - x * mean_dyx)) as f32;
                    }
                }
            }
            BnMode::Eval => {
                // Running statistics are constants, so the map is affine.
                for ni in 0..n {
                    let go = grad_out.plane(ni, ci);
                    let dst = grad_in.plane_mut(ni, ci);
                    for (d, &g) in dst.iter_mut().zip(go) {
                        *d = (g as f64 * scale) as f32;
                    }
                }
            }
        }
    }
    Ok((grad_in, grad_gamma, grad_beta))
}
