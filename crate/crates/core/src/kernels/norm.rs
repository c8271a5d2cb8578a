use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchNormConfig {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    x_hat: Vec<T>,
    inv_std: Vec<T>,
    shape: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads<T> {
    pub grad_input: Tensor<T>,
    pub grad_gamma: Tensor<T>,
    pub grad_beta: Tensor<T>,
}

/// `(batch, channels, spatial)` for `[B, C]` or `[B, C, H, W]` inputs.
fn layout<T: Real>(x: &Tensor<T>, channels: usize) -> Result<(usize, usize, usize)> {
    let sh = x.shape();
    let spatial = match sh.len() {
        2 => 1,
        4 => sh[2] * sh[3],
        _ => return Err(Error::shape("batchnorm", &[0, channels, 0, 0], sh)),
    };
    if sh[1] != channels {
        return Err(Error::shape("batchnorm", &[sh[0], channels], &sh[..2]));
    }
    if sh[0] == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok((sh[0], channels, spatial))
}

fn live(mask: Option<&[bool]>, c: usize) -> bool {
    mask.map_or(true, |m| !m[c])
}

/// Training-mode batch norm: normalizes with batch statistics and folds them
/// into the running estimates with the configured momentum (unbiased
/// variance). Masked channels output exact zeros and leave running
/// statistics untouched.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    cfg: &BatchNormConfig,
    mask: Option<&[bool]>,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (b, c, sp) = layout(x, gamma.len())?;
    let n = (b * sp) as f64;
    let xd = x.data();
    let mut y = vec![T::zero(); xd.len()];
    let mut x_hat = vec![T::zero(); xd.len()];
    let mut inv_std = vec![T::zero(); c];
    let idx = |bb: usize, ch: usize, s: usize| (bb * c + ch) * sp + s;

    for ch in 0..c {
        if !live(mask, ch) {
            continue;
        }
        let mut sum = 0.0;
        for bb in 0..b {
            for s in 0..sp {
                sum += xd[idx(bb, ch, s)].to_f64_lossy();
            }
        }
        let mean = sum / n;
        let mut sq = 0.0;
        for bb in 0..b {
            for s in 0..sp {
                let d = xd[idx(bb, ch, s)].to_f64_lossy() - mean;
                sq += d * d;
            }
        }
        let var = sq / n;
        let istd = 1.0 / (var + cfg.eps).sqrt();
        inv_std[ch] = T::from_f64_lossy(istd);
        let (g, be) = (gamma.data()[ch], beta.data()[ch]);
        let mean_t = T::from_f64_lossy(mean);
        for bb in 0..b {
            for s in 0..sp {
                let j = idx(bb, ch, s);
                let xh = (xd[j] - mean_t) * inv_std[ch];
                x_hat[j] = xh;
                y[j] = g * xh + be;
            }
        }
        let unbiased = if n > 1.0 { var * n / (n - 1.0) } else { var };
        let mom = cfg.momentum;
        let rm = &mut running_mean.data_mut()[ch];
        *rm = T::from_f64_lossy((1.0 - mom) * rm.to_f64_lossy() + mom * mean);
        let rv = &mut running_var.data_mut()[ch];
        *rv = T::from_f64_lossy((1.0 - mom) * rv.to_f64_lossy() + mom * unbiased);
    }

    Ok((
        Tensor::from_vec(x.shape(), y)?,
        BatchNormCache {
            x_hat,
            inv_std,
            shape: x.shape().to_vec(),
        },
    ))
}

/// Inference-mode batch norm with running statistics.
pub fn batchnorm_inference<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    cfg: &BatchNormConfig,
    mask: Option<&[bool]>,
) -> Result<Tensor<T>> {
    let (b, c, sp) = layout(x, gamma.len())?;
    let mut y = vec![T::zero(); x.len()];
    let eps = T::from_f64_lossy(cfg.eps);
    for ch in (0..c).filter(|&ch| live(mask, ch)) {
        let scale = gamma.data()[ch] / (running_var.data()[ch] + eps).sqrt();
        let shift = beta.data()[ch] - running_mean.data()[ch] * scale;
        for bb in 0..b {
            let base = (bb * c + ch) * sp;
            for s in 0..sp {
                y[base + s] = x.data()[base + s] * scale + shift;
            }
        }
    }
    Tensor::from_vec(x.shape(), y)
}

pub fn batchnorm_backward<T: Real>(
    grad_out: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &BatchNormCache<T>,
    mask: Option<&[bool]>,
) -> Result<BatchNormGrads<T>> {
    grad_out.expect_shape("batchnorm_backward", &cache.shape)?;
    let (b, c, sp) = layout(grad_out, gamma.len())?;
    let n = T::from_usize(b * sp).unwrap();
    let dy = grad_out.data();
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let idx = |bb: usize, ch: usize, s: usize| (bb * c + ch) * sp + s;

    for ch in (0..c).filter(|&ch| live(mask, ch)) {
        let (mut sum_dy, mut sum_dy_xh) = (T::zero(), T::zero());
        for bb in 0..b {
            for s in 0..sp {
                let j = idx(bb, ch, s);
                sum_dy = sum_dy + dy[j];
                sum_dy_xh = sum_dy_xh + dy[j] * cache.x_hat[j];
            }
        }
        dgamma[ch] = sum_dy_xh;
        dbeta[ch] = sum_dy;
        let k = gamma.data()[ch] * cache.inv_std[ch] / n;
        for bb in 0..b {
            for s in 0..sp {
                let j = idx(bb, ch, s);
                dx[j] = k * (n * dy[j] - sum_dy - cache.x_hat[j] * sum_dy_xh);
            }
        }
    }

    Ok(BatchNormGrads {
        grad_input: Tensor::from_vec(grad_out.shape(), dx)?,
        grad_gamma: Tensor::from_vec(&[c], dgamma)?,
        grad_beta: Tensor::from_vec(&[c], dbeta)?,
    })
}
