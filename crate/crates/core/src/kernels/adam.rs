use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty folded into the gradient. Zero disables it.
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamMoments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> AdamMoments<T> {
    pub fn zeros(len: usize) -> Self {
        AdamMoments {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }

    pub(crate) fn zero_range(&mut self, range: std::ops::Range<usize>) {
        self.m[range.clone()].fill(T::zero());
        self.v[range].fill(T::zero());
    }
}

/// Rows of a parameter tensor that the optimizer must leave untouched.
#[derive(Clone, Copy, Debug)]
pub struct RowMask<'a> {
    pub frozen: &'a [bool],
    pub row_len: usize,
}

/// One Adam update with bias correction at step `t` (1-based).
///
/// Entries in frozen rows keep their parameter value and moments unchanged.
pub fn adam_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    moments: &mut AdamMoments<T>,
    hyper: &AdamHyper,
    t: u64,
    frozen: Option<RowMask<'_>>,
) -> Result<()> {
    if t == 0 {
        return Err(Error::InvalidArgument("Adam step index starts at 1".into()));
    }
    let len = params.len();
    if grads.len() != len || moments.m.len() != len || moments.v.len() != len {
        return Err(Error::shape("adam_step", &[len], &[grads.len()]));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i}")));
    }
    if let Some(mask) = frozen {
        if mask.row_len == 0 || mask.frozen.len() * mask.row_len != len {
            return Err(Error::shape(
                "adam_step row mask",
                &[len],
                &[mask.frozen.len() * mask.row_len],
            ));
        }
    }

    let b1 = T::from_f64_lossy(hyper.beta1);
    let b2 = T::from_f64_lossy(hyper.beta2);
    let one = T::one();
    let wd = T::from_f64_lossy(hyper.weight_decay);
    let eps = T::from_f64_lossy(hyper.eps);
    let lr = T::from_f64_lossy(hyper.lr);
    let c1 = T::from_f64_lossy(1.0 - hyper.beta1.powf(t as f64));
    let c2 = T::from_f64_lossy(1.0 - hyper.beta2.powf(t as f64));

    for j in 0..len {
        if let Some(mask) = frozen {
            if mask.frozen[j / mask.row_len] {
                continue;
            }
        }
        let mut g = grads[j];
        if hyper.weight_decay != 0.0 {
            g = g + wd * params[j];
        }
        let m = b1 * moments.m[j] + (one - b1) * g;
        let v = b2 * moments.v[j] + (one - b2) * g * g;
        moments.m[j] = m;
        moments.v[j] = v;
        let m_hat = m / c1;
        let v_hat = v / c2;
        params[j] = params[j] - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
