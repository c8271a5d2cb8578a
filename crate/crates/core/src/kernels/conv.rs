use serde::{Deserialize, Serialize};

use super::adam::AdamMoments;
use super::map_samples;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Multiply-accumulates executed by a convolution layer, split by phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacCounters {
    pub forward: u64,
    /// Error propagation towards the layer input.
    pub error: u64,
    /// Weight-gradient accumulation.
    pub weight_grad: u64,
}

impl MacCounters {
    pub fn total(&self) -> u64 {
        self.forward + self.error + self.weight_grad
    }
}

impl std::ops::AddAssign for MacCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.forward += rhs.forward;
        self.error += rhs.error;
        self.weight_grad += rhs.weight_grad;
    }
}

impl std::ops::Sub for MacCounters {
    type Output = MacCounters;
    fn sub(self, rhs: Self) -> Self {
        MacCounters {
            forward: self.forward - rhs.forward,
            error: self.error - rhs.error,
            weight_grad: self.weight_grad - rhs.weight_grad,
        }
    }
}

/// Parameters and optimizer state of one convolution + batch-norm block.
///
/// `filter_mask[o] == true` marks output filter `o` as pruned. A pruned
/// filter has zero weights, bias, gamma and beta, zero Adam moments, and is
/// skipped by every kernel and by the optimizer from then on.
#[derive(Clone, Debug)]
pub struct ConvLayerState<T> {
    /// `[O, I, k, k]`
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    pub bn_gamma: Tensor<T>,
    pub bn_beta: Tensor<T>,
    pub bn_running_mean: Tensor<T>,
    pub bn_running_var: Tensor<T>,
    pub weights_moments: AdamMoments<T>,
    pub bias_moments: AdamMoments<T>,
    pub gamma_moments: AdamMoments<T>,
    pub beta_moments: AdamMoments<T>,
    pub filter_mask: Vec<bool>,
    pub stride: usize,
    pub counters: MacCounters,
}

impl<T: Real> ConvLayerState<T> {
    /// Builds a layer around the given weights with zero bias, unit gamma,
    /// zero beta, unit running variance and fresh optimizer moments.
    pub fn from_weights(weights: Tensor<T>, stride: usize) -> Result<Self> {
        weights.expect_rank("ConvLayerState", 4)?;
        let shape = weights.shape();
        if shape[2] != shape[3] {
            return Err(Error::Geometry(format!("kernel must be square, got {shape:?}")));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be positive".into()));
        }
        let o = shape[0];
        Ok(ConvLayerState {
            weights_moments: AdamMoments::zeros(weights.len()),
            bias_moments: AdamMoments::zeros(o),
            gamma_moments: AdamMoments::zeros(o),
            beta_moments: AdamMoments::zeros(o),
            weights,
            bias: Tensor::zeros(&[o]),
            bn_gamma: Tensor::full(&[o], T::one()),
            bn_beta: Tensor::zeros(&[o]),
            bn_running_mean: Tensor::zeros(&[o]),
            bn_running_var: Tensor::full(&[o], T::one()),
            filter_mask: vec![false; o],
            stride,
            counters: MacCounters::default(),
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn filter_len(&self) -> usize {
        self.in_channels() * self.kernel() * self.kernel()
    }

    pub fn filter_weights(&self, o: usize) -> &[T] {
        let len = self.filter_len();
        &self.weights.data()[o * len..(o + 1) * len]
    }

    pub fn unmasked_filters(&self) -> usize {
        self.filter_mask.iter().filter(|m| !**m).count()
    }

    /// Zeroes filter `o` with everything attached to it and marks it pruned.
    /// Returns `false` if the filter was already masked.
    pub fn mask_filter(&mut self, o: usize) -> bool {
        if self.filter_mask[o] {
            return false;
        }
        let len = self.filter_len();
        self.weights.data_mut()[o * len..(o + 1) * len].fill(T::zero());
        self.weights_moments.zero_range(o * len..(o + 1) * len);
        self.bias.data_mut()[o] = T::zero();
        self.bn_gamma.data_mut()[o] = T::zero();
        self.bn_beta.data_mut()[o] = T::zero();
        self.bias_moments.zero_range(o..o + 1);
        self.gamma_moments.zero_range(o..o + 1);
        self.beta_moments.zero_range(o..o + 1);
        self.filter_mask[o] = true;
        true
    }
}

/// Output side of a valid (unpadded) convolution.
pub fn conv_output_side(n: usize, k: usize, stride: usize) -> Result<usize> {
    if stride == 0 || k == 0 || n < k || (n - k) % stride != 0 {
        return Err(Error::NonIntegralOutput {
            op: "conv2d",
            n,
            k,
            stride,
        });
    }
    Ok((n - k) / stride + 1)
}

struct Geom {
    batch: usize,
    i: usize,
    o: usize,
    n: usize,
    m: usize,
    k: usize,
    s: usize,
}

fn check_geometry<T: Real>(
    input: &Tensor<T>,
    layer: &ConvLayerState<T>,
    stride: usize,
    input_mask: Option<&[bool]>,
) -> Result<Geom> {
    input.expect_rank("conv2d", 4)?;
    let sh = input.shape();
    let (batch, i, n) = (sh[0], sh[1], sh[2]);
    if sh[3] != n {
        return Err(Error::Geometry(format!("input maps must be square, got {sh:?}")));
    }
    if i != layer.in_channels() {
        return Err(Error::shape(
            "conv2d",
            &[batch, layer.in_channels(), n, n],
            sh,
        ));
    }
    if let Some(mask) = input_mask {
        if mask.len() != i {
            return Err(Error::shape("conv2d input mask", &[i], &[mask.len()]));
        }
    }
    let k = layer.kernel();
    let m = conv_output_side(n, k, stride)?;
    Ok(Geom {
        batch,
        i,
        o: layer.out_channels(),
        n,
        m,
        k,
        s: stride,
    })
}

/// Valid convolution with bias. Pruned output filters produce all-zero
/// channels; input channels flagged in `input_mask` are known to be zero and
/// are skipped. Returns the output `[B, O, M, M]` and the number of MACs
/// executed.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    layer: &ConvLayerState<T>,
    stride: usize,
    input_mask: Option<&[bool]>,
) -> Result<(Tensor<T>, u64)> {
    let g = check_geometry(input, layer, stride, input_mask)?;
    let in_len = g.i * g.n * g.n;
    let out_len = g.o * g.m * g.m;
    let w = layer.weights.data();
    let bias = layer.bias.data();
    let x = input.data();
    let in_live = |c: usize| input_mask.map_or(true, |mk| !mk[c]);

    let per_sample = map_samples(g.batch, |b| {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let mut out = vec![T::zero(); out_len];
        let mut macs = 0u64;
        for o in 0..g.o {
            if layer.filter_mask[o] {
                continue;
            }
            let plane = &mut out[o * g.m * g.m..(o + 1) * g.m * g.m];
            plane.fill(bias[o]);
            for c in (0..g.i).filter(|&c| in_live(c)) {
                let xin = &xb[c * g.n * g.n..(c + 1) * g.n * g.n];
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let wv = w[((o * g.i + c) * g.k + ky) * g.k + kx];
                        for y in 0..g.m {
                            let row = (y * g.s + ky) * g.n + kx;
                            let orow = &mut plane[y * g.m..(y + 1) * g.m];
                            for (xo, acc) in orow.iter_mut().enumerate() {
                                *acc = *acc + wv * xin[row + xo * g.s];
                            }
                        }
                    }
                }
                macs += (g.m * g.m * g.k * g.k) as u64;
            }
        }
        (out, macs)
    });

    let mut data = Vec::with_capacity(g.batch * out_len);
    let mut macs = 0;
    for (out, n) in per_sample {
        data.extend_from_slice(&out);
        macs += n;
    }
    Ok((Tensor::from_vec(&[g.batch, g.o, g.m, g.m], data)?, macs))
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub grad_input: Tensor<T>,
    pub grad_weights: Tensor<T>,
    pub grad_bias: Tensor<T>,
    pub error_macs: u64,
    pub weight_grad_macs: u64,
}

/// Backward pass of [`conv2d_forward`].
///
/// Error propagation runs as a full correlation of the stride-dilated,
/// `k-1`-padded output error with the flipped kernels, producing every
/// `N x N` input position with `k^2` MACs per live (input, output) channel
/// pair. The weight gradient accumulates `M^2` products per kernel tap.
/// Pruned output filters and masked input channels are skipped entirely, so
/// their gradients stay exactly zero.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    layer: &ConvLayerState<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    input_mask: Option<&[bool]>,
) -> Result<ConvGrads<T>> {
    let g = check_geometry(input, layer, stride, input_mask)?;
    grad_out.expect_shape("conv2d_backward", &[g.batch, g.o, g.m, g.m])?;
    let in_len = g.i * g.n * g.n;
    let out_len = g.o * g.m * g.m;
    let wlen = g.o * g.i * g.k * g.k;
    let pad = g.n + g.k - 1;
    let w = layer.weights.data();
    let x = input.data();
    let dy = grad_out.data();
    let in_live = |c: usize| input_mask.map_or(true, |mk| !mk[c]);

    let per_sample = map_samples(g.batch, |b| {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let gb = &dy[b * out_len..(b + 1) * out_len];
        let mut gin = vec![T::zero(); in_len];
        let mut dw = vec![T::zero(); wlen];
        let mut db = vec![T::zero(); g.o];
        let mut gpad = vec![T::zero(); pad * pad];
        let (mut err_macs, mut dw_macs) = (0u64, 0u64);

        for o in 0..g.o {
            if layer.filter_mask[o] {
                continue;
            }
            let gplane = &gb[o * g.m * g.m..(o + 1) * g.m * g.m];
            db[o] = gplane.iter().copied().sum();

            for c in (0..g.i).filter(|&c| in_live(c)) {
                let xin = &xb[c * g.n * g.n..(c + 1) * g.n * g.n];
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let mut acc = T::zero();
                        for y in 0..g.m {
                            let row = (y * g.s + ky) * g.n + kx;
                            for xo in 0..g.m {
                                acc = acc + gplane[y * g.m + xo] * xin[row + xo * g.s];
                            }
                        }
                        dw[((o * g.i + c) * g.k + ky) * g.k + kx] = acc;
                    }
                }
                dw_macs += (g.m * g.m * g.k * g.k) as u64;
            }

            gpad.fill(T::zero());
            for y in 0..g.m {
                for xo in 0..g.m {
                    gpad[(g.k - 1 + y * g.s) * pad + g.k - 1 + xo * g.s] = gplane[y * g.m + xo];
                }
            }
            for c in (0..g.i).filter(|&c| in_live(c)) {
                let gi = &mut gin[c * g.n * g.n..(c + 1) * g.n * g.n];
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let wv = w[((o * g.i + c) * g.k + (g.k - 1 - ky)) * g.k + (g.k - 1 - kx)];
                        for py in 0..g.n {
                            let src = &gpad[(py + ky) * pad + kx..(py + ky) * pad + kx + g.n];
                            let dst = &mut gi[py * g.n..(py + 1) * g.n];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d = *d + wv * s;
                            }
                        }
                    }
                }
                err_macs += (g.n * g.n * g.k * g.k) as u64;
            }
        }
        (gin, dw, db, err_macs, dw_macs)
    });

    let mut grad_input = Vec::with_capacity(g.batch * in_len);
    let mut grad_w = vec![T::zero(); wlen];
    let mut grad_b = vec![T::zero(); g.o];
    let (mut error_macs, mut weight_grad_macs) = (0, 0);
    for (gin, dw, db, em, wm) in per_sample {
        grad_input.extend_from_slice(&gin);
        for (acc, v) in grad_w.iter_mut().zip(dw) {
            *acc = *acc + v;
        }
        for (acc, v) in grad_b.iter_mut().zip(db) {
            *acc = *acc + v;
        }
        error_macs += em;
        weight_grad_macs += wm;
    }

    Ok(ConvGrads {
        grad_input: Tensor::from_vec(&[g.batch, g.i, g.n, g.n], grad_input)?,
        grad_weights: Tensor::from_vec(layer.weights.shape(), grad_w)?,
        grad_bias: Tensor::from_vec(&[g.o], grad_b)?,
        error_macs,
        weight_grad_macs,
    })
}
