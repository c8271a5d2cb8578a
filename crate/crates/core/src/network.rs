//! Sequential conv/pool/linear networks.
//!
//! Every convolution is followed by batch norm and ReLU. Hidden linear layers
//! are followed by ReLU; the last linear layer produces the logits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::criteria::ActivationAccumulator;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{
    adam_step, batchnorm_backward, batchnorm_forward, batchnorm_inference, conv2d_backward,
    conv2d_forward, conv_output_side, linear_backward, linear_forward, maxpool2x2_backward,
    maxpool2x2_forward, relu_backward, relu_forward, softmax_cross_entropy, AdamHyper,
    AdamMoments, BatchNormCache, BatchNormConfig, ConvLayerState, MacCounters, PoolCache, RowMask,
};
use crate::tensor::{Real, Tensor};

fn default_stride() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "default_stride")]
        stride: usize,
    },
    Pool,
    Linear {
        out: usize,
    },
}

impl LayerSpec {
    pub fn conv(out_channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec::Conv {
            out_channels,
            kernel,
            stride,
        }
    }
}

/// The desk-scale reference architecture: conv8 -> conv16 -> pool -> conv16
/// -> conv32 -> pool -> linear, all 3x3 stride 1.
pub fn vgg_micro(num_classes: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv(8, 3, 1),
        LayerSpec::conv(16, 3, 1),
        LayerSpec::Pool,
        LayerSpec::conv(16, 3, 1),
        LayerSpec::conv(32, 3, 1),
        LayerSpec::Pool,
        LayerSpec::Linear { out: num_classes },
    ]
}

#[derive(Clone, Debug)]
pub struct LinearLayer<T> {
    /// `[out, in]`
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    pub weights_moments: AdamMoments<T>,
    pub bias_moments: AdamMoments<T>,
}

#[derive(Clone, Debug)]
pub enum Layer<T> {
    Conv(ConvLayerState<T>),
    Pool,
    Linear(LinearLayer<T>),
}

/// Loss and correct predictions of one training batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub correct: usize,
    pub batch: usize,
}

enum Cache<T> {
    Conv {
        input: Tensor<T>,
        bn: BatchNormCache<T>,
        pre_relu: Tensor<T>,
    },
    Pool(PoolCache),
    Linear {
        input: Tensor<T>,
        /// Shape before flattening, when the input came from feature maps.
        unflattened: Option<Vec<usize>>,
        pre_relu: Option<Tensor<T>>,
    },
}

#[derive(Clone, Debug)]
pub struct Network<T> {
    input_shape: [usize; 3],
    layers: Vec<Layer<T>>,
    num_classes: usize,
    bn: BatchNormConfig,
    step: u64,
}

impl<T: Real> Network<T> {
    /// Builds and initializes a network (Kaiming-normal weights, zero biases)
    /// for `[C, H, W]` inputs.
    pub fn new(
        input_shape: [usize; 3],
        specs: &[LayerSpec],
        num_classes: usize,
        bn: BatchNormConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = |n: usize, std: f64| -> Vec<T> {
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    T::from_f64_lossy(z * std)
                })
                .collect()
        };

        let [mut c, mut h, mut w] = input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Geometry(format!("input shape {input_shape:?} has a zero dimension")));
        }
        if h != w {
            return Err(Error::Geometry(format!("input maps must be square, got {h}x{w}")));
        }
        let mut flat: Option<usize> = None;
        let mut layers = Vec::with_capacity(specs.len());
        for (idx, spec) in specs.iter().enumerate() {
            match *spec {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                } => {
                    if flat.is_some() {
                        return Err(Error::Geometry(format!("layer {idx}: conv after linear")));
                    }
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(Error::Geometry(format!(
                            "layer {idx}: conv parameters must be positive"
                        )));
                    }
                    let m = conv_output_side(h, kernel, stride)
                        .map_err(|e| Error::Geometry(format!("layer {idx}: {e}")))?;
                    let fan_in = c * kernel * kernel;
                    let weights = Tensor::from_vec(
                        &[out_channels, c, kernel, kernel],
                        normal(out_channels * fan_in, (2.0 / fan_in as f64).sqrt()),
                    )?;
                    layers.push(Layer::Conv(ConvLayerState::from_weights(weights, stride)?));
                    c = out_channels;
                    h = m;
                    w = m;
                }
                LayerSpec::Pool => {
                    if flat.is_some() {
                        return Err(Error::Geometry(format!("layer {idx}: pool after linear")));
                    }
                    if h < 2 || w < 2 {
                        return Err(Error::Geometry(format!("layer {idx}: cannot pool {h}x{w}")));
                    }
                    h /= 2;
                    w /= 2;
                    layers.push(Layer::Pool);
                }
                LayerSpec::Linear { out } => {
                    if out == 0 {
                        return Err(Error::Geometry(format!("layer {idx}: linear out must be positive")));
                    }
                    let fin = flat.unwrap_or(c * h * w);
                    let last = idx + 1 == specs.len();
                    let gain = if last { 1.0 } else { 2.0 };
                    layers.push(Layer::Linear(LinearLayer {
                        weights: Tensor::from_vec(&[out, fin], normal(out * fin, (gain / fin as f64).sqrt()))?,
                        bias: Tensor::zeros(&[out]),
                        weights_moments: AdamMoments::zeros(out * fin),
                        bias_moments: AdamMoments::zeros(out),
                    }));
                    flat = Some(out);
                }
            }
        }
        match (specs.last(), flat) {
            (Some(LayerSpec::Linear { out }), _) if *out == num_classes => {}
            _ => {
                return Err(Error::Geometry(format!(
                    "architecture must end with a linear layer of {num_classes} outputs"
                )))
            }
        }
        Ok(Network {
            input_shape,
            layers,
            num_classes,
            bn,
            step: 0,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    /// Adam steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn conv_layers(&self) -> Vec<&ConvLayerState<T>> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Conv(c) => Some(c),
                _ => None,
            })
            .collect()
    }

    pub fn conv_layers_mut(&mut self) -> Vec<&mut ConvLayerState<T>> {
        self.layers
            .iter_mut()
            .filter_map(|l| match l {
                Layer::Conv(c) => Some(c),
                _ => None,
            })
            .collect()
    }

    pub fn conv_count(&self) -> usize {
        self.conv_layers().len()
    }

    pub fn total_filters(&self) -> usize {
        self.conv_layers().iter().map(|c| c.out_channels()).sum()
    }

    pub fn masks(&self) -> Vec<Vec<bool>> {
        self.conv_layers().iter().map(|c| c.filter_mask.clone()).collect()
    }

    pub fn mac_counters(&self) -> Vec<MacCounters> {
        self.conv_layers().iter().map(|c| c.counters).collect()
    }

    pub fn total_macs(&self) -> MacCounters {
        let mut total = MacCounters::default();
        for c in self.mac_counters() {
            total += c;
        }
        total
    }

    pub fn reset_counters(&mut self) {
        for c in self.conv_layers_mut() {
            c.counters = MacCounters::default();
        }
    }

    /// Parameters still doing work: for convolutions, weights connecting
    /// live input channels to live filters plus the bias, gamma and beta of
    /// live filters; for linear layers, weights fed by live channels plus
    /// biases.
    pub fn unmasked_params(&self) -> usize {
        let mut total = 0;
        let mut live_in: Option<Vec<bool>> = None;
        let mut side = self.input_shape[1];
        let mut after_linear = false;
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    let k2 = c.kernel() * c.kernel();
                    let i_live = live_in
                        .as_ref()
                        .map_or(c.in_channels(), |m| m.iter().filter(|&&x| x).count());
                    let o_live = c.unmasked_filters();
                    total += o_live * (i_live * k2 + 3);
                    live_in = Some(c.filter_mask.iter().map(|m| !m).collect());
                    side = (side - c.kernel()) / c.stride + 1;
                }
                Layer::Pool => side /= 2,
                Layer::Linear(l) => {
                    let (fout, fin) = (l.weights.shape()[0], l.weights.shape()[1]);
                    let fin_live = match (&live_in, after_linear) {
                        (Some(m), false) => m.iter().filter(|&&x| x).count() * side * side,
                        _ => fin,
                    };
                    total += fout * fin_live + fout;
                    after_linear = true;
                }
            }
        }
        total
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<usize> {
        let [c, h, w] = self.input_shape;
        x.expect_rank("network input", 4)?;
        let b = x.shape()[0];
        x.expect_shape("network input", &[b, c, h, w])?;
        if b == 0 {
            return Err(Error::EmptyBatch);
        }
        Ok(b)
    }

    /// Inference-mode forward pass (batch norm uses running statistics).
    /// Counts forward MACs.
    pub fn predict(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let bn = self.bn;
        let mut act = x.clone();
        let mut prev_mask: Option<Vec<bool>> = None;
        let n_layers = self.layers.len();
        for (idx, layer) in self.layers.iter_mut().enumerate() {
            act = match layer {
                Layer::Conv(c) => {
                    let (y, macs) = conv2d_forward(&act, c, c.stride, prev_mask.as_deref())?;
                    c.counters.forward += macs;
                    let mask = Some(c.filter_mask.as_slice());
                    let z = batchnorm_inference(&y, &c.bn_gamma, &c.bn_beta, &c.bn_running_mean, &c.bn_running_var, &bn, mask)?;
                    prev_mask = Some(c.filter_mask.clone());
                    relu_forward(&z)
                }
                Layer::Pool => maxpool2x2_forward(&act)?.0,
                Layer::Linear(l) => {
                    let b = act.shape()[0];
                    let fin = act.len() / b;
                    let y = linear_forward(&act.reshape(&[b, fin])?, &l.weights, &l.bias)?;
                    if idx + 1 < n_layers {
                        relu_forward(&y)
                    } else {
                        y
                    }
                }
            };
        }
        act.check_finite("logits")?;
        Ok(act)
    }

    /// Forward, backward and one Adam update on a batch. Post-ReLU conv
    /// activations are added to `acc` when given.
    pub fn train_step(
        &mut self,
        x: &Tensor<T>,
        labels: &[usize],
        hyper: &AdamHyper,
        acc: Option<&mut ActivationAccumulator>,
    ) -> Result<StepStats> {
        let batch = self.check_input(x)?;
        let bn = self.bn;
        let n_layers = self.layers.len();
        let mut caches: Vec<Cache<T>> = Vec::with_capacity(n_layers);
        let mut conv_outputs: Vec<Tensor<T>> = Vec::new();
        let mut act = x.clone();
        let mut prev_mask: Option<Vec<bool>> = None;

        for (idx, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Conv(c) => {
                    let (y, macs) = conv2d_forward(&act, c, c.stride, prev_mask.as_deref())?;
                    c.counters.forward += macs;
                    let mask = Some(c.filter_mask.as_slice());
                    let (z, bn_cache) = batchnorm_forward(
                        &y,
                        &c.bn_gamma,
                        &c.bn_beta,
                        &mut c.bn_running_mean,
                        &mut c.bn_running_var,
                        &bn,
                        mask,
                    )?;
                    let out = relu_forward(&z);
                    if acc.is_some() {
                        conv_outputs.push(out.clone());
                    }
                    prev_mask = Some(c.filter_mask.clone());
                    caches.push(Cache::Conv {
                        input: std::mem::replace(&mut act, out),
                        bn: bn_cache,
                        pre_relu: z,
                    });
                }
                Layer::Pool => {
                    let (y, pc) = maxpool2x2_forward(&act)?;
                    caches.push(Cache::Pool(pc));
                    act = y;
                }
                Layer::Linear(l) => {
                    let shape = act.shape().to_vec();
                    let fin = act.len() / batch;
                    let input = act.reshape(&[batch, fin])?;
                    let y = linear_forward(&input, &l.weights, &l.bias)?;
                    let hidden = idx + 1 < n_layers;
                    let unflattened = (shape.len() == 4).then_some(shape);
                    if hidden {
                        act = relu_forward(&y);
                        caches.push(Cache::Linear {
                            input,
                            unflattened,
                            pre_relu: Some(y),
                        });
                    } else {
                        act = y;
                        caches.push(Cache::Linear {
                            input,
                            unflattened,
                            pre_relu: None,
                        });
                    }
                }
            }
        }

        act.check_finite("logits")?;
        let (loss, mut grad) = softmax_cross_entropy(&act, labels)?;
        let correct = act
            .data()
            .chunks(self.num_classes)
            .zip(labels)
            .filter(|(row, &label)| argmax(row) == label)
            .count();

        if let Some(acc) = acc {
            let refs: Vec<&Tensor<T>> = conv_outputs.iter().collect();
            acc.accumulate(&refs)?;
        }

        let input_masks: Vec<Option<Vec<bool>>> = {
            let mut prev: Option<Vec<bool>> = None;
            self.layers
                .iter()
                .map(|l| match l {
                    Layer::Conv(c) => {
                        let m = prev.clone();
                        prev = Some(c.filter_mask.clone());
                        m
                    }
                    _ => None,
                })
                .collect()
        };

        self.step += 1;
        let t = self.step;
        for (idx, (layer, cache)) in self.layers.iter_mut().zip(caches.iter()).enumerate().rev() {
            match (layer, cache) {
                (
                    Layer::Conv(c),
                    Cache::Conv {
                        input,
                        bn: bn_cache,
                        pre_relu,
                    },
                ) => {
                    let mask = c.filter_mask.clone();
                    let g_z = relu_backward(pre_relu, &grad)?;
                    let g_bn = batchnorm_backward(&g_z, &c.bn_gamma, bn_cache, Some(&mask))?;
                    let g = conv2d_backward(input, c, &g_bn.grad_input, c.stride, input_masks[idx].as_deref())?;
                    c.counters.error += g.error_macs;
                    c.counters.weight_grad += g.weight_grad_macs;

                    let row_len = c.filter_len();
                    let w_rows = RowMask { frozen: &mask, row_len };
                    let rows = RowMask { frozen: &mask, row_len: 1 };
                    adam_step(c.weights.data_mut(), g.grad_weights.data(), &mut c.weights_moments, hyper, t, Some(w_rows))?;
                    adam_step(c.bias.data_mut(), g.grad_bias.data(), &mut c.bias_moments, hyper, t, Some(rows))?;
                    adam_step(c.bn_gamma.data_mut(), g_bn.grad_gamma.data(), &mut c.gamma_moments, hyper, t, Some(rows))?;
                    adam_step(c.bn_beta.data_mut(), g_bn.grad_beta.data(), &mut c.beta_moments, hyper, t, Some(rows))?;
                    grad = g.grad_input;
                }
                (Layer::Pool, Cache::Pool(pc)) => {
                    grad = maxpool2x2_backward(&grad, pc)?;
                }
                (
                    Layer::Linear(l),
                    Cache::Linear {
                        input,
                        unflattened,
                        pre_relu,
                    },
                ) => {
                    if let Some(z) = pre_relu {
                        grad = relu_backward(z, &grad)?;
                    }
                    let g = linear_backward(input, &l.weights, &grad)?;
                    adam_step(l.weights.data_mut(), g.grad_weights.data(), &mut l.weights_moments, hyper, t, None)?;
                    adam_step(l.bias.data_mut(), g.grad_bias.data(), &mut l.bias_moments, hyper, t, None)?;
                    grad = match unflattened {
                        Some(shape) => g.grad_input.reshape(shape)?,
                        None => g.grad_input,
                    };
                }
                _ => unreachable!("cache kinds follow layer kinds"),
            }
        }

        let loss = loss.to_f64_lossy();
        Ok(StepStats {
            loss,
            correct,
            batch,
        })
    }

    /// Test accuracy in percent, in inference mode. MAC counters are restored
    /// afterwards so evaluation does not show up in training counts.
    pub fn evaluate(&mut self, data: &Dataset, batch_size: usize) -> Result<f64> {
        let saved = self.mac_counters();
        let n = data.len();
        let mut correct = 0;
        let indices: Vec<usize> = (0..n).collect();
        for chunk in indices.chunks(batch_size.max(1)) {
            let (x, labels) = data.batch::<T>(chunk);
            let logits = self.predict(&x)?;
            correct += logits
                .data()
                .chunks(self.num_classes)
                .zip(&labels)
                .filter(|(row, &label)| argmax(row) == label)
                .count();
        }
        for (c, s) in self.conv_layers_mut().into_iter().zip(saved) {
            c.counters = s;
        }
        Ok(100.0 * correct as f64 / n as f64)
    }
}

fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
