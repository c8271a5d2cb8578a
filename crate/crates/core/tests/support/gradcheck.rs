//! Central-difference gradient checks for every kernel.
//!
//! Each instance draws a random geometry, random inputs and a random probe
//! `r`, and compares the analytic gradient of `L = sum(r * f(x))` against
//! `(L(x + h) - L(x - h)) / 2h` for every input coordinate in `f64`.

#![allow(dead_code)]

use prunetrain::kernels::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, linear_backward, linear_forward,
    maxpool2x2_backward, maxpool2x2_forward, relu_backward, relu_forward, softmax_cross_entropy, BatchNormConfig,
    ConvLayerState,
};
use prunetrain::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const INSTANCES: usize = 24;

#[derive(Clone, Debug)]
pub struct KernelCheck {
    pub kernel: &'static str,
    pub instances: usize,
    pub worst: f64,
}

impl KernelCheck {
    pub fn passed(&self) -> bool {
        self.instances >= 20 && self.worst < TOLERANCE
    }
}

/// `||a - n|| / (||a|| + ||n||)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn numeric_gradient(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|j| {
            let orig = probe[j];
            probe[j] = orig + STEP;
            let up = f(&probe);
            probe[j] = orig - STEP;
            let down = f(&probe);
            probe[j] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::from_vec(shape, data).unwrap()
}

fn probe(y: &Tensor<f64>, r: &[f64]) -> f64 {
    y.data().iter().zip(r).map(|(a, b)| a * b).sum()
}

fn mask(rng: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    (0..n).map(|_| rng.random_bool(0.25)).collect()
}

struct Tracker {
    kernel: &'static str,
    instances: usize,
    worst: f64,
}

impl Tracker {
    fn new(kernel: &'static str) -> Self {
        Tracker {
            kernel,
            instances: 0,
            worst: 0.0,
        }
    }

    fn record(&mut self, analytic: &[f64], numeric: &[f64]) {
        self.instances += 1;
        self.worst = self.worst.max(relative_error(analytic, numeric));
    }

    fn finish(self) -> KernelCheck {
        KernelCheck {
            kernel: self.kernel,
            instances: self.instances,
            worst: self.worst,
        }
    }
}

struct ConvCase {
    x: Tensor<f64>,
    layer: ConvLayerState<f64>,
    stride: usize,
    input_mask: Option<Vec<bool>>,
    r: Vec<f64>,
}

fn conv_case(rng: &mut ChaCha8Rng) -> ConvCase {
    let b = rng.random_range(1..=2);
    let i = rng.random_range(1..=3);
    let o = rng.random_range(1..=3);
    let k = [1, 2, 3][rng.random_range(0..3)];
    let stride = rng.random_range(1..=2);
    let m = rng.random_range(1..=3);
    let n = (m - 1) * stride + k;
    let x = tensor(&[b, i, n, n], normal_vec(rng, b * i * n * n));
    let w = tensor(&[o, i, k, k], normal_vec(rng, o * i * k * k));
    let mut layer = ConvLayerState::from_weights(w, stride).unwrap();
    layer.bias = tensor(&[o], normal_vec(rng, o));
    for f in 0..o {
        if rng.random_bool(0.25) {
            layer.mask_filter(f);
        }
    }
    let input_mask = rng.random_bool(0.5).then(|| mask(rng, i));
    let r = normal_vec(rng, b * o * m * m);
    ConvCase {
        x,
        layer,
        stride,
        input_mask,
        r,
    }
}

impl ConvCase {
    fn loss(&self, x: &Tensor<f64>, layer: &ConvLayerState<f64>) -> f64 {
        let (y, _) = conv2d_forward(x, layer, self.stride, self.input_mask.as_deref()).unwrap();
        probe(&y, &self.r)
    }

    /// Masked input channels are structurally zero, so they are held at zero
    /// in both the analytic and the numeric gradient.
    fn live_input(&self, j: usize) -> bool {
        let sh = self.x.shape();
        let c = (j / (sh[2] * sh[3])) % sh[1];
        self.input_mask.as_ref().map_or(true, |m| !m[c])
    }
}

pub fn check_conv(seed: u64) -> Vec<KernelCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut input, mut weights, mut bias) = (
        Tracker::new("conv2d input"),
        Tracker::new("conv2d weights"),
        Tracker::new("conv2d bias"),
    );
    for _ in 0..INSTANCES {
        let case = conv_case(&mut rng);
        let (y, _) = conv2d_forward(&case.x, &case.layer, case.stride, case.input_mask.as_deref()).unwrap();
        let grads = conv2d_backward(
            &case.x,
            &case.layer,
            &tensor(y.shape(), case.r.clone()),
            case.stride,
            case.input_mask.as_deref(),
        )
        .unwrap();

        let live: Vec<bool> = (0..case.x.len()).map(|j| case.live_input(j)).collect();
        let num = numeric_gradient(case.x.data(), |v| case.loss(&tensor(case.x.shape(), v.to_vec()), &case.layer));
        let num: Vec<f64> = num.iter().zip(&live).map(|(&g, &l)| if l { g } else { 0.0 }).collect();
        input.record(grads.grad_input.data(), &num);

        let num = numeric_gradient(case.layer.weights.data(), |v| {
            let mut l = case.layer.clone();
            l.weights = tensor(case.layer.weights.shape(), v.to_vec());
            case.loss(&case.x, &l)
        });
        weights.record(grads.grad_weights.data(), &num);

        let num = numeric_gradient(case.layer.bias.data(), |v| {
            let mut l = case.layer.clone();
            l.bias = tensor(case.layer.bias.shape(), v.to_vec());
            case.loss(&case.x, &l)
        });
        bias.record(grads.grad_bias.data(), &num);
    }
    vec![input.finish(), weights.finish(), bias.finish()]
}

pub fn check_batchnorm(seed: u64) -> Vec<KernelCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = BatchNormConfig::default();
    let (mut input, mut gamma_t, mut beta_t) = (
        Tracker::new("batchnorm input"),
        Tracker::new("batchnorm gamma"),
        Tracker::new("batchnorm beta"),
    );
    for _ in 0..INSTANCES {
        let b = rng.random_range(2..=3);
        let c = rng.random_range(1..=3);
        let s = rng.random_range(1..=3);
        let shape = [b, c, s, s];
        let len = b * c * s * s;
        let x = tensor(&shape, normal_vec(&mut rng, len));
        let gamma = tensor(&[c], (0..c).map(|_| rng.random_range(0.5..1.5)).collect());
        let beta = tensor(&[c], normal_vec(&mut rng, c));
        let m = mask(&mut rng, c);
        let r = normal_vec(&mut rng, len);
        let loss = |x: &Tensor<f64>, g: &Tensor<f64>, be: &Tensor<f64>| {
            let (mut rm, mut rv) = (Tensor::zeros(&[c]), Tensor::full(&[c], 1.0));
            let (y, _) = batchnorm_forward(x, g, be, &mut rm, &mut rv, &cfg, Some(&m)).unwrap();
            probe(&y, &r)
        };
        let (mut rm, mut rv) = (Tensor::zeros(&[c]), Tensor::full(&[c], 1.0));
        let (_, cache) = batchnorm_forward(&x, &gamma, &beta, &mut rm, &mut rv, &cfg, Some(&m)).unwrap();
        let grads = batchnorm_backward(&tensor(&shape, r.clone()), &gamma, &cache, Some(&m)).unwrap();

        let num = numeric_gradient(x.data(), |v| loss(&tensor(&shape, v.to_vec()), &gamma, &beta));
        input.record(grads.grad_input.data(), &num);
        let num = numeric_gradient(gamma.data(), |v| loss(&x, &tensor(&[c], v.to_vec()), &beta));
        gamma_t.record(grads.grad_gamma.data(), &num);
        let num = numeric_gradient(beta.data(), |v| loss(&x, &gamma, &tensor(&[c], v.to_vec())));
        beta_t.record(grads.grad_beta.data(), &num);
    }
    vec![input.finish(), gamma_t.finish(), beta_t.finish()]
}

pub fn check_relu(seed: u64) -> Vec<KernelCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tracker::new("relu");
    for _ in 0..INSTANCES {
        let n = rng.random_range(1..=40);
        // Keep inputs away from the kink so the difference quotient is exact.
        let data: Vec<f64> = (0..n)
            .map(|_| {
                let v: f64 = rng.random_range(0.01..1.0);
                if rng.random_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect();
        let x = tensor(&[n], data);
        let r = normal_vec(&mut rng, n);
        let g = relu_backward(&x, &tensor(&[n], r.clone())).unwrap();
        let num = numeric_gradient(x.data(), |v| probe(&relu_forward(&tensor(&[n], v.to_vec())), &r));
        t.record(g.data(), &num);
    }
    vec![t.finish()]
}

pub fn check_maxpool(seed: u64) -> Vec<KernelCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tracker::new("maxpool2x2");
    for _ in 0..INSTANCES {
        let b = rng.random_range(1..=2);
        let c = rng.random_range(1..=2);
        let h = rng.random_range(2..=5);
        let w = rng.random_range(2..=5);
        let shape = [b, c, h, w];
        // Distinct values spaced well beyond the step keep the argmax stable.
        let mut data: Vec<f64> = (0..b * c * h * w).map(|j| j as f64 * 0.01).collect();
        for j in (1..data.len()).rev() {
            data.swap(j, rng.random_range(0..=j));
        }
        let x = tensor(&shape, data);
        let (y, cache) = maxpool2x2_forward(&x).unwrap();
        let r = normal_vec(&mut rng, y.len());
        let g = maxpool2x2_backward(&tensor(y.shape(), r.clone()), &cache).unwrap();
        let num = numeric_gradient(x.data(), |v| probe(&maxpool2x2_forward(&tensor(&shape, v.to_vec())).unwrap().0, &r));
        t.record(g.data(), &num);
    }
    vec![t.finish()]
}

pub fn check_linear(seed: u64) -> Vec<KernelCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut input, mut weights, mut bias) = (
        Tracker::new("linear input"),
        Tracker::new("linear weights"),
        Tracker::new("linear bias"),
    );
    for _ in 0..INSTANCES {
        let b = rng.random_range(1..=3);
        let fin = rng.random_range(1..=6);
        let fout = rng.random_range(1..=4);
        let x = tensor(&[b, fin], normal_vec(&mut rng, b * fin));
        let w = tensor(&[fout, fin], normal_vec(&mut rng, fout * fin));
        let bb = tensor(&[fout], normal_vec(&mut rng, fout));
        let r = normal_vec(&mut rng, b * fout);
        let loss = |x: &Tensor<f64>, w: &Tensor<f64>, bb: &Tensor<f64>| probe(&linear_forward(x, w, bb).unwrap(), &r);
        let g = linear_backward(&x, &w, &tensor(&[b, fout], r.clone())).unwrap();
        input.record(
            g.grad_input.data(),
            &numeric_gradient(x.data(), |v| loss(&tensor(&[b, fin], v.to_vec()), &w, &bb)),
        );
        weights.record(
            g.grad_weights.data(),
            &numeric_gradient(w.data(), |v| loss(&x, &tensor(&[fout, fin], v.to_vec()), &bb)),
        );
        bias.record(
            g.grad_bias.data(),
            &numeric_gradient(bb.data(), |v| loss(&x, &w, &tensor(&[fout], v.to_vec()))),
        );
    }
    vec![input.finish(), weights.finish(), bias.finish()]
}

pub fn check_softmax_cross_entropy(seed: u64) -> Vec<KernelCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tracker::new("softmax cross-entropy");
    for _ in 0..INSTANCES {
        let b = rng.random_range(1..=4);
        let c = rng.random_range(2..=6);
        let logits: Vec<f64> = (0..b * c).map(|_| rng.random_range(-3.0..3.0)).collect();
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
        let (_, g) = softmax_cross_entropy(&tensor(&[b, c], logits.clone()), &labels).unwrap();
        let num = numeric_gradient(&logits, |v| softmax_cross_entropy(&tensor(&[b, c], v.to_vec()), &labels).unwrap().0);
        t.record(g.data(), &num);
    }
    vec![t.finish()]
}

/// Every kernel check with seeds derived from `seed`.
pub fn check_all(seed: u64) -> Vec<KernelCheck> {
    let mut out = check_conv(seed);
    out.extend(check_batchnorm(seed + 1));
    out.extend(check_relu(seed + 2));
    out.extend(check_maxpool(seed + 3));
    out.extend(check_linear(seed + 4));
    out.extend(check_softmax_cross_entropy(seed + 5));
    out
}
