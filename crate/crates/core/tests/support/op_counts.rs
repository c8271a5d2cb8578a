//! Analytic per-layer MAC counts against the executed-MAC counters of the
//! convolution kernels on random geometries and pruning levels.

#![allow(dead_code)]

use prunetrain::cost::{layer_costs, LayerCost, LayerGeom, PruneEntry};
use prunetrain::kernels::{conv2d_backward, conv2d_forward, ConvLayerState};
use prunetrain::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LEVELS: [usize; 3] = [0, 25, 50];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Measured {
    pub forward: f64,
    pub error: f64,
    pub dw: f64,
}

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub geom: LayerGeom,
    pub p_prev: usize,
    pub p_cur: usize,
    pub batch: usize,
    pub analytic: LayerCost,
    pub measured: Measured,
}

impl CaseResult {
    pub fn forward_exact(&self) -> bool {
        self.analytic.forward_macs == self.measured.forward
    }

    pub fn error_exact(&self) -> bool {
        self.analytic.error_macs == self.measured.error
    }

    pub fn dw_exact(&self) -> bool {
        self.analytic.dw_macs == self.measured.dw
    }
}

/// Random geometries with `N <= 12`, `k` in {1, 3, 5}, `S` in {1, 2} and an
/// integral output side. Channel counts are multiples of 4 so every level in
/// [`LEVELS`] masks a whole number of channels. Both strides and every
/// kernel size appear at least once.
pub fn random_geometries(seed: u64, count: usize) -> Vec<LayerGeom> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<LayerGeom> = Vec::new();
    let mut required: Vec<(usize, usize)> = [1, 3, 5].iter().flat_map(|&k| [(k, 1), (k, 2)]).collect();
    while out.len() < count || !required.is_empty() {
        let (k, s) = match required.pop() {
            Some(ks) => ks,
            None => ([1, 3, 5][rng.random_range(0..3)], rng.random_range(1..=2)),
        };
        let n = rng.random_range(k..=12);
        let i = 4 * rng.random_range(1..=2);
        let o = 4 * rng.random_range(1..=2);
        if let Ok(g) = LayerGeom::new(n, k, i, o, s) {
            out.push(g);
        } else if s == 2 || k > 1 {
            required.push((k, s));
        }
    }
    out
}

fn masked(rng: &mut ChaCha8Rng, n: usize, perc: usize) -> Vec<bool> {
    let mut m = vec![false; n];
    for j in 0..n * perc / 100 {
        m[j] = true;
    }
    m.shuffle(rng);
    m
}

/// Runs one forward and one backward pass over `batch` random images with
/// `p_prev`% of the input channels and `p_cur`% of the filters masked.
pub fn measure(g: &LayerGeom, p_prev: usize, p_cur: usize, batch: usize, seed: u64) -> CaseResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rand_vec = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let x = Tensor::from_vec(&[batch, g.i, g.n, g.n], rand_vec(batch * g.i * g.n * g.n)).unwrap();
    let w = Tensor::from_vec(&[g.o, g.i, g.k, g.k], rand_vec(g.o * g.i * g.k * g.k)).unwrap();
    let dy = Tensor::from_vec(&[batch, g.o, g.m, g.m], rand_vec(batch * g.o * g.m * g.m)).unwrap();
    let mut layer = ConvLayerState::from_weights(w, g.s).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    for (f, &m) in masked(&mut rng, g.o, p_cur).iter().enumerate() {
        if m {
            layer.mask_filter(f);
        }
    }
    let input_mask = masked(&mut rng, g.i, p_prev);
    let mask = (p_prev > 0).then_some(input_mask.as_slice());
    let (_, forward) = conv2d_forward(&x, &layer, g.s, mask).unwrap();
    let grads = conv2d_backward(&x, &layer, &dy, g.s, mask).unwrap();
    let analytic = layer_costs(
        g,
        &PruneEntry {
            p_prev: p_prev as f64,
            p_cur: p_cur as f64,
        },
        batch,
    )
    .unwrap();
    CaseResult {
        geom: *g,
        p_prev,
        p_cur,
        batch,
        analytic,
        measured: Measured {
            forward: forward as f64,
            error: grads.error_macs as f64,
            dw: grads.weight_grad_macs as f64,
        },
    }
}

/// Every geometry at every `(p_prev, p_cur)` pair of [`LEVELS`].
pub fn sweep(seed: u64, count: usize) -> Vec<CaseResult> {
    let mut out = Vec::new();
    for (gi, g) in random_geometries(seed, count).iter().enumerate() {
        for &pp in &LEVELS {
            for &pc in &LEVELS {
                out.push(measure(g, pp, pc, 2, seed.wrapping_add(gi as u64 * 31 + pp as u64 + pc as u64 * 7)));
            }
        }
    }
    out
}
