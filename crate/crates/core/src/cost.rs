//! Analytic operation counts for convolution layers, training savings of
//! gradual pruning over prune-then-retrain, and the matching latency model.
//!
//! Counts are per image unless scaled by a batch size. Pruning percentages
//! are in `[0, 100]`; `p_prev` applies to the layer's input channels and
//! `p_cur` to its own filters.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::criteria::l1_scores;
use crate::error::{Error, Result};
use crate::network::{Layer, Network};
use crate::tensor::{Real, Tensor};

/// Geometry of one square convolution without padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerGeom {
    /// Input map side.
    pub n: usize,
    /// Output map side, `(n - k) / s + 1`.
    pub m: usize,
    pub k: usize,
    /// Input channels.
    pub i: usize,
    /// Output channels.
    pub o: usize,
    pub s: usize,
}

impl LayerGeom {
    pub fn new(n: usize, k: usize, i: usize, o: usize, s: usize) -> Result<Self> {
        if k == 0 || s == 0 || i == 0 || o == 0 {
            return Err(Error::Geometry(format!(
                "kernel, stride and channel counts must be positive (k={k}, s={s}, i={i}, o={o})"
            )));
        }
        if k > n || (n - k) % s != 0 {
            return Err(Error::NonIntegralOutput {
                op: "layer geometry",
                n,
                k,
                stride: s,
            });
        }
        Ok(LayerGeom {
            n,
            m: (n - k) / s + 1,
            k,
            i,
            o,
            s,
        })
    }

    /// `(N - M) / S + 1`, which equals `k` only when `S = 1`.
    pub fn r(&self) -> f64 {
        (self.n - self.m) as f64 / self.s as f64 + 1.0
    }

    fn check(&self) -> Result<()> {
        let again = LayerGeom::new(self.n, self.k, self.i, self.o, self.s)?;
        if again.m != self.m {
            return Err(Error::Geometry(format!(
                "output side {} does not match (N - k) / S + 1 = {}",
                self.m, again.m
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneEntry {
    pub p_prev: f64,
    pub p_cur: f64,
}

/// Operation counts of one layer, or a sum of layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub forward_macs: f64,
    pub error_macs: f64,
    pub dw_macs: f64,
    pub input_reads: f64,
    pub weight_reads: f64,
    pub activation_writes: f64,
    pub weight_writes: f64,
}

impl LayerCost {
    pub fn total_macs(&self) -> f64 {
        self.forward_macs + self.error_macs + self.dw_macs
    }
}

impl std::ops::AddAssign for LayerCost {
    fn add_assign(&mut self, r: Self) {
        self.forward_macs += r.forward_macs;
        self.error_macs += r.error_macs;
        self.dw_macs += r.dw_macs;
        self.input_reads += r.input_reads;
        self.weight_reads += r.weight_reads;
        self.activation_writes += r.activation_writes;
        self.weight_writes += r.weight_writes;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
    pub total: LayerCost,
}

fn check_perc(p: f64, what: &str) -> Result<()> {
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("{what} = {p} is not a percentage")));
    }
    Ok(())
}

/// Counts for one layer over `batch` images. MACs, input reads and
/// activation writes scale with the batch; weight reads and writes happen
/// once per batch.
pub fn layer_costs(g: &LayerGeom, p: &PruneEntry, batch: usize) -> Result<LayerCost> {
    g.check()?;
    check_perc(p.p_prev, "p_prev")?;
    check_perc(p.p_cur, "p_cur")?;
    let (n, m, k, i, o) = (g.n as f64, g.m as f64, g.k as f64, g.i as f64, g.o as f64);
    let (lc, lp) = (100.0 - p.p_cur, 100.0 - p.p_prev);
    let b = batch as f64;
    // Products of integers stay exact until the final division.
    let both = |x: f64| lc * lp * x / 10_000.0;
    let r = g.r();
    Ok(LayerCost {
        forward_macs: b * both(m * m * k * k * i * o),
        error_macs: b * both(n * n * k * k * i * o),
        dw_macs: b * lp * (m * m * r * r * i * o) / 100.0,
        input_reads: b * n * n * i,
        weight_reads: both(k * k * i * o),
        activation_writes: b * lp * (m * m * o) / 100.0,
        weight_writes: both(k * k * i * o),
    })
}

pub fn cost_report(geoms: &[LayerGeom], profile: &[PruneEntry], batch: usize) -> Result<CostReport> {
    if geoms.len() != profile.len() {
        return Err(Error::shape("cost_report", &[geoms.len()], &[profile.len()]));
    }
    let mut report = CostReport::default();
    for (g, p) in geoms.iter().zip(profile) {
        let c = layer_costs(g, p, batch)?;
        report.total += c;
        report.layers.push(c);
    }
    Ok(report)
}

/// Conv layer geometries of a network, in order.
pub fn geometry_from_network<T: Real>(net: &Network<T>) -> Result<Vec<LayerGeom>> {
    let [mut ch, mut side, _] = net.input_shape();
    let mut out = Vec::new();
    for layer in net.layers() {
        match layer {
            Layer::Conv(c) => {
                let g = LayerGeom::new(side, c.kernel(), ch, c.out_channels(), c.stride)?;
                side = g.m;
                ch = g.o;
                out.push(g);
            }
            Layer::Pool => side /= 2,
            Layer::Linear(_) => {}
        }
    }
    Ok(out)
}

/// Pruned percentages of each conv layer's filters and of its inputs.
pub fn profile_from_network<T: Real>(net: &Network<T>) -> Vec<PruneEntry> {
    let mut prev = 0.0;
    net.masks()
        .iter()
        .map(|mask| {
            let cur = 100.0 * mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64;
            let e = PruneEntry {
                p_prev: prev,
                p_cur: cur,
            };
            prev = cur;
            e
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavingsInput {
    /// Nominal training epochs.
    pub n: usize,
    /// Retraining epochs after one-shot pruning.
    pub m: usize,
    /// Final pruned fraction in `[0, 1)`.
    pub target_rate: f64,
    /// Dense per-epoch operation count.
    pub x: f64,
}

impl SavingsInput {
    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("savings needs n >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.target_rate) {
            return Err(Error::InvalidArgument(format!(
                "target rate {} outside [0, 1)",
                self.target_rate
            )));
        }
        if !(self.x > 0.0 && self.x.is_finite()) {
            return Err(Error::InvalidArgument("per-epoch operation count must be positive".into()));
        }
        Ok(())
    }

    /// Fraction of operations saved by gradual pruning, 1% of filters per
    /// epoch, relative to `n` dense epochs plus `m` retraining epochs at the
    /// target rate.
    pub fn savings(&self) -> Result<f64> {
        self.validate()?;
        let pwt: f64 = (1..=self.n).map(|k| (100.0 - k as f64 + 1.0) / 100.0 * self.x).sum();
        Ok(1.0 - pwt / self.prt_ops())
    }

    /// Like [`savings`](Self::savings) for an arbitrary schedule:
    /// `remaining[e]` is the unpruned fraction during epoch `e + 1`.
    pub fn savings_general(&self, remaining: &[f64]) -> Result<f64> {
        self.validate()?;
        if remaining.len() != self.n {
            return Err(Error::shape("savings_general", &[self.n], &[remaining.len()]));
        }
        if remaining.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::InvalidArgument("remaining fractions must lie in [0, 1]".into()));
        }
        let pwt: f64 = remaining.iter().map(|f| f * self.x).sum();
        Ok(1.0 - pwt / self.prt_ops())
    }

    fn prt_ops(&self) -> f64 {
        self.x * self.n as f64 + self.m as f64 * (1.0 - self.target_rate) * self.x
    }
}

/// Per-epoch unpruned fractions of a 1%-per-epoch schedule.
pub fn linear_schedule_remaining(n: usize) -> Vec<f64> {
    (1..=n).map(|k| (100.0 - k as f64 + 1.0) / 100.0).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyInput {
    pub n: f64,
    pub m: f64,
    /// Mini-batches per epoch.
    pub b: f64,
    /// Seconds per mini-batch.
    pub t_b: f64,
    /// Seconds for one L1-norm scan over all filters.
    pub t_l1norm: f64,
}

impl LatencyInput {
    fn validate(&self) -> Result<()> {
        let vals = [self.n, self.m, self.b, self.t_b, self.t_l1norm];
        if vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("latency inputs must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Every epoch trains and scans.
    pub fn latency_pwt(&self) -> Result<f64> {
        self.validate()?;
        Ok(self.n * (self.b * self.t_b + self.t_l1norm))
    }

    /// Dense training, one scan, then `m` retraining epochs.
    pub fn latency_prt(&self) -> Result<f64> {
        self.validate()?;
        Ok(self.n * self.b * self.t_b + self.t_l1norm + self.m * self.b * self.t_b)
    }
}

fn median(mut xs: Vec<Duration>) -> Duration {
    xs.sort();
    xs[xs.len() / 2]
}

/// Median wall time of a full L1-norm scan over `reps` (at least 5) runs.
pub fn measure_t_l1norm<T: Real>(net: &Network<T>, reps: usize) -> Duration {
    let reps = reps.max(5);
    std::hint::black_box(l1_scores(net));
    median(
        (0..reps)
            .map(|_| {
                let t = Instant::now();
                std::hint::black_box(l1_scores(std::hint::black_box(net)));
                t.elapsed()
            })
            .collect(),
    )
}

/// Median wall time of one inference forward pass on a random batch over
/// `reps` (at least 5) runs. MAC counters are left as they were.
pub fn measure_t_batch<T: Real>(net: &mut Network<T>, batch: usize, reps: usize) -> Result<Duration> {
    let reps = reps.max(5);
    let [c, h, w] = net.input_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let data: Vec<T> = (0..batch.max(1) * c * h * w)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::from_f64_lossy(z)
        })
        .collect();
    let x = Tensor::from_vec(&[batch.max(1), c, h, w], data)?;
    let saved = net.mac_counters();
    net.predict(&x)?;
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        std::hint::black_box(net.predict(&x)?);
        times.push(t.elapsed());
    }
    for (l, s) in net.conv_layers_mut().into_iter().zip(saved) {
        l.counters = s;
    }
    Ok(median(times))
}
