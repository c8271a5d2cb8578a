//! Browser bindings: schedule simulation on an untrained VGG-micro, training
//! savings and latency curves, and per-layer operation counts. Every entry
//! point takes and returns JSON text.

use prunetrain::cost::{
    cost_report, geometry_from_network, layer_costs, profile_from_network, LatencyInput, LayerGeom, PruneEntry,
    SavingsInput,
};
use prunetrain::criteria::{zero_filters_percentage, Criterion};
use prunetrain::kernels::BatchNormConfig;
use prunetrain::network::{vgg_micro, LayerSpec, Network};
use prunetrain::schedule::{PruneScheduler, ScheduleConfig};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateRequest {
    schedule: ScheduleConfig,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    architecture: Option<Vec<LayerSpec>>,
    #[serde(default = "default_side")]
    input_side: usize,
    #[serde(default = "default_classes")]
    num_classes: usize,
}

fn default_side() -> usize {
    16
}
fn default_classes() -> usize {
    10
}

#[derive(Serialize)]
struct EpochState {
    epoch: usize,
    target: f64,
    pruned_pct: f64,
    live_filters: Vec<usize>,
    unmasked_params: usize,
    forward_macs: f64,
    training_macs: f64,
    masked: Vec<(usize, usize)>,
}

#[derive(Serialize)]
struct Simulation {
    filters_per_layer: Vec<usize>,
    dense_training_macs: f64,
    epochs: Vec<EpochState>,
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Runs the pruning hook epoch by epoch on freshly initialized weights, with
/// no training in between, and reports the state after each epoch. Counts
/// are per image.
pub fn simulate(request: &str) -> Result<String, String> {
    let req: SimulateRequest = serde_json::from_str(request).map_err(err)?;
    if req.schedule.criterion == Criterion::MeanAct {
        return Err("mean_act needs activations from training; pick l1 or random".into());
    }
    let specs = req.architecture.unwrap_or_else(|| vgg_micro(req.num_classes));
    let mut net: Network<f32> = Network::new(
        [1, req.input_side, req.input_side],
        &specs,
        req.num_classes,
        BatchNormConfig::default(),
        req.seed,
    )
    .map_err(err)?;
    let geoms = geometry_from_network(&net).map_err(err)?;
    let dense = cost_report(&geoms, &profile_from_network(&net), 1).map_err(err)?;
    let filters_per_layer = net.conv_layers().iter().map(|c| c.out_channels()).collect();
    let mut sched = PruneScheduler::new(req.schedule.clone(), req.seed).map_err(err)?;
    let mut epochs = Vec::with_capacity(req.schedule.total_epochs);
    for epoch in 1..=req.schedule.total_epochs {
        let victims = sched.epoch_end_hook(&mut net, epoch, None).map_err(err)?;
        let report = cost_report(&geoms, &profile_from_network(&net), 1).map_err(err)?;
        epochs.push(EpochState {
            epoch,
            target: sched.state().current_target_perc,
            pruned_pct: zero_filters_percentage(&net),
            live_filters: net.conv_layers().iter().map(|c| c.unmasked_filters()).collect(),
            unmasked_params: net.unmasked_params(),
            forward_macs: report.total.forward_macs,
            training_macs: report.total.total_macs(),
            masked: victims.iter().map(|v| (v.layer, v.filter)).collect(),
        });
    }
    serde_json::to_string(&Simulation {
        filters_per_layer,
        dense_training_macs: dense.total.total_macs(),
        epochs,
    })
    .map_err(err)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProjectionRequest {
    n: usize,
    max_m: usize,
    target_rate: f64,
    /// Seconds of training per epoch (mini-batches times seconds per batch).
    epoch_seconds: f64,
    t_l1norm: f64,
}

#[derive(Serialize)]
struct ProjectionPoint {
    m: usize,
    savings: f64,
    latency_pwt_hours: f64,
    latency_prt_hours: f64,
}

/// Savings and latency of gradual pruning against prune-then-retrain for
/// every retraining length from 0 to `max_m`.
pub fn projections(request: &str) -> Result<String, String> {
    let req: ProjectionRequest = serde_json::from_str(request).map_err(err)?;
    let points = (0..=req.max_m)
        .map(|m| {
            let savings = SavingsInput {
                n: req.n,
                m,
                target_rate: req.target_rate,
                x: 1.0,
            }
            .savings()?;
            let lat = LatencyInput {
                n: req.n as f64,
                m: m as f64,
                b: 1.0,
                t_b: req.epoch_seconds,
                t_l1norm: req.t_l1norm,
            };
            Ok(ProjectionPoint {
                m,
                savings,
                latency_pwt_hours: lat.latency_pwt()? / 3600.0,
                latency_prt_hours: lat.latency_prt()? / 3600.0,
            })
        })
        .collect::<prunetrain::Result<Vec<_>>>()
        .map_err(err)?;
    serde_json::to_string(&points).map_err(err)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRequest {
    n: usize,
    k: usize,
    i: usize,
    o: usize,
    #[serde(default = "default_stride")]
    s: usize,
    p_prev: f64,
    p_cur: f64,
    #[serde(default = "default_batch")]
    batch: usize,
}

fn default_stride() -> usize {
    1
}
fn default_batch() -> usize {
    1
}

#[derive(Serialize)]
struct LayerResponse {
    m: usize,
    r: f64,
    #[serde(flatten)]
    cost: prunetrain::cost::LayerCost,
}

/// Operation and memory-access counts of one convolution layer.
pub fn layer(request: &str) -> Result<String, String> {
    let req: LayerRequest = serde_json::from_str(request).map_err(err)?;
    let g = LayerGeom::new(req.n, req.k, req.i, req.o, req.s).map_err(err)?;
    let cost = layer_costs(
        &g,
        &PruneEntry {
            p_prev: req.p_prev,
            p_cur: req.p_cur,
        },
        req.batch,
    )
    .map_err(err)?;
    serde_json::to_string(&LayerResponse { m: g.m, r: g.r(), cost }).map_err(err)
}

#[wasm_bindgen(js_name = simulateSchedule)]
pub fn simulate_schedule(request: &str) -> Result<String, JsError> {
    simulate(request).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = projectionCurves)]
pub fn projection_curves(request: &str) -> Result<String, JsError> {
    projections(request).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = layerCosts)]
pub fn layer_cost_counts(request: &str) -> Result<String, JsError> {
    layer(request).map_err(|e| JsError::new(&e))
}
