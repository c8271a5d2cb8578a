use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::criteria::{zero_filters_percentage, ActivationAccumulator, Criterion};
use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::schedule::PruneScheduler;
use crate::tensor::Real;

use super::checkpoint::write_checkpoint;
use super::config::{Precision, RunConfig};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const FINAL_CHECKPOINT: &str = "checkpoint-final.bin";

pub fn checkpoint_name(epoch: usize) -> String {
    format!("checkpoint-epoch-{epoch:04}.bin")
}

/// One line of metrics.csv.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_loss: f64,
    /// Percent.
    pub train_acc: f64,
    /// Percent.
    pub test_acc: f64,
    /// Percentage of conv filters that are all zero.
    pub pruned_pct: f64,
    pub unmasked_params: usize,
    /// Conv MACs executed by training this epoch (forward, error and weight
    /// gradient); evaluation is not counted.
    pub executed_macs: u64,
    pub wall_seconds: f64,
    pub t_l1norm_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub rows: Vec<MetricsRow>,
    pub out_dir: PathBuf,
    pub checkpoints: Vec<PathBuf>,
}

/// Trains according to `cfg`, writing metrics.csv (flushed after every
/// row), config.json and checkpoints into `out_dir`. `on_epoch` sees each
/// row as it is written.
pub fn run(cfg: &RunConfig, out_dir: &Path, on_epoch: &mut dyn FnMut(&MetricsRow)) -> Result<RunSummary> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(CONFIG_FILE), serde_json::to_string_pretty(cfg)?)?;
    let (train, test) = cfg.dataset.load(cfg.seed)?;
    match cfg.precision {
        Precision::F32 => run_typed::<f32>(cfg, &train, &test, out_dir, on_epoch),
        Precision::F64 => run_typed::<f64>(cfg, &train, &test, out_dir, on_epoch),
    }
}

/// Builds the configured network for `input_shape`.
pub fn build_network<T: Real>(cfg: &RunConfig, input_shape: [usize; 3], num_classes: usize) -> Result<Network<T>> {
    Network::new(input_shape, &cfg.layer_specs()?, num_classes, cfg.batchnorm, cfg.seed)
}

fn run_typed<T: Real>(
    cfg: &RunConfig,
    train: &Dataset,
    test: &Dataset,
    out_dir: &Path,
    on_epoch: &mut dyn FnMut(&MetricsRow),
) -> Result<RunSummary> {
    let mut net: Network<T> = build_network(cfg, train.image_shape(), train.num_classes())?;
    let mut sched = PruneScheduler::new(cfg.schedule.clone(), cfg.seed)?;
    let mut acc = ActivationAccumulator::for_network(&net);

    let mut metrics = csv::Writer::from_path(out_dir.join(METRICS_FILE))?;
    let mut rows = Vec::with_capacity(cfg.epochs);
    let mut checkpoints = Vec::new();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let macs_before = net.total_macs();
        let want_acts = sched.needs_activations(epoch);
        acc.reset();

        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for idx in batches(train.len(), cfg.batch_size, cfg.seed, epoch as u64) {
            let (x, labels) = train.batch::<T>(&idx);
            let stats = net.train_step(&x, &labels, &cfg.optimizer, want_acts.then_some(&mut acc))?;
            if !stats.loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at epoch {epoch} after {seen} samples"
                )));
            }
            loss_sum += stats.loss * stats.batch as f64;
            correct += stats.correct;
            seen += stats.batch;
        }
        let executed_macs = (net.total_macs() - macs_before).total();

        let hook_start = Instant::now();
        sched.epoch_end_hook(&mut net, epoch, want_acts.then_some(&acc))?;
        let hook_seconds = hook_start.elapsed().as_secs_f64();
        let scanned = cfg.schedule.criterion == Criterion::L1 && cfg.schedule.is_pruning_epoch(epoch);

        let test_acc = net.evaluate(test, cfg.eval_batch_size)?;
        let row = MetricsRow {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_acc: 100.0 * correct as f64 / seen as f64,
            test_acc,
            pruned_pct: zero_filters_percentage(&net),
            unmasked_params: net.unmasked_params(),
            executed_macs,
            wall_seconds: if cfg.record_timing {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
            t_l1norm_seconds: if cfg.record_timing && scanned { hook_seconds } else { 0.0 },
        };

        metrics.serialize(&row)?;
        metrics.flush()?;
        on_epoch(&row);
        rows.push(row);

        if epoch % cfg.checkpoint_every == 0 {
            let path = out_dir.join(checkpoint_name(epoch));
            write_checkpoint(&net, epoch, &path)?;
            checkpoints.push(path);
        }
    }
    let final_path = out_dir.join(FINAL_CHECKPOINT);
    write_checkpoint(&net, cfg.epochs, &final_path)?;
    checkpoints.push(final_path);

    Ok(RunSummary {
        rows,
        out_dir: out_dir.to_path_buf(),
        checkpoints,
    })
}

/// Reads a metrics.csv written by [`run`].
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    if !path.is_file() {
        return Err(Error::Corrupt {
            path: path.display().to_string(),
            msg: "file not found".into(),
        });
    }
    let mut rdr = csv::Reader::from_path(path)?;
    let rows = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<MetricsRow>, _>>()
        .map_err(|e| Error::Corrupt {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
    if rows.is_empty() {
        return Err(Error::Corrupt {
            path: path.display().to_string(),
            msg: "no metric rows".into(),
        });
    }
    Ok(rows)
}
