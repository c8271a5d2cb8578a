//! When and how much to prune: gradual pruning while training (PWT), its
//! every-k-th-epoch variant, and one-shot prune-then-retrain (PRT).
//!
//! Epochs are numbered from 1. The hook runs after the epoch's last
//! optimizer step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::criteria::{
    apply_mask, l1_scores, mean_activation_scores, select_lowest_global, select_random, select_victims,
    zero_filters_percentage, ActivationAccumulator, Criterion, FilterRef, L1Scope, SelectionConstraints,
};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::Real;

/// Slack for comparing percentages that are ratios of small integers.
const PERC_EPS: f64 = 1e-9;

/// Stream of the ChaCha generator used for random victim selection, kept
/// apart from weight init and batch shuffling.
const RANDOM_PRUNE_STREAM: u64 = 0x7072_756e_65;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Pwt,
    Prt,
    #[default]
    None,
}

/// How a PWT pruning epoch compares the pruned percentage with its target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    /// Mask while the pruned percentage is below this epoch's target, so it
    /// lands in `[target, target + one filter)`.
    #[default]
    Strict,
    /// Mask while the pruned percentage is at most the running threshold,
    /// then raise the threshold by the rate. The threshold starts at the
    /// initial percentage, so it trails the epoch target by one rate step.
    Inclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_criterion")]
    pub criterion: Criterion,
    #[serde(default)]
    pub initial_prune_perc: f64,
    #[serde(default = "default_rate")]
    pub rate_per_epoch: f64,
    #[serde(default)]
    pub target_prune_perc: f64,
    /// Prune only on epochs divisible by `mod_k`.
    #[serde(default = "default_mod_k")]
    pub mod_k: usize,
    #[serde(default)]
    pub prt_prune_epoch: Option<usize>,
    /// Zero means "take the run's epoch count".
    #[serde(default)]
    pub total_epochs: usize,
    /// Count skipped epochs when advancing the target under `mod_k > 1`.
    #[serde(default)]
    pub advance_target_on_skip: bool,
    #[serde(default)]
    pub threshold: Threshold,
    #[serde(default = "default_min_filters")]
    pub min_filters_per_layer: usize,
    #[serde(default)]
    pub l1_scope: L1Scope,
}

fn default_criterion() -> Criterion {
    Criterion::L1
}
fn default_rate() -> f64 {
    1.0
}
fn default_mod_k() -> usize {
    1
}
fn default_min_filters() -> usize {
    1
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            mode: Mode::None,
            criterion: default_criterion(),
            initial_prune_perc: 0.0,
            rate_per_epoch: default_rate(),
            target_prune_perc: 0.0,
            mod_k: default_mod_k(),
            prt_prune_epoch: None,
            total_epochs: 0,
            advance_target_on_skip: false,
            threshold: Threshold::Strict,
            min_filters_per_layer: default_min_filters(),
            l1_scope: L1Scope::Global,
        }
    }
}

impl ScheduleConfig {
    /// Gradual pruning every epoch from 0% at `rate` %/epoch up to `target`.
    pub fn pwt(criterion: Criterion, rate: f64, target: f64, total_epochs: usize) -> Self {
        ScheduleConfig {
            mode: Mode::Pwt,
            criterion,
            rate_per_epoch: rate,
            target_prune_perc: target,
            total_epochs,
            ..Self::default()
        }
    }

    /// One-shot pruning to `target` after epoch `prune_epoch`.
    pub fn prt(criterion: Criterion, target: f64, prune_epoch: usize, total_epochs: usize) -> Self {
        ScheduleConfig {
            mode: Mode::Prt,
            criterion,
            target_prune_perc: target,
            prt_prune_epoch: Some(prune_epoch),
            total_epochs,
            ..Self::default()
        }
    }

    pub fn constraints(&self) -> SelectionConstraints {
        SelectionConstraints {
            min_filters_per_layer: self.min_filters_per_layer,
            l1_scope: self.l1_scope,
        }
    }

    /// Whether `epoch` is one on which PWT prunes.
    pub fn is_pruning_epoch(&self, epoch: usize) -> bool {
        match self.mode {
            Mode::Pwt => epoch >= 1 && epoch % self.mod_k.max(1) == 0,
            Mode::Prt => Some(epoch) == self.prt_prune_epoch,
            Mode::None => false,
        }
    }

    /// Checks every field; errors name the offending field under `prefix`.
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let field = |name: &str| {
            if prefix.is_empty() {
                name.to_string()
            } else {
                format!("{prefix}.{name}")
            }
        };
        if !(self.initial_prune_perc.is_finite() && self.initial_prune_perc >= 0.0) {
            return Err(Error::config(field("initial_prune_perc"), "must be a finite percentage >= 0"));
        }
        if !(self.target_prune_perc.is_finite() && (0.0..100.0).contains(&self.target_prune_perc)) {
            return Err(Error::config(field("target_prune_perc"), "must lie in [0, 100)"));
        }
        if self.mod_k == 0 {
            return Err(Error::config(field("mod_k"), "must be at least 1"));
        }
        if self.total_epochs == 0 {
            return Err(Error::config(field("total_epochs"), "must be at least 1"));
        }
        match self.mode {
            Mode::Pwt => {
                if !(self.rate_per_epoch.is_finite() && self.rate_per_epoch > 0.0) {
                    return Err(Error::config(field("rate_per_epoch"), "must be > 0"));
                }
                if self.initial_prune_perc > self.target_prune_perc {
                    return Err(Error::config(
                        field("initial_prune_perc"),
                        "must not exceed target_prune_perc",
                    ));
                }
                let reached = target_for_epoch(self, self.total_epochs);
                if reached + PERC_EPS < self.target_prune_perc {
                    return Err(Error::config(
                        field("rate_per_epoch"),
                        format!(
                            "schedule reaches only {reached}% by epoch {}, short of the {}% target",
                            self.total_epochs, self.target_prune_perc
                        ),
                    ));
                }
            }
            Mode::Prt => match self.prt_prune_epoch {
                Some(e) if e > 0 && e < self.total_epochs => {}
                Some(_) => {
                    return Err(Error::config(
                        field("prt_prune_epoch"),
                        "must satisfy 0 < prt_prune_epoch < total_epochs",
                    ))
                }
                None => return Err(Error::config(field("prt_prune_epoch"), "required in prt mode")),
            },
            Mode::None => {}
        }
        Ok(())
    }
}

/// The PWT target after `epoch`: `min(initial + rate * pruning epochs so far,
/// target)`.
pub fn target_for_epoch(cfg: &ScheduleConfig, epoch: usize) -> f64 {
    let events = if cfg.advance_target_on_skip {
        epoch
    } else {
        epoch / cfg.mod_k.max(1)
    };
    (cfg.initial_prune_perc + cfg.rate_per_epoch * events as f64).min(cfg.target_prune_perc)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub current_target_perc: f64,
    pub current_prune_perc: f64,
    pub epoch: usize,
}

/// Number of extra filters, out of `total`, needed to bring `zero` to at
/// least `target` percent.
fn filters_to_reach(zero_perc: f64, target: f64, total: usize) -> usize {
    if zero_perc + PERC_EPS >= target {
        return 0;
    }
    let need = (target * total as f64 / 100.0 - PERC_EPS).ceil() as usize;
    let have = (zero_perc * total as f64 / 100.0).round() as usize;
    need.saturating_sub(have).max(1)
}

fn scores_for<T: Real>(
    criterion: Criterion,
    net: &Network<T>,
    acc: Option<&ActivationAccumulator>,
) -> Result<Option<Vec<Vec<f64>>>> {
    Ok(match criterion {
        Criterion::L1 => Some(l1_scores(net)),
        Criterion::MeanAct => Some(mean_activation_scores(acc.ok_or(Error::NoImagesSeen)?, &net.masks())?),
        Criterion::Random => None,
    })
}

/// One-shot masking from the current level up to `target_prune_perc`. L1 and
/// mean-activation scores are ranked globally. Optimizer moments of the
/// surviving filters are kept.
pub fn prt_prune_event<T: Real>(
    net: &mut Network<T>,
    cfg: &ScheduleConfig,
    rng: &mut ChaCha8Rng,
    acc: Option<&ActivationAccumulator>,
) -> Result<Vec<FilterRef>> {
    let current = zero_filters_percentage(net);
    let target = cfg.target_prune_perc;
    if target + PERC_EPS < current {
        return Err(Error::TargetBelowCurrent { target, current });
    }
    let count = filters_to_reach(current, target, net.total_filters());
    if count == 0 {
        return Ok(Vec::new());
    }
    let masks = net.masks();
    let min = cfg.min_filters_per_layer;
    let victims = match scores_for(cfg.criterion, net, acc)? {
        Some(scores) => select_lowest_global(&scores, &masks, count, min)?,
        None => select_random(&masks, count, min, rng)?,
    };
    apply_mask(net, &victims)?;
    Ok(victims)
}

/// Drives a run's pruning decisions epoch by epoch.
#[derive(Clone, Debug)]
pub struct PruneScheduler {
    cfg: ScheduleConfig,
    state: ScheduleState,
    rng: ChaCha8Rng,
}

impl PruneScheduler {
    pub fn new(cfg: ScheduleConfig, seed: u64) -> Result<Self> {
        cfg.validate("schedule")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(RANDOM_PRUNE_STREAM);
        let state = ScheduleState {
            current_target_perc: match cfg.mode {
                Mode::Pwt => cfg.initial_prune_perc,
                _ => 0.0,
            },
            ..ScheduleState::default()
        };
        Ok(PruneScheduler { cfg, state, rng })
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.cfg
    }

    pub fn state(&self) -> &ScheduleState {
        &self.state
    }

    /// Whether the hook for `epoch` will read mean activations.
    pub fn needs_activations(&self, epoch: usize) -> bool {
        self.cfg.criterion == Criterion::MeanAct && self.cfg.is_pruning_epoch(epoch)
    }

    /// Runs the end-of-epoch pruning step and returns the filters masked.
    pub fn epoch_end_hook<T: Real>(
        &mut self,
        net: &mut Network<T>,
        epoch: usize,
        acc: Option<&ActivationAccumulator>,
    ) -> Result<Vec<FilterRef>> {
        if epoch == 0 || epoch <= self.state.epoch {
            return Err(Error::InvalidArgument(format!(
                "epoch {epoch} follows epoch {}",
                self.state.epoch
            )));
        }
        self.state.epoch = epoch;
        let victims = match self.cfg.mode {
            Mode::None => Vec::new(),
            Mode::Prt => {
                if Some(epoch) == self.cfg.prt_prune_epoch {
                    self.state.current_target_perc = self.cfg.target_prune_perc;
                    prt_prune_event(net, &self.cfg, &mut self.rng, acc)?
                } else {
                    Vec::new()
                }
            }
            Mode::Pwt if self.cfg.is_pruning_epoch(epoch) => self.pwt_prune(net, epoch, acc)?,
            Mode::Pwt => Vec::new(),
        };
        self.state.current_prune_perc = zero_filters_percentage(net);
        Ok(victims)
    }

    fn pwt_prune<T: Real>(
        &mut self,
        net: &mut Network<T>,
        epoch: usize,
        acc: Option<&ActivationAccumulator>,
    ) -> Result<Vec<FilterRef>> {
        let total = net.total_filters();
        let current = zero_filters_percentage(net);
        let (below, count) = match self.cfg.threshold {
            Threshold::Strict => {
                let target = target_for_epoch(&self.cfg, epoch);
                self.state.current_target_perc = target;
                let count = filters_to_reach(current, target, total);
                (count > 0, count)
            }
            Threshold::Inclusive => {
                let p = self.state.current_target_perc;
                // Smallest count whose result first exceeds p.
                let have = (current * total as f64 / 100.0).round() as usize;
                let limit = (p * total as f64 / 100.0 + PERC_EPS).floor() as usize;
                let count = (limit + 1).saturating_sub(have);
                self.state.current_target_perc = (p + self.cfg.rate_per_epoch).min(self.cfg.target_prune_perc);
                (current <= p + PERC_EPS, count)
            }
        };
        if !below {
            return Ok(Vec::new());
        }
        let scores = scores_for(self.cfg.criterion, net, acc)?;
        let victims = select_victims(
            self.cfg.criterion,
            scores.as_deref(),
            &net.masks(),
            count,
            &self.cfg.constraints(),
            &mut self.rng,
        )?;
        apply_mask(net, &victims)?;
        Ok(victims)
    }
}
