//! Filter significance scores and victim selection.
//!
//! Scores are indexed `[conv layer][filter]`, where the conv layer index
//! counts convolution layers only. Lower scores are pruned first.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::ConvLayerState;
use crate::network::Network;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FilterRef {
    pub layer: usize,
    pub filter: usize,
}

impl FilterRef {
    pub fn new(layer: usize, filter: usize) -> Self {
        FilterRef { layer, filter }
    }
}

impl fmt::Display for FilterRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(conv {}, filter {})", self.layer, self.filter)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    L1,
    MeanAct,
    Random,
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::L1 => "l1",
            Criterion::MeanAct => "mean_act",
            Criterion::Random => "random",
        })
    }
}

/// How the L1 criterion ranks filters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L1Scope {
    /// One ranking across every conv layer.
    #[default]
    Global,
    /// Prune the lowest filter of the least-pruned layer, keeping per-layer
    /// pruned fractions level.
    PerLayer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionConstraints {
    pub min_filters_per_layer: usize,
    pub l1_scope: L1Scope,
}

impl Default for SelectionConstraints {
    fn default() -> Self {
        SelectionConstraints {
            min_filters_per_layer: 1,
            l1_scope: L1Scope::Global,
        }
    }
}

/// Sum of absolute weights of each filter. Masked filters are exactly zero.
pub fn l1_norm_per_filter<T: Real>(layer: &ConvLayerState<T>) -> Vec<f64> {
    (0..layer.out_channels())
        .map(|o| {
            if layer.filter_mask[o] {
                0.0
            } else {
                layer
                    .filter_weights(o)
                    .iter()
                    .map(|w| w.abs().to_f64_lossy())
                    .sum()
            }
        })
        .collect()
}

pub fn l1_scores<T: Real>(net: &Network<T>) -> Vec<Vec<f64>> {
    net.conv_layers().into_iter().map(l1_norm_per_filter).collect()
}

/// Per-channel sums of post-ReLU conv activations over the images seen this
/// epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationAccumulator {
    sums: Vec<Vec<f64>>,
    images_seen: usize,
}

impl ActivationAccumulator {
    pub fn new(channels_per_layer: &[usize]) -> Self {
        ActivationAccumulator {
            sums: channels_per_layer.iter().map(|&c| vec![0.0; c]).collect(),
            images_seen: 0,
        }
    }

    pub fn for_network<T: Real>(net: &Network<T>) -> Self {
        let chans: Vec<usize> = net.conv_layers().iter().map(|c| c.out_channels()).collect();
        Self::new(&chans)
    }

    pub fn reset(&mut self) {
        self.sums.iter_mut().for_each(|s| s.fill(0.0));
        self.images_seen = 0;
    }

    pub fn images_seen(&self) -> usize {
        self.images_seen
    }

    pub fn sums(&self) -> &[Vec<f64>] {
        &self.sums
    }

    /// Adds one batch: `outputs[l]` is conv layer `l`'s post-ReLU output
    /// `[B, C, H, W]`.
    pub fn accumulate<T: Real>(&mut self, outputs: &[&Tensor<T>]) -> Result<()> {
        if outputs.len() != self.sums.len() {
            return Err(Error::shape(
                "accumulate_mean_activation",
                &[self.sums.len()],
                &[outputs.len()],
            ));
        }
        let mut batch = None;
        for (out, sums) in outputs.iter().zip(&self.sums) {
            let sh = out.shape();
            if sh.len() != 4 || sh[1] != sums.len() || batch.is_some_and(|b| b != sh[0]) {
                return Err(Error::shape(
                    "accumulate_mean_activation",
                    &[batch.unwrap_or(0), sums.len(), 0, 0],
                    sh,
                ));
            }
            batch = Some(sh[0]);
        }
        for (out, sums) in outputs.iter().zip(self.sums.iter_mut()) {
            let sh = out.shape();
            let (b, c, sp) = (sh[0], sh[1], sh[2] * sh[3]);
            for bb in 0..b {
                for (ch, sum) in sums.iter_mut().enumerate().take(c) {
                    let base = (bb * c + ch) * sp;
                    *sum += out.data()[base..base + sp]
                        .iter()
                        .map(|v| v.to_f64_lossy())
                        .sum::<f64>();
                }
            }
        }
        self.images_seen += batch.unwrap_or(0);
        Ok(())
    }
}

/// Channel sums divided by the number of images seen; masked channels score 0.
pub fn mean_activation_scores(acc: &ActivationAccumulator, masks: &[Vec<bool>]) -> Result<Vec<Vec<f64>>> {
    if acc.images_seen == 0 {
        return Err(Error::NoImagesSeen);
    }
    if masks.len() != acc.sums.len() {
        return Err(Error::shape("mean_activation_scores", &[acc.sums.len()], &[masks.len()]));
    }
    let n = acc.images_seen as f64;
    Ok(acc
        .sums
        .iter()
        .zip(masks)
        .map(|(sums, mask)| {
            sums.iter()
                .zip(mask)
                .map(|(&s, &m)| if m { 0.0 } else { s / n })
                .collect()
        })
        .collect())
}

fn check_scores(scores: &[Vec<f64>], masks: &[Vec<bool>]) -> Result<()> {
    if scores.len() != masks.len() || scores.iter().zip(masks).any(|(s, m)| s.len() != m.len()) {
        return Err(Error::shape(
            "select_victims",
            &masks.iter().map(Vec::len).collect::<Vec<_>>(),
            &scores.iter().map(Vec::len).collect::<Vec<_>>(),
        ));
    }
    Ok(())
}

/// Filters that can still be removed from each layer without going below
/// the per-layer minimum.
fn removable(masks: &[Vec<bool>], min: usize) -> Vec<usize> {
    masks
        .iter()
        .map(|m| m.iter().filter(|&&x| !x).count().saturating_sub(min))
        .collect()
}

fn ensure_available(masks: &[Vec<bool>], min: usize, count: usize) -> Result<Vec<usize>> {
    let room = removable(masks, min);
    let available: usize = room.iter().sum();
    if count > available {
        let unmasked: usize = masks.iter().flatten().filter(|&&m| !m).count();
        if unmasked == 0 {
            return Err(Error::NoUnmaskedFilters);
        }
        return Err(Error::MinFiltersViolation {
            requested: count,
            available,
            min_per_layer: min,
        });
    }
    Ok(room)
}

/// The `count` lowest-scoring unmasked filters across all layers. Ties go to
/// the lower layer index, then the lower filter index. Layers already at the
/// minimum are skipped.
pub fn select_lowest_global(
    scores: &[Vec<f64>],
    masks: &[Vec<bool>],
    count: usize,
    min_filters_per_layer: usize,
) -> Result<Vec<FilterRef>> {
    check_scores(scores, masks)?;
    let mut room = ensure_available(masks, min_filters_per_layer, count)?;
    let mut candidates: Vec<(f64, FilterRef)> = scores
        .iter()
        .zip(masks)
        .enumerate()
        .flat_map(|(l, (s, m))| {
            s.iter()
                .zip(m)
                .enumerate()
                .filter(|(_, (_, &masked))| !masked)
                .map(move |(f, (&score, _))| (score, FilterRef::new(l, f)))
        })
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut out = Vec::with_capacity(count);
    for (_, fr) in candidates {
        if out.len() == count {
            break;
        }
        if room[fr.layer] > 0 {
            room[fr.layer] -= 1;
            out.push(fr);
        }
    }
    Ok(out)
}

/// The lowest-scoring unmasked filter of every layer that can still lose
/// one (ties to the lower filter index).
pub fn select_lowest_per_layer(
    scores: &[Vec<f64>],
    masks: &[Vec<bool>],
    min_filters_per_layer: usize,
) -> Result<Vec<FilterRef>> {
    check_scores(scores, masks)?;
    let room = removable(masks, min_filters_per_layer);
    let out: Vec<FilterRef> = scores
        .iter()
        .zip(masks)
        .enumerate()
        .filter(|(l, _)| room[*l] > 0)
        .filter_map(|(l, (s, m))| {
            s.iter()
                .zip(m)
                .enumerate()
                .filter(|(_, (_, &masked))| !masked)
                .min_by(|a, b| a.1 .0.total_cmp(b.1 .0).then(a.0.cmp(&b.0)))
                .map(|(f, _)| FilterRef::new(l, f))
        })
        .collect();
    if out.is_empty() {
        ensure_available(masks, min_filters_per_layer, 1)?;
    }
    Ok(out)
}

/// The lowest filter of the layer with the smallest pruned fraction among
/// layers that can still lose one.
fn select_lowest_balanced(
    scores: &[Vec<f64>],
    masks: &[Vec<bool>],
    count: usize,
    min_filters_per_layer: usize,
) -> Result<Vec<FilterRef>> {
    check_scores(scores, masks)?;
    ensure_available(masks, min_filters_per_layer, count)?;
    let mut masks = masks.to_vec();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let room = removable(&masks, min_filters_per_layer);
        let layer = (0..masks.len())
            .filter(|&l| room[l] > 0)
            .min_by(|&a, &b| {
                let frac = |l: usize| masks[l].iter().filter(|&&m| m).count() as f64 / masks[l].len() as f64;
                frac(a).total_cmp(&frac(b)).then(a.cmp(&b))
            })
            .ok_or(Error::NoUnmaskedFilters)?;
        let pick = select_lowest_per_layer(&scores[layer..=layer], &masks[layer..=layer], min_filters_per_layer)?[0];
        masks[layer][pick.filter] = true;
        out.push(FilterRef::new(layer, pick.filter));
    }
    Ok(out)
}

/// `count` uniformly random unmasked filters: draw a layer, then a filter in
/// it, and redraw when the filter is masked, already chosen, or its layer is
/// at the minimum.
pub fn select_random<R: Rng + ?Sized>(
    masks: &[Vec<bool>],
    count: usize,
    min_filters_per_layer: usize,
    rng: &mut R,
) -> Result<Vec<FilterRef>> {
    let mut room = ensure_available(masks, min_filters_per_layer, count)?;
    let mut taken: Vec<Vec<bool>> = masks.to_vec();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let layer = rng.random_range(0..masks.len());
        let filter = rng.random_range(0..masks[layer].len());
        if taken[layer][filter] || room[layer] == 0 {
            continue;
        }
        taken[layer][filter] = true;
        room[layer] -= 1;
        out.push(FilterRef::new(layer, filter));
    }
    Ok(out)
}

/// Dispatches to the selector for `criterion`. L1 and MeanAct need
/// `scores`; MeanAct ignores `count` and returns one filter per layer.
pub fn select_victims<R: Rng + ?Sized>(
    criterion: Criterion,
    scores: Option<&[Vec<f64>]>,
    masks: &[Vec<bool>],
    count: usize,
    constraints: &SelectionConstraints,
    rng: &mut R,
) -> Result<Vec<FilterRef>> {
    let min = constraints.min_filters_per_layer;
    let need_scores = || scores.ok_or_else(|| Error::InvalidArgument(format!("{criterion} selection needs scores")));
    match criterion {
        Criterion::L1 => match constraints.l1_scope {
            L1Scope::Global => select_lowest_global(need_scores()?, masks, count, min),
            L1Scope::PerLayer => select_lowest_balanced(need_scores()?, masks, count, min),
        },
        Criterion::MeanAct => select_lowest_per_layer(need_scores()?, masks, min),
        Criterion::Random => select_random(masks, count, min, rng),
    }
}

/// Masks every victim: weights, bias, gamma and beta are zeroed, Adam moments
/// cleared, and the filter is frozen from then on. Nothing is changed if any
/// victim is out of range, already masked, or listed twice.
pub fn apply_mask<T: Real>(net: &mut Network<T>, victims: &[FilterRef]) -> Result<()> {
    let masks = net.masks();
    let mut seen = std::collections::BTreeSet::new();
    for &v in victims {
        let mask = masks.get(v.layer).ok_or(Error::FilterOutOfRange(v))?;
        let masked = *mask.get(v.filter).ok_or(Error::FilterOutOfRange(v))?;
        if masked || !seen.insert(v) {
            return Err(Error::AlreadyMasked(v));
        }
    }
    let mut layers = net.conv_layers_mut();
    for v in victims {
        layers[v.layer].mask_filter(v.filter);
    }
    Ok(())
}

/// Percentage of conv filters whose weights are all zero, masked or not.
pub fn zero_filters_percentage<T: Real>(net: &Network<T>) -> f64 {
    let (mut zero, mut total) = (0usize, 0usize);
    for layer in net.conv_layers() {
        for o in 0..layer.out_channels() {
            total += 1;
            if layer.filter_weights(o).iter().all(|w| *w == T::zero()) {
                zero += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        100.0 * zero as f64 / total as f64
    }
}
