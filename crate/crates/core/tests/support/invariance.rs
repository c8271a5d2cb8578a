//! Ranking invariances of the significance criteria.

#![allow(dead_code)]

use prunetrain::criteria::{
    apply_mask, l1_scores, mean_activation_scores, select_lowest_per_layer, select_victims, ActivationAccumulator,
    Criterion, FilterRef, L1Scope, SelectionConstraints,
};
use prunetrain::data::{batches, synthetic_blobs};
use prunetrain::kernels::{AdamHyper, BatchNormConfig};
use prunetrain::network::{vgg_micro, Network};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const SCALES: [f64; 3] = [0.1, 3.0, 100.0];

pub fn partly_pruned_net(seed: u64) -> Network<f64> {
    let mut net = Network::new([1, 16, 16], &vgg_micro(4), 4, BatchNormConfig::default(), seed).unwrap();
    apply_mask(&mut net, &[FilterRef::new(0, 2), FilterRef::new(1, 7), FilterRef::new(3, 30)]).unwrap();
    net
}

fn l1_victims(net: &Network<f64>, count: usize, scope: L1Scope) -> Vec<FilterRef> {
    let constraints = SelectionConstraints {
        l1_scope: scope,
        ..SelectionConstraints::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    select_victims(Criterion::L1, Some(&l1_scores(net)), &net.masks(), count, &constraints, &mut rng).unwrap()
}

/// Whether scaling every conv weight by `c` leaves the L1 victims unchanged
/// for several victim counts under both scopes.
pub fn l1_victims_survive_scaling(seed: u64, c: f64) -> bool {
    let net = partly_pruned_net(seed);
    let mut scaled = net.clone();
    for layer in scaled.conv_layers_mut() {
        layer.weights.data_mut().iter_mut().for_each(|w| *w *= c);
    }
    [1, 5, 17, 40].iter().all(|&count| {
        [L1Scope::Global, L1Scope::PerLayer]
            .iter()
            .all(|&scope| l1_victims(&net, count, scope) == l1_victims(&scaled, count, scope))
    })
}

/// Indices ordered by ascending score, ties to the lower index.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    idx
}

/// Accumulates post-ReLU activations of a partly pruned VGG-micro over a
/// few synthetic batches and checks that per-layer rankings and MeanAct
/// victims agree between channel sums and channel means.
pub fn mean_act_sum_and_mean_agree(seed: u64) -> bool {
    let mut net = partly_pruned_net(seed);
    let data = synthetic_blobs(4, 96, 16, seed).unwrap();
    let mut acc = ActivationAccumulator::for_network(&net);
    for idx in batches(data.len(), 32, seed, 1) {
        let (x, y) = data.batch::<f64>(&idx);
        net.train_step(&x, &y, &AdamHyper::default(), Some(&mut acc)).unwrap();
    }
    let masks = net.masks();
    let means = mean_activation_scores(&acc, &masks).unwrap();
    let sums: Vec<Vec<f64>> = acc
        .sums()
        .iter()
        .zip(&masks)
        .map(|(s, m)| s.iter().zip(m).map(|(&v, &masked)| if masked { 0.0 } else { v }).collect())
        .collect();
    let same_order = means.iter().zip(&sums).all(|(a, b)| ranking(a) == ranking(b));
    let same_victims =
        select_lowest_per_layer(&means, &masks, 1).unwrap() == select_lowest_per_layer(&sums, &masks, 1).unwrap();
    acc.images_seen() == data.len() && same_order && same_victims
}
