#![allow(dead_code)]

use std::collections::BTreeSet;

use codlr::config::Mode;
use codlr::lookup::CompositionKind;
use codlr::model::ModelParams;
use codlr::{TrainConfig, TripleStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random graph with every triple in train and distinct (h, r, t).
pub fn random_store(seed: u64, entities: usize, relations: usize, triples: usize) -> TripleStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = BTreeSet::new();
    while set.len() < triples {
        let h = rng.gen_range(0..entities as u32);
        let t = rng.gen_range(0..entities as u32);
        set.insert((h, rng.gen_range(0..relations as u32), t));
    }
    let mut train: Vec<_> = set.into_iter().collect();
    // keep a seed-dependent order so first-occurrence ids vary
    use rand::seq::SliceRandom;
    train.shuffle(&mut rng);
    TripleStore::from_base(
        (0..entities).map(|i| format!("e{i}")).collect(),
        (0..relations).map(|i| format!("r{i}")).collect(),
        [train, vec![], vec![]],
    )
    .unwrap()
}

pub fn codlr_config(scorer: codlr::ScoreFunction, kind: CompositionKind, lambda: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        scorer,
        mode: Mode::Codlr,
        dim: 5,
        dict_size: 3,
        composition: kind,
        lambda,
        seed,
        ..TrainConfig::default()
    }
}

/// Moves the MLP bias off zero so the lookup is not near-uniform.
pub fn jitter_bias(params: &mut ModelParams, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for b in &mut params.mlp_bias {
        *b = rng.gen_range(-0.5..0.5);
    }
}

/// Smallest |pre-activation| of the lookup MLP over the training queries.
pub fn min_preactivation(params: &ModelParams, store: &TripleStore) -> f64 {
    let n = params.dict_size;
    let mut smallest = f64::INFINITY;
    for &(h, r) in store.train_pairs() {
        let trace = params.lookup(h, r).unwrap();
        let mlp = params.mlp_index(r);
        let wlen = params.context_dim() * n;
        let w = &params.mlp_weight[mlp * wlen..(mlp + 1) * wlen];
        let b = &params.mlp_bias[mlp * n..(mlp + 1) * n];
        for j in 0..n {
            let z: f64 = trace
                .context
                .iter()
                .enumerate()
                .map(|(i, c)| c * f64::from(w[i * n + j]))
                .sum::<f64>()
                + f64::from(b[j]);
            smallest = smallest.min(z.abs());
        }
    }
    smallest
}
