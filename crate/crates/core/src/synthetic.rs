//! Seeded synthetic graphs for tests, the acceptance suite and `make-toy`.

use std::collections::HashSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{KnowledgeGraph, Triple};

/// Chung-Lu style random multigraph with power-law expected degrees.
#[derive(Clone, Debug)]
pub struct ChungLuConfig {
    pub entities: usize,
    pub triples: usize,
    pub relations: usize,
    /// Degree-distribution exponent; must exceed 2.
    pub exponent: f64,
    pub seed: u64,
}

/// Draws distinct, loop-free triples whose endpoints are chosen with
/// probability proportional to `(rank + 1)^(-1 / (exponent - 1))`.
pub fn chung_lu_triples(cfg: &ChungLuConfig) -> Vec<Triple> {
    assert!(cfg.entities >= 2 && cfg.relations >= 1 && cfg.exponent > 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gamma = 1.0 / (cfg.exponent - 1.0);
    let mut ids: Vec<usize> = (0..cfg.entities).collect();
    ids.shuffle(&mut rng);
    let weights: Vec<f64> = (0..cfg.entities)
        .map(|rank| ((rank + 1) as f64).powf(-gamma))
        .collect();
    let pick = WeightedIndex::new(&weights).expect("positive weights");
    let mut seen = HashSet::with_capacity(cfg.triples);
    let mut out = Vec::with_capacity(cfg.triples);
    let mut attempts = 0usize;
    while out.len() < cfg.triples {
        attempts += 1;
        assert!(
            attempts < cfg.triples * 100 + 10_000,
            "graph too dense for the requested triple count"
        );
        let s = ids[pick.sample(&mut rng)];
        let o = ids[pick.sample(&mut rng)];
        if s == o {
            continue;
        }
        let t = Triple::new(s, rng.gen_range(0..cfg.relations), o);
        if seen.insert(t) {
            out.push(t);
        }
    }
    out
}

/// Chung-Lu graph with everything in the train split.
pub fn chung_lu(cfg: &ChungLuConfig) -> KnowledgeGraph {
    KnowledgeGraph::from_train(cfg.entities, cfg.relations, chung_lu_triples(cfg))
        .expect("generated triples are valid")
}

/// Moves a random `holdout` fraction of `triples` out of train, split evenly
/// between valid and test.
pub fn split_holdout(
    entities: usize,
    relations: usize,
    mut triples: Vec<Triple>,
    holdout: f64,
    seed: u64,
) -> KnowledgeGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    triples.shuffle(&mut rng);
    let held = ((triples.len() as f64) * holdout).round() as usize;
    let rest = triples.split_off(held);
    let valid_len = held / 2;
    let test = triples.split_off(valid_len);
    KnowledgeGraph::new(entities, relations, rest, triples, test).expect("valid split")
}

/// Sizes of the 5k-triple sampler-comparison graph.
pub fn sweep_graph(seed: u64) -> KnowledgeGraph {
    chung_lu(&ChungLuConfig {
        entities: 1_000,
        triples: 5_000,
        relations: 8,
        exponent: 2.5,
        seed,
    })
}

/// 1,000 entities with mean total degree 12.
pub fn variance_graph(seed: u64) -> KnowledgeGraph {
    chung_lu(&ChungLuConfig {
        entities: 1_000,
        triples: 6_000,
        relations: 10,
        exponent: 2.5,
        seed,
    })
}

/// Same entity, relation and train counts as FB15k-237, power-law degrees.
pub fn fb15k237_like(seed: u64) -> KnowledgeGraph {
    chung_lu(&ChungLuConfig {
        entities: 14_541,
        triples: 272_115,
        relations: 237,
        exponent: 2.2,
        seed,
    })
}

/// Planted-structure toy: 200 entities in 50 clusters of 4 arranged on a
/// ring, three relations.
///
/// * relation 0 is symmetric: every ordered pair inside a cluster;
/// * relation 1 links each entity to every member of the next cluster;
/// * relation 2 is relation 1 applied twice (two clusters ahead).
///
/// 2,200 triples; `holdout` of them go to valid/test.
pub fn planted_triples() -> Vec<Triple> {
    const CLUSTERS: usize = 50;
    const SIZE: usize = 4;
    let member = |c: usize, k: usize| (c % CLUSTERS) * SIZE + k;
    let mut out = Vec::new();
    for c in 0..CLUSTERS {
        for a in 0..SIZE {
            for b in 0..SIZE {
                if a != b {
                    out.push(Triple::new(member(c, a), 0, member(c, b)));
                }
                out.push(Triple::new(member(c, a), 1, member(c + 1, b)));
                out.push(Triple::new(member(c, a), 2, member(c + 2, b)));
            }
        }
    }
    out
}

pub fn planted_graph(holdout: f64, seed: u64) -> KnowledgeGraph {
    split_holdout(200, 3, planted_triples(), holdout, seed)
}
