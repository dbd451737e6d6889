#![allow(dead_code)]

use kgc_core::graph::{KnowledgeGraph, Triple};
use kgc_core::model::{EmbeddingStore, ModelKind};
use rand::Rng;

pub const MODELS: [ModelKind; 4] = [
    ModelKind::TransE,
    ModelKind::DistMult,
    ModelKind::ComplEx,
    ModelKind::RotatE,
];

/// Which parameter block a flat coordinate refers to.
#[derive(Copy, Clone, Debug)]
pub enum Param {
    Entity(usize, usize),
    Relation(usize, usize),
}

pub fn param_mut(store: &mut EmbeddingStore<f64>, p: Param) -> &mut f64 {
    match p {
        Param::Entity(row, i) => &mut store.entity_mut(row)[i],
        Param::Relation(row, i) => &mut store.relation_mut(row)[i],
    }
}

/// Central difference of `f` along coordinate `p`.
pub fn central_difference(
    store: &EmbeddingStore<f64>,
    p: Param,
    h: f64,
    f: &mut dyn FnMut(&EmbeddingStore<f64>) -> f64,
) -> f64 {
    let mut plus = store.clone();
    *param_mut(&mut plus, p) += h;
    let mut minus = store.clone();
    *param_mut(&mut minus, p) -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Uniformly random graph with distinct train triples and a few held-out
/// ones.
pub fn random_graph<R: Rng>(
    entities: usize,
    relations: usize,
    train: usize,
    held: usize,
    rng: &mut R,
) -> KnowledgeGraph {
    let mut seen = std::collections::HashSet::new();
    let mut all = Vec::new();
    while all.len() < train + held {
        let t = Triple::new(
            rng.gen_range(0..entities),
            rng.gen_range(0..relations),
            rng.gen_range(0..entities),
        );
        if seen.insert(t) {
            all.push(t);
        }
    }
    let rest = all.split_off(train);
    let (valid, test) = rest.split_at(held / 2);
    KnowledgeGraph::new(entities, relations, all, valid.to_vec(), test.to_vec()).unwrap()
}

/// Ranks by sorting every candidate, written independently of the library's
/// counting rank: position of the target in descending order with equal
/// scores placed ahead of it, skipping filtered candidates.
pub fn oracle_rank(scores: &[f64], target: usize, skip: &dyn Fn(usize) -> bool) -> usize {
    let mut order: Vec<usize> = (0..scores.len())
        .filter(|&c| c == target || !skip(c))
        .collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then_with(|| (a == target).cmp(&(b == target)))
    });
    order.iter().position(|&c| c == target).unwrap() + 1
}

/// Brute-force head and tail ranks scoring every candidate triple through
/// `EmbeddingStore::score`.
pub fn oracle_ranks(
    g: &KnowledgeGraph,
    store: &EmbeddingStore<f64>,
    t: &Triple,
    filtered: bool,
) -> (usize, usize) {
    let n = g.entity_count();
    let known = |x: Triple| {
        filtered
            && g.train()
                .iter()
                .chain(g.valid())
                .chain(g.test())
                .any(|&y| y == x)
    };
    let tails: Vec<f64> = (0..n)
        .map(|o| store.score(&Triple::new(t.subject, t.relation, o)).unwrap())
        .collect();
    let heads: Vec<f64> = (0..n)
        .map(|s| store.score(&Triple::new(s, t.relation, t.object)).unwrap())
        .collect();
    let tail = oracle_rank(&tails, t.object, &|o| {
        known(Triple::new(t.subject, t.relation, o))
    });
    let head = oracle_rank(&heads, t.subject, &|s| {
        known(Triple::new(s, t.relation, t.object))
    });
    (head, tail)
}
