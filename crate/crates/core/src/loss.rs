//! Negative sampling, the soft-margin objective with optional
//! self-adversarial weighting, and the Neighbors' Loss.
//!
//! For a positive `t` with negatives `T'_t` the soft-margin term is
//!
//! ```text
//! ℓ(t) = -½ [ ln σ(φ(t) − γ) + Σ_j w_j ln σ(γ − φ(t'_j)) ]
//! ```
//!
//! with `w_j = 1/n`, or `softmax(α φ(t'))` held constant when `α > 0`.

use std::collections::HashMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GraphError, LossError};
use crate::graph::{KnowledgeGraph, Triple};
use crate::model::{EmbeddingStore, ModelKind, ScoreGradient};
use crate::sampler::Minibatch;
use crate::scalar::{log_sigmoid, sigmoid, Scalar};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CorruptedSlot {
    Head,
    Tail,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Negative {
    pub triple: Triple,
    pub slot: CorruptedSlot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// γ.
    pub margin: f64,
    pub negatives_per_positive: usize,
    /// α; zero disables reweighting.
    pub adversarial_temperature: f64,
    /// Reject corruptions that are known triples.
    pub filtered_negatives: bool,
    pub neighbors_loss_enabled: bool,
    /// `None` means unlimited.
    pub neighbor_cap: Option<usize>,
    /// Normalize the Neighbors' Loss bracket by the neighbor count before
    /// capping instead of after.
    pub normalize_pre_cap: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 0.0,
            negatives_per_positive: 64,
            adversarial_temperature: 0.0,
            filtered_negatives: true,
            neighbors_loss_enabled: false,
            neighbor_cap: None,
            normalize_pre_cap: false,
        }
    }
}

impl LossConfig {
    /// Defaults per model: distance models use γ = −6 so the positive term
    /// reads `ln σ(6 − d)`; RotatE reweights negatives with α = 1.
    pub fn for_model(model: ModelKind) -> Self {
        let mut cfg = LossConfig::default();
        if model.is_distance() {
            cfg.margin = -6.0;
        }
        if model == ModelKind::RotatE {
            cfg.adversarial_temperature = 1.0;
        }
        cfg
    }
}

/// Per-row gradient accumulator; only touched rows are stored.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseGrad<T> {
    entities: HashMap<usize, Vec<T>>,
    relations: HashMap<usize, Vec<T>>,
    entity_width: usize,
    relation_width: usize,
}

impl<T: Scalar> SparseGrad<T> {
    pub fn for_store(store: &EmbeddingStore<T>) -> Self {
        SparseGrad {
            entities: HashMap::new(),
            relations: HashMap::new(),
            entity_width: store.entity_width(),
            relation_width: store.relation_width(),
        }
    }

    fn add_row(map: &mut HashMap<usize, Vec<T>>, width: usize, row: usize, coeff: T, g: &[T]) {
        let acc = map.entry(row).or_insert_with(|| vec![T::zero(); width]);
        for (a, &x) in acc.iter_mut().zip(g) {
            *a += coeff * x;
        }
    }

    /// Adds `coeff · ∂φ(t)` to the rows of `t`.
    pub fn add_score_gradient(&mut self, t: &Triple, coeff: T, g: &ScoreGradient<T>) {
        Self::add_row(
            &mut self.entities,
            self.entity_width,
            t.subject,
            coeff,
            &g.d_subject,
        );
        Self::add_row(
            &mut self.relations,
            self.relation_width,
            t.relation,
            coeff,
            &g.d_relation,
        );
        Self::add_row(
            &mut self.entities,
            self.entity_width,
            t.object,
            coeff,
            &g.d_object,
        );
    }

    pub fn add_entity(&mut self, row: usize, coeff: T, g: &[T]) {
        Self::add_row(&mut self.entities, self.entity_width, row, coeff, g);
    }

    pub fn merge(&mut self, other: &SparseGrad<T>, coeff: T) {
        for (&row, g) in &other.entities {
            Self::add_row(&mut self.entities, self.entity_width, row, coeff, g);
        }
        for (&row, g) in &other.relations {
            Self::add_row(&mut self.relations, self.relation_width, row, coeff, g);
        }
    }

    pub fn entity(&self, row: usize) -> Option<&[T]> {
        self.entities.get(&row).map(Vec::as_slice)
    }

    pub fn relation(&self, row: usize) -> Option<&[T]> {
        self.relations.get(&row).map(Vec::as_slice)
    }

    pub fn entities(&self) -> impl Iterator<Item = (usize, &[T])> {
        self.entities.iter().map(|(&k, v)| (k, v.as_slice()))
    }

    pub fn relations(&self) -> impl Iterator<Item = (usize, &[T])> {
        self.relations.iter().map(|(&k, v)| (k, v.as_slice()))
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty() && self.relations.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.entities
            .values()
            .chain(self.relations.values())
            .all(|row| row.iter().all(|x| x.is_finite()))
    }
}

const MAX_FILTER_RETRIES: usize = 100;

/// `n` corruptions of `t`, each replacing head or tail (fair coin) with a
/// uniformly drawn different entity. When `filtered`, corruptions that are
/// known triples are redrawn up to a fixed retry budget; a negative whose
/// budget runs out is dropped, so fewer than `n` may come back.
pub fn corrupt<R: Rng + ?Sized>(
    g: &KnowledgeGraph,
    t: &Triple,
    n: usize,
    filtered: bool,
    rng: &mut R,
) -> Result<Vec<Negative>, LossError> {
    let ne = g.entity_count();
    if ne < 2 {
        return Err(LossError::TooFewEntities(ne));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let slot = if rng.gen::<bool>() {
            CorruptedSlot::Head
        } else {
            CorruptedSlot::Tail
        };
        let original = match slot {
            CorruptedSlot::Head => t.subject,
            CorruptedSlot::Tail => t.object,
        };
        for _ in 0..MAX_FILTER_RETRIES {
            let mut e = rng.gen_range(0..ne - 1);
            if e >= original {
                e += 1;
            }
            let triple = match slot {
                CorruptedSlot::Head => Triple::new(e, t.relation, t.object),
                CorruptedSlot::Tail => Triple::new(t.subject, t.relation, e),
            };
            if !filtered || !g.is_known(&triple) {
                out.push(Negative { triple, slot });
                break;
            }
        }
    }
    if out.len() < n {
        log::warn!(
            "filtered corruption of {:?} produced {} of {} negatives",
            t,
            out.len(),
            n
        );
    }
    Ok(out)
}

/// `softmax(α · scores)`; uniform when `α = 0`.
pub fn adversarial_weights<T: Scalar>(scores: &[T], alpha: T) -> Vec<T> {
    let n = scores.len();
    if n == 0 {
        return Vec::new();
    }
    if alpha == T::zero() {
        return vec![T::one() / T::lit(n as f64); n];
    }
    let max = scores
        .iter()
        .map(|&s| alpha * s)
        .fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = scores.iter().map(|&s| (alpha * s - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Loss value of one positive with caller-fixed negative weights.
pub fn softmargin_loss_with_weights<T: Scalar>(
    store: &EmbeddingStore<T>,
    t: &Triple,
    negatives: &[Triple],
    margin: T,
    weights: &[T],
) -> Result<T, LossError> {
    let pos = store.score(t)?;
    let mut neg = T::zero();
    for (n, &w) in negatives.iter().zip(weights) {
        neg += w * log_sigmoid(margin - store.score(n)?);
    }
    Ok(-T::lit(0.5) * (log_sigmoid(pos - margin) + neg))
}

/// Soft-margin loss of `t` against `negatives`. Adds `scale · ∂ℓ/∂θ` into
/// `grad` and returns the unscaled `ℓ`.
pub fn softmargin_loss_and_grads<T: Scalar>(
    store: &EmbeddingStore<T>,
    t: &Triple,
    negatives: &[Triple],
    cfg: &LossConfig,
    grad: &mut SparseGrad<T>,
    scale: T,
) -> Result<T, LossError> {
    if negatives.is_empty() {
        return Err(LossError::NoNegatives);
    }
    let half = T::lit(0.5);
    let margin = T::lit(cfg.margin);
    let (pos, pos_grad) = store.score_with_gradient(t)?;
    let mut scored = Vec::with_capacity(negatives.len());
    for n in negatives {
        scored.push(store.score_with_gradient(n)?);
    }
    let scores: Vec<T> = scored.iter().map(|(s, _)| *s).collect();
    let weights = adversarial_weights(&scores, T::lit(cfg.adversarial_temperature));

    let mut neg_term = T::zero();
    for (&s, &w) in scores.iter().zip(&weights) {
        neg_term += w * log_sigmoid(margin - s);
    }
    let loss = -half * (log_sigmoid(pos - margin) + neg_term);

    // d/dx ln σ(x) = σ(−x)
    grad.add_score_gradient(t, -scale * half * sigmoid(margin - pos), &pos_grad);
    for ((n, (s, g)), &w) in negatives.iter().zip(&scored).zip(&weights) {
        grad.add_score_gradient(n, scale * half * w * sigmoid(*s - margin), g);
    }
    Ok(loss)
}

/// Loss and gradient of one minibatch, both averaged over its positives.
#[derive(Clone, Debug)]
pub struct BatchLoss<T> {
    pub loss: T,
    pub grad: SparseGrad<T>,
    pub negatives: usize,
    /// Neighbor triples pulled in by the Neighbors' Loss (post-cap).
    pub neighbor_triples: usize,
}

fn negatives_of<R: Rng + ?Sized>(
    g: &KnowledgeGraph,
    t: &Triple,
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<Vec<Triple>, LossError> {
    Ok(corrupt(
        g,
        t,
        cfg.negatives_per_positive,
        cfg.filtered_negatives,
        rng,
    )?
    .into_iter()
    .map(|n| n.triple)
    .collect())
}

/// Plain soft-margin loss over a minibatch.
pub fn vanilla_batch_loss<T: Scalar, R: Rng + ?Sized>(
    g: &KnowledgeGraph,
    store: &EmbeddingStore<T>,
    m: &Minibatch,
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<BatchLoss<T>, LossError> {
    let mut grad = SparseGrad::for_store(store);
    let scale = T::one() / T::lit(m.len().max(1) as f64);
    let mut total = T::zero();
    let mut negatives = 0;
    for t in &m.positives {
        let negs = negatives_of(g, t, cfg, rng)?;
        if negs.is_empty() {
            continue;
        }
        negatives += negs.len();
        total += softmargin_loss_and_grads(store, t, &negs, cfg, &mut grad, scale)?;
    }
    Ok(BatchLoss {
        loss: total * scale,
        grad,
        negatives,
        neighbor_triples: 0,
    })
}

/// Neighbor set of train triple `index` after applying the cap by uniform
/// subsampling. Also returns the pre-cap count.
pub fn capped_neighbors<R: Rng + ?Sized>(
    g: &KnowledgeGraph,
    index: usize,
    cap: Option<usize>,
    rng: &mut R,
) -> (Vec<usize>, usize) {
    let all = g.neighbor_indices(index);
    let total = all.len();
    match cap {
        Some(0) => (Vec::new(), total),
        Some(c) if c < total => {
            let mut picked: Vec<usize> = index::sample(rng, total, c)
                .into_iter()
                .map(|j| all[j])
                .collect();
            picked.sort_unstable();
            (picked, total)
        }
        _ => (all, total),
    }
}

/// Neighbors' Loss for one positive: `(1 / (1 + |N|)) (ℓ(t) + Σ_{n∈N} ℓ(n))`.
/// Adds `scale ·` its gradient and returns the unscaled value together with
/// the number of neighbor triples and negatives used.
pub fn neighbors_term<T: Scalar, R: Rng + ?Sized>(
    g: &KnowledgeGraph,
    store: &EmbeddingStore<T>,
    t: &Triple,
    cfg: &LossConfig,
    rng: &mut R,
    grad: &mut SparseGrad<T>,
    scale: T,
) -> Result<(T, usize, usize), LossError> {
    let index = g.train_index_of(t).ok_or(GraphError::NotATrainTriple(*t))?;
    let (neighbors, pre_cap) = capped_neighbors(g, index, cfg.neighbor_cap, rng);
    let count = if cfg.normalize_pre_cap {
        pre_cap
    } else {
        neighbors.len()
    };
    let norm = T::one() / T::lit((1 + count) as f64);
    let mut bracket = T::zero();
    let mut negatives = 0;
    for x in std::iter::once(*t).chain(neighbors.iter().map(|&i| g.train_triple(i))) {
        let negs = negatives_of(g, &x, cfg, rng)?;
        if negs.is_empty() {
            continue;
        }
        negatives += negs.len();
        bracket += softmargin_loss_and_grads(store, &x, &negs, cfg, grad, scale * norm)?;
    }
    Ok((bracket * norm, neighbors.len(), negatives))
}

/// Neighbors' Loss over a minibatch, averaged over its positives.
pub fn neighbors_loss_and_grads<T: Scalar, R: Rng + ?Sized>(
    g: &KnowledgeGraph,
    store: &EmbeddingStore<T>,
    m: &Minibatch,
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<BatchLoss<T>, LossError> {
    let mut grad = SparseGrad::for_store(store);
    let scale = T::one() / T::lit(m.len().max(1) as f64);
    let mut total = T::zero();
    let mut negatives = 0;
    let mut neighbor_triples = 0;
    for t in &m.positives {
        let (l, n, k) = neighbors_term(g, store, t, cfg, rng, &mut grad, scale)?;
        total += l;
        neighbor_triples += n;
        negatives += k;
    }
    Ok(BatchLoss {
        loss: total * scale,
        grad,
        negatives,
        neighbor_triples,
    })
}

/// Dispatches on `cfg.neighbors_loss_enabled`.
pub fn batch_loss<T: Scalar, R: Rng + ?Sized>(
    g: &KnowledgeGraph,
    store: &EmbeddingStore<T>,
    m: &Minibatch,
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<BatchLoss<T>, LossError> {
    if cfg.neighbors_loss_enabled {
        neighbors_loss_and_grads(g, store, m, cfg, rng)
    } else {
        vanilla_batch_loss(g, store, m, cfg, rng)
    }
}
