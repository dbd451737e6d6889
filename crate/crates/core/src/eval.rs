//! Link-prediction ranking under the raw and filtered protocols.
//!
//! Ties are broken pessimistically: a candidate scoring equal to the target
//! ranks above it.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::graph::{EntityId, KnowledgeGraph, Split, Triple};
use crate::model::EmbeddingStore;
use crate::scalar::Scalar;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Raw,
    Filtered,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Raw => "raw",
            Protocol::Filtered => "filtered",
        })
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(Protocol::Raw),
            "filtered" => Ok(Protocol::Filtered),
            _ => Err(format!("unknown protocol `{s}` (expected raw or filtered)")),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct RankResult {
    pub triple: Triple,
    pub head_rank: usize,
    pub tail_rank: usize,
    pub protocol: Protocol,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub mr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    /// Ranked queries (two per triple).
    pub count: usize,
    pub protocol: Protocol,
}

impl Metrics {
    pub fn from_ranks(ranks: &[usize], protocol: Protocol) -> Metrics {
        let n = ranks.len() as f64;
        let mean = |f: &dyn Fn(usize) -> f64| ranks.iter().map(|&r| f(r)).sum::<f64>() / n;
        Metrics {
            mrr: mean(&|r| 1.0 / r as f64),
            mr: mean(&|r| r as f64),
            hits1: mean(&|r| (r <= 1) as u8 as f64),
            hits3: mean(&|r| (r <= 3) as u8 as f64),
            hits10: mean(&|r| (r <= 10) as u8 as f64),
            count: ranks.len(),
            protocol,
        }
    }

    pub const CSV_HEADER: &'static str = "protocol,mrr,mr,hits1,hits3,hits10,count";

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            self.protocol, self.mrr, self.mr, self.hits1, self.hits3, self.hits10, self.count
        )
    }
}

/// `1 + |{c ≠ target : score[c] ≥ score[target], c not excluded}|`.
///
/// NaN candidate scores count as ranked above the target.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn rank_of<T: Scalar>(scores: &[T], target: usize, excluded: impl Fn(usize) -> bool) -> usize {
    let reference = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(c, &s)| c != target && !(s < reference) && !excluded(c))
        .count()
}

/// Head and tail rank of `t` against every entity.
pub fn rank_triple<T: Scalar>(
    g: &KnowledgeGraph,
    store: &EmbeddingStore<T>,
    t: &Triple,
    protocol: Protocol,
) -> Result<RankResult, ModelError> {
    store.check_triple(t)?;
    let filtered = protocol == Protocol::Filtered;
    let tails = store.score_against_all_objects(t.subject, t.relation)?;
    let tail_rank = rank_of(&tails, t.object, |o: EntityId| {
        filtered && g.is_known(&Triple::new(t.subject, t.relation, o))
    });
    let heads = store.score_against_all_subjects(t.relation, t.object)?;
    let head_rank = rank_of(&heads, t.subject, |s: EntityId| {
        filtered && g.is_known(&Triple::new(s, t.relation, t.object))
    });
    Ok(RankResult {
        triple: *t,
        head_rank,
        tail_rank,
        protocol,
    })
}

pub fn rank_all<T: Scalar>(
    g: &KnowledgeGraph,
    store: &EmbeddingStore<T>,
    triples: &[Triple],
    protocol: Protocol,
) -> Result<Vec<RankResult>, ModelError> {
    triples
        .par_iter()
        .map(|t| rank_triple(g, store, t, protocol))
        .collect()
}

/// Metrics over both directions of every triple in `triples`.
pub fn evaluate_triples<T: Scalar>(
    g: &KnowledgeGraph,
    store: &EmbeddingStore<T>,
    triples: &[Triple],
    protocol: Protocol,
) -> Result<Metrics, ModelError> {
    let ranks: Vec<usize> = rank_all(g, store, triples, protocol)?
        .into_iter()
        .flat_map(|r| [r.head_rank, r.tail_rank])
        .collect();
    Ok(Metrics::from_ranks(&ranks, protocol))
}

pub fn evaluate_split<T: Scalar>(
    g: &KnowledgeGraph,
    store: &EmbeddingStore<T>,
    split: Split,
    protocol: Protocol,
) -> Result<Metrics, ModelError> {
    evaluate_triples(g, store, g.split(split), protocol)
}

/// Expected MRR of a ranker that orders candidates uniformly at random:
/// `H_n / n`.
pub fn random_mrr(entity_count: usize) -> f64 {
    (1..=entity_count).map(|r| 1.0 / r as f64).sum::<f64>() / entity_count as f64
}
