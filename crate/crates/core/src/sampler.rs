//! Minibatch samplers over the train split.
//!
//! `SR` draws triples uniformly. The walk family (`RW`, `RWR`, `RWISG`,
//! `RWISG-N`) collects the triples crossed by a random walk that treats every
//! edge as undirected; triples keep their stored direction.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SamplerError;
use crate::graph::{EntityId, KnowledgeGraph, Triple};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SamplerKind {
    /// Simply Random: uniform triples without replacement.
    Sr,
    Rw,
    Rwr,
    Rwisg,
    RwisgN,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 5] = [
        SamplerKind::Sr,
        SamplerKind::Rw,
        SamplerKind::Rwr,
        SamplerKind::Rwisg,
        SamplerKind::RwisgN,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SamplerKind::Sr => "sr",
            SamplerKind::Rw => "rw",
            SamplerKind::Rwr => "rwr",
            SamplerKind::Rwisg => "rwisg",
            SamplerKind::RwisgN => "rwisg-n",
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SamplerKind {
    type Err = SamplerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sr" => Ok(SamplerKind::Sr),
            "rw" => Ok(SamplerKind::Rw),
            "rwr" => Ok(SamplerKind::Rwr),
            "rwisg" => Ok(SamplerKind::Rwisg),
            "rwisg-n" | "rwisg_n" | "rwisgn" => Ok(SamplerKind::RwisgN),
            _ => Err(SamplerError::UnknownKind(s.to_owned())),
        }
    }
}

/// Where a restarting walk jumps to.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RestartTarget {
    StartNode,
    UniformPrevious,
}

impl FromStr for RestartTarget {
    type Err = SamplerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "start" | "start_node" | "start-node" => Ok(RestartTarget::StartNode),
            "previous" | "uniform_previous" | "uniform-previous" => {
                Ok(RestartTarget::UniformPrevious)
            }
            _ => Err(SamplerError::UnknownRestartTarget(s.to_owned())),
        }
    }
}

impl fmt::Display for RestartTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RestartTarget::StartNode => "start",
            RestartTarget::UniformPrevious => "previous",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerPolicy {
    pub kind: SamplerKind,
    /// Target number of positive triples `b`.
    pub batch_size: usize,
    /// RWR only.
    pub restart_probability: f64,
    /// RWR only.
    pub restart_target: RestartTarget,
    /// RWISG-N only: each visited vertex draws `ceil(fraction * deg)` extra
    /// incident triples, at most `extra_neighbor_cap`.
    pub extra_neighbor_fraction: f64,
    pub extra_neighbor_cap: usize,
    pub seed: u64,
}

impl SamplerPolicy {
    pub const DEFAULT_RESTART_PROBABILITY: f64 = 0.15;
    pub const DEFAULT_EXTRA_NEIGHBOR_FRACTION: f64 = 0.5;
    pub const DEFAULT_EXTRA_NEIGHBOR_CAP: usize = 32;

    pub fn new(kind: SamplerKind, batch_size: usize) -> Self {
        SamplerPolicy {
            kind,
            batch_size,
            restart_probability: Self::DEFAULT_RESTART_PROBABILITY,
            restart_target: RestartTarget::StartNode,
            extra_neighbor_fraction: Self::DEFAULT_EXTRA_NEIGHBOR_FRACTION,
            extra_neighbor_cap: Self::DEFAULT_EXTRA_NEIGHBOR_CAP,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.batch_size == 0 {
            return Err(SamplerError::ZeroBatchSize);
        }
        for (name, value) in [
            ("restart_probability", self.restart_probability),
            ("extra_neighbor_fraction", self.extra_neighbor_fraction),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SamplerError::ProbabilityOutOfRange { name, value });
            }
        }
        Ok(())
    }
}

/// A sampled set of positive train triples.
#[derive(Clone, Debug, PartialEq)]
pub struct Minibatch {
    /// Distinct train triples. Walk policies keep collection order.
    pub positives: Vec<Triple>,
    /// Train-split indices of `positives`, same order.
    pub indices: Vec<usize>,
    /// Entities appearing in `positives`, ascending.
    pub vertex_set: Vec<EntityId>,
    pub policy: SamplerPolicy,
}

impl Minibatch {
    pub fn from_indices(g: &KnowledgeGraph, indices: Vec<usize>, policy: SamplerPolicy) -> Self {
        let positives: Vec<Triple> = indices.iter().map(|&i| g.train_triple(i)).collect();
        let mut vertex_set: Vec<EntityId> = positives
            .iter()
            .flat_map(|t| [t.subject, t.object])
            .collect();
        vertex_set.sort_unstable();
        vertex_set.dedup();
        Minibatch {
            positives,
            indices,
            vertex_set,
            policy,
        }
    }

    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    /// Graphviz rendering: entities as nodes, triples as directed edges
    /// labeled with the relation name.
    pub fn to_dot(&self, g: &KnowledgeGraph) -> String {
        let entity = |id: EntityId| escape_dot(g.entities().name(id).unwrap_or("?"));
        let mut out = String::new();
        out.push_str("digraph minibatch {\n");
        out.push_str(&format!(
            "  // sampler={} batch_size={} triples={} entities={}\n",
            self.policy.kind,
            self.policy.batch_size,
            self.positives.len(),
            self.vertex_set.len()
        ));
        for &v in &self.vertex_set {
            out.push_str(&format!("  n{v} [label=\"{}\"];\n", entity(v)));
        }
        for t in &self.positives {
            out.push_str(&format!(
                "  n{} -> n{} [label=\"{}\"];\n",
                t.subject,
                t.object,
                escape_dot(g.relations().name(t.relation).unwrap_or("?"))
            ));
        }
        out.push_str("}\n");
        out
    }
}

fn escape_dot(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn effective_batch_size(g: &KnowledgeGraph, policy: &SamplerPolicy) -> usize {
    let n = g.train().len();
    if policy.batch_size > n {
        log::warn!(
            "batch size {} exceeds the {} train triples; clamping",
            policy.batch_size,
            n
        );
        n
    } else {
        policy.batch_size
    }
}

/// `b` distinct train triples, uniformly without replacement.
pub fn sample_sr<R: Rng + ?Sized>(
    g: &KnowledgeGraph,
    policy: &SamplerPolicy,
    rng: &mut R,
) -> Minibatch {
    let b = effective_batch_size(g, policy);
    let picked = index::sample(rng, g.train().len(), b).into_vec();
    Minibatch::from_indices(g, picked, policy.clone())
}

/// Triples collected by a random walk, in collection order.
#[derive(Clone, Debug, Default)]
pub(crate) struct Walk {
    pub order: Vec<usize>,
}

/// Core walk shared by every walk-based sampler.
///
/// Stops once `target` distinct triples are collected. When every incident
/// triple of the current vertex is already collected, the walk jumps to a
/// fresh uniformly chosen non-isolated entity, which also becomes the new
/// restart anchor.
pub(crate) fn random_walk<R: Rng + ?Sized>(
    g: &KnowledgeGraph,
    target: usize,
    restart: Option<(f64, RestartTarget)>,
    start: Option<EntityId>,
    rng: &mut R,
) -> Walk {
    let target = target.min(g.train().len());
    let active = g.active_entities();
    let mut walk = Walk::default();
    if target == 0 {
        return walk;
    }
    let mut collected: HashSet<usize> = HashSet::with_capacity(target * 2);
    let mut covered: HashMap<EntityId, usize> = HashMap::new();
    let mut visited: Vec<EntityId> = Vec::new();
    let mut visited_set: HashSet<EntityId> = HashSet::new();
    let mut visit = |v: EntityId, visited: &mut Vec<EntityId>| {
        if visited_set.insert(v) {
            visited.push(v);
        }
    };

    let mut anchor = start.unwrap_or_else(|| active[rng.gen_range(0..active.len())]);
    let mut current = anchor;
    visit(current, &mut visited);

    while walk.order.len() < target {
        if let Some((p, to)) = restart {
            if p > 0.0 && rng.gen::<f64>() < p {
                current = match to {
                    RestartTarget::StartNode => anchor,
                    RestartTarget::UniformPrevious => visited[rng.gen_range(0..visited.len())],
                };
            }
        }
        let incident = g.incident(current);
        if covered.get(&current).copied().unwrap_or(0) == incident.len() {
            anchor = active[rng.gen_range(0..active.len())];
            current = anchor;
            visit(current, &mut visited);
            continue;
        }
        let i = incident[rng.gen_range(0..incident.len())];
        let t = g.train_triple(i);
        if collected.insert(i) {
            walk.order.push(i);
            *covered.entry(t.subject).or_default() += 1;
            if !t.is_self_loop() {
                *covered.entry(t.object).or_default() += 1;
            }
        }
        current = t.other_endpoint(current);
        visit(current, &mut visited);
    }
    walk
}

pub fn sample_rw<R: Rng + ?Sized>(
    g: &KnowledgeGraph,
    policy: &SamplerPolicy,
    rng: &mut R,
) -> Minibatch {
    sample_rw_from(g, policy, None, rng)
}

/// Plain random walk, optionally from a fixed start entity.
pub fn sample_rw_from<R: Rng + ?Sized>(
    g: &KnowledgeGraph,
    policy: &SamplerPolicy,
    start: Option<EntityId>,
    rng: &mut R,
) -> Minibatch {
    let b = effective_batch_size(g, policy);
    let walk = random_walk(g, b, None, start, rng);
    Minibatch::from_indices(g, walk.order, policy.clone())
}

pub fn sample_rwr<R: Rng + ?Sized>(
    g: &KnowledgeGraph,
    policy: &SamplerPolicy,
    rng: &mut R,
) -> Minibatch {
    sample_rwr_from(g, policy, None, rng)
}

pub fn sample_rwr_from<R: Rng + ?Sized>(
    g: &KnowledgeGraph,
    policy: &SamplerPolicy,
    start: Option<EntityId>,
    rng: &mut R,
) -> Minibatch {
    let b = effective_batch_size(g, policy);
    let restart = Some((policy.restart_probability, policy.restart_target));
    let walk = random_walk(g, b, restart, start, rng);
    Minibatch::from_indices(g, walk.order, policy.clone())
}

fn walk_vertices(g: &KnowledgeGraph, order: &[usize]) -> Vec<EntityId> {
    let mut v: Vec<EntityId> = order
        .iter()
        .flat_map(|&i| {
            let t = g.train_triple(i);
            [t.subject, t.object]
        })
        .collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Random walk, then the subgraph induced by the visited vertices.
pub fn sample_rwisg<R: Rng + ?Sized>(
    g: &KnowledgeGraph,
    policy: &SamplerPolicy,
    rng: &mut R,
) -> Minibatch {
    sample_rwisg_from(g, policy, None, rng)
}

pub fn sample_rwisg_from<R: Rng + ?Sized>(
    g: &KnowledgeGraph,
    policy: &SamplerPolicy,
    start: Option<EntityId>,
    rng: &mut R,
) -> Minibatch {
    let b = effective_batch_size(g, policy);
    let walk = random_walk(g, b, None, start, rng);
    let vertices = walk_vertices(g, &walk.order);
    Minibatch::from_indices(g, g.induced_indices(&vertices), policy.clone())
}

/// RWISG plus, for every visited vertex, a few uniformly drawn incident
/// triples.
pub fn sample_rwisg_n<R: Rng + ?Sized>(
    g: &KnowledgeGraph,
    policy: &SamplerPolicy,
    rng: &mut R,
) -> Minibatch {
    sample_rwisg_n_from(g, policy, None, rng)
}

pub fn sample_rwisg_n_from<R: Rng + ?Sized>(
    g: &KnowledgeGraph,
    policy: &SamplerPolicy,
    start: Option<EntityId>,
    rng: &mut R,
) -> Minibatch {
    let b = effective_batch_size(g, policy);
    let walk = random_walk(g, b, None, start, rng);
    let vertices = walk_vertices(g, &walk.order);
    let mut picked = g.induced_indices(&vertices);
    for &v in &vertices {
        let incident = g.incident(v);
        let k = extra_neighbor_count(incident.len(), policy);
        if k == 0 {
            continue;
        }
        picked.extend(
            index::sample(rng, incident.len(), k)
                .into_iter()
                .map(|j| incident[j]),
        );
    }
    picked.sort_unstable();
    picked.dedup();
    Minibatch::from_indices(g, picked, policy.clone())
}

fn extra_neighbor_count(degree: usize, policy: &SamplerPolicy) -> usize {
    let k = (policy.extra_neighbor_fraction * degree as f64).ceil() as usize;
    k.min(policy.extra_neighbor_cap).min(degree)
}

/// One minibatch under `policy`.
pub fn sample<R: Rng + ?Sized>(
    g: &KnowledgeGraph,
    policy: &SamplerPolicy,
    rng: &mut R,
) -> Minibatch {
    match policy.kind {
        SamplerKind::Sr => sample_sr(g, policy, rng),
        SamplerKind::Rw => sample_rw(g, policy, rng),
        SamplerKind::Rwr => sample_rwr(g, policy, rng),
        SamplerKind::Rwisg => sample_rwisg(g, policy, rng),
        SamplerKind::RwisgN => sample_rwisg_n(g, policy, rng),
    }
}

/// Seeded sampler owning its random state.
pub struct Sampler<'g> {
    graph: &'g KnowledgeGraph,
    policy: SamplerPolicy,
    rng: ChaCha8Rng,
}

impl<'g> Sampler<'g> {
    pub fn new(graph: &'g KnowledgeGraph, policy: SamplerPolicy) -> Result<Self, SamplerError> {
        policy.validate()?;
        if graph.train().is_empty() {
            return Err(SamplerError::EmptyTrainSplit);
        }
        let rng = ChaCha8Rng::seed_from_u64(policy.seed);
        Ok(Sampler { graph, policy, rng })
    }

    pub fn policy(&self) -> &SamplerPolicy {
        &self.policy
    }

    pub fn graph(&self) -> &'g KnowledgeGraph {
        self.graph
    }

    /// An independent minibatch (SR draws without regard to epochs).
    pub fn sample(&mut self) -> Minibatch {
        sample(self.graph, &self.policy, &mut self.rng)
    }

    /// Batches per epoch: `ceil(|T_train| / b)`.
    pub fn batches_per_epoch(&self) -> usize {
        self.graph.train().len().div_ceil(self.policy.batch_size)
    }

    /// One epoch of minibatches. SR partitions a fresh permutation of the
    /// train split; walk policies draw independent batches.
    pub fn epoch(&mut self) -> EpochIter<'_, 'g> {
        let permutation = if self.policy.kind == SamplerKind::Sr {
            let mut p: Vec<usize> = (0..self.graph.train().len()).collect();
            p.shuffle(&mut self.rng);
            Some(p)
        } else {
            None
        };
        EpochIter {
            remaining: self.batches_per_epoch(),
            cursor: 0,
            permutation,
            sampler: self,
        }
    }
}

pub struct EpochIter<'s, 'g> {
    sampler: &'s mut Sampler<'g>,
    remaining: usize,
    cursor: usize,
    permutation: Option<Vec<usize>>,
}

impl Iterator for EpochIter<'_, '_> {
    type Item = Minibatch;

    fn next(&mut self) -> Option<Minibatch> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let batch = match &self.permutation {
            Some(p) => {
                let end = (self.cursor + self.sampler.policy.batch_size).min(p.len());
                let chunk = p[self.cursor..end].to_vec();
                self.cursor = end;
                Minibatch::from_indices(self.sampler.graph, chunk, self.sampler.policy.clone())
            }
            None => self.sampler.sample(),
        };
        Some(batch)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

impl ExactSizeIterator for EpochIter<'_, '_> {}
