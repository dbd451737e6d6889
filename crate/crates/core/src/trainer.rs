//! Minibatch training loop and the per-entity gradient-variance probe.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::TrainError;
use crate::graph::{EntityId, KnowledgeGraph};
use crate::loss::{batch_loss, neighbors_term, softmargin_loss_and_grads, LossConfig, SparseGrad};
use crate::model::EmbeddingStore;
use crate::optim::{Optimizer, OptimizerKind};
use crate::sampler::{Minibatch, Sampler, SamplerKind, SamplerPolicy};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub sampler: SamplerPolicy,
    pub loss: LossConfig,
    pub eval_every: usize,
    pub seed: u64,
    pub variance_probe_enabled: bool,
    /// Project touched entity rows onto the unit L2 ball after each step.
    pub normalize_entities: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::default(),
            sampler: SamplerPolicy::new(SamplerKind::Sr, 1024),
            loss: LossConfig::default(),
            eval_every: 10,
            seed: 0,
            variance_probe_enabled: false,
            normalize_entities: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::InvalidConfig(msg));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate {} is not a non-negative number",
                self.learning_rate
            ));
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                return bad(format!("Adam betas must lie in [0, 1): {beta1}, {beta2}"));
            }
            if eps.is_nan() || eps <= 0.0 {
                return bad(format!("Adam eps must be positive: {eps}"));
            }
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive".into());
        }
        if self.loss.negatives_per_positive == 0 {
            return bad("negatives_per_positive must be at least 1".into());
        }
        if !self.loss.margin.is_finite() {
            return bad("margin must be finite".into());
        }
        if self.loss.adversarial_temperature < 0.0 {
            return bad("adversarial temperature must be non-negative".into());
        }
        self.sampler.validate()?;
        Ok(())
    }

    /// Seed of the sampler stream (negatives use a second stream).
    fn sampler_policy(&self) -> SamplerPolicy {
        let mut p = self.sampler.clone();
        p.seed = self.seed;
        p
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_time_s: f64,
    pub batches: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

const NEGATIVE_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

/// Stateful trainer; drive it epoch by epoch or call [`train`].
pub struct Trainer<'g, T> {
    graph: &'g KnowledgeGraph,
    config: TrainConfig,
    sampler: Sampler<'g>,
    optimizer: Optimizer<T>,
    rng: ChaCha8Rng,
    epoch: usize,
    steps: usize,
}

impl<'g, T: Scalar> Trainer<'g, T> {
    pub fn new(
        graph: &'g KnowledgeGraph,
        store: &EmbeddingStore<T>,
        config: TrainConfig,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if graph.train().is_empty() {
            return Err(TrainError::EmptyTrainSplit);
        }
        check_shape(graph, store)?;
        let sampler = Sampler::new(graph, config.sampler_policy())?;
        Ok(Trainer {
            graph,
            sampler,
            optimizer: Optimizer::new(config.optimizer, store),
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ NEGATIVE_STREAM),
            config,
            epoch: 0,
            steps: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// Optimizer steps taken so far.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Loss, gradient and one optimizer step for a single minibatch.
    pub fn step(
        &mut self,
        store: &mut EmbeddingStore<T>,
        batch: &Minibatch,
    ) -> Result<f64, TrainError> {
        let out = batch_loss(self.graph, store, batch, &self.config.loss, &mut self.rng)?;
        let loss = out.loss.as_f64();
        if !loss.is_finite() || !out.grad.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch: self.epoch + 1,
                batch: self.steps,
                loss,
                dump: format!("{:?}", batch.positives),
            });
        }
        self.optimizer
            .step(store, &out.grad, T::lit(self.config.learning_rate));
        if self.config.normalize_entities {
            for (row, _) in out.grad.entities() {
                let e = store.entity_mut(row);
                let norm = e.iter().map(|&x| x * x).sum::<T>().sqrt();
                if norm > T::one() {
                    e.iter_mut().for_each(|x| *x /= norm);
                }
            }
        }
        self.steps += 1;
        Ok(loss)
    }

    pub fn run_epoch(&mut self, store: &mut EmbeddingStore<T>) -> Result<EpochRecord, TrainError> {
        let start = Instant::now();
        let batches: Vec<Minibatch> = self.sampler.epoch().collect();
        let mut total = 0.0;
        for batch in &batches {
            total += self.step(store, batch)?;
        }
        self.epoch += 1;
        Ok(EpochRecord {
            epoch: self.epoch,
            mean_loss: total / batches.len() as f64,
            wall_time_s: start.elapsed().as_secs_f64(),
            batches: batches.len(),
        })
    }
}

fn check_shape<T: Scalar>(g: &KnowledgeGraph, store: &EmbeddingStore<T>) -> Result<(), TrainError> {
    if store.entity_count() != g.entity_count() || store.relation_count() != g.relation_count() {
        return Err(TrainError::ShapeMismatch(format!(
            "store has {} entities / {} relations, graph has {} / {}",
            store.entity_count(),
            store.relation_count(),
            g.entity_count(),
            g.relation_count()
        )));
    }
    Ok(())
}

/// Runs `config.epochs` epochs and returns the trained store and its log.
pub fn train<T: Scalar>(
    g: &KnowledgeGraph,
    mut store: EmbeddingStore<T>,
    config: TrainConfig,
) -> Result<(EmbeddingStore<T>, TrainLog), TrainError> {
    let epochs = config.epochs;
    let mut trainer = Trainer::new(g, &store, config)?;
    let mut log = TrainLog::default();
    for _ in 0..epochs {
        log.epochs.push(trainer.run_epoch(&mut store)?);
    }
    Ok((store, log))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntityVariance {
    pub entity: EntityId,
    pub graph_degree: usize,
    /// Batches in which the entity received a gradient.
    pub batches_seen: usize,
    /// Positive triples containing the entity, summed over those batches.
    pub appearances: usize,
    /// Per-coordinate variance across batches, averaged over coordinates.
    pub grad_variance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientVarianceReport {
    /// Entities seen in at least two batches, ascending id.
    pub records: Vec<EntityVariance>,
    pub num_batches: usize,
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    })
}

impl GradientVarianceReport {
    fn select(&self, min_degree: usize) -> impl Iterator<Item = &EntityVariance> {
        self.records
            .iter()
            .filter(move |r| r.graph_degree >= min_degree)
    }

    pub fn median_variance(&self, min_degree: usize) -> Option<f64> {
        median(self.select(min_degree).map(|r| r.grad_variance).collect())
    }

    pub fn median_batches_seen(&self, min_degree: usize) -> Option<f64> {
        median(
            self.select(min_degree)
                .map(|r| r.batches_seen as f64)
                .collect(),
        )
    }

    /// Median over entities of the mean within-batch degree when present.
    pub fn median_appearances_per_batch(&self, min_degree: usize) -> Option<f64> {
        median(
            self.select(min_degree)
                .map(|r| r.appearances as f64 / r.batches_seen as f64)
                .collect(),
        )
    }

    /// `entity_id,graph_degree,batches_seen,grad_variance`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "entity_id,graph_degree,batches_seen,grad_variance")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{}",
                r.entity, r.graph_degree, r.batches_seen, r.grad_variance
            )?;
        }
        Ok(())
    }
}

struct Welford {
    n: usize,
    appearances: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    fn variance(&self) -> f64 {
        let denom = (self.n - 1) as f64;
        self.m2.iter().map(|s| s / denom).sum::<f64>() / self.m2.len() as f64
    }
}

fn probe_stream(seed: u64, index: usize) -> ChaCha8Rng {
    // splitmix64 finalizer
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Per-entity gradient variance over `batches`, with the store held fixed.
///
/// In each batch, an entity's gradient is the mean over the positive triples
/// that contain it of the gradient of that triple's loss term (soft-margin,
/// or the Neighbors' Loss bracket when enabled). Negatives and neighbor
/// subsamples are drawn from a stream keyed by the triple, so a triple
/// contributes the same term in every batch it lands in and the measured
/// spread comes from batch composition alone.
pub fn gradient_variance_probe_with<T: Scalar>(
    g: &KnowledgeGraph,
    store: &EmbeddingStore<T>,
    loss: &LossConfig,
    seed: u64,
    batches: impl IntoIterator<Item = Minibatch>,
) -> Result<GradientVarianceReport, TrainError> {
    check_shape(g, store)?;
    let width = store.entity_width();
    let mut stats: HashMap<EntityId, Welford> = HashMap::new();
    let mut term_cache: HashMap<usize, SparseGrad<T>> = HashMap::new();
    let mut num_batches = 0;
    for batch in batches {
        num_batches += 1;
        let mut sums: HashMap<EntityId, (Vec<f64>, usize)> = HashMap::new();
        for (&index, t) in batch.indices.iter().zip(&batch.positives) {
            if let Entry::Vacant(slot) = term_cache.entry(index) {
                let mut rng = probe_stream(seed, index);
                let mut grad = SparseGrad::for_store(store);
                if loss.neighbors_loss_enabled {
                    neighbors_term(g, store, t, loss, &mut rng, &mut grad, T::one())?;
                } else {
                    let negs: Vec<_> = crate::loss::corrupt(
                        g,
                        t,
                        loss.negatives_per_positive,
                        loss.filtered_negatives,
                        &mut rng,
                    )?
                    .into_iter()
                    .map(|n| n.triple)
                    .collect();
                    if !negs.is_empty() {
                        softmargin_loss_and_grads(store, t, &negs, loss, &mut grad, T::one())?;
                    }
                }
                slot.insert(grad);
            }
            let grad = &term_cache[&index];
            let endpoints: &[EntityId] = if t.is_self_loop() {
                &[t.subject]
            } else {
                &[t.subject, t.object]
            };
            for &e in endpoints {
                let entry = sums.entry(e).or_insert_with(|| (vec![0.0; width], 0));
                if let Some(row) = grad.entity(e) {
                    for (a, x) in entry.0.iter_mut().zip(row) {
                        *a += x.as_f64();
                    }
                }
                entry.1 += 1;
            }
        }
        for (e, (sum, count)) in sums {
            let mean: Vec<f64> = sum.iter().map(|x| x / count as f64).collect();
            let w = stats.entry(e).or_insert_with(|| Welford {
                n: 0,
                appearances: 0,
                mean: vec![0.0; width],
                m2: vec![0.0; width],
            });
            w.push(&mean);
            w.appearances += count;
        }
    }
    if num_batches < 2 {
        return Err(TrainError::TooFewProbeBatches(num_batches));
    }
    let mut records: Vec<EntityVariance> = stats
        .into_iter()
        .filter(|(_, w)| w.n >= 2)
        .map(|(e, w)| EntityVariance {
            entity: e,
            graph_degree: g.degrees()[e],
            batches_seen: w.n,
            appearances: w.appearances,
            grad_variance: w.variance(),
        })
        .collect();
    records.sort_by_key(|r| r.entity);
    Ok(GradientVarianceReport {
        records,
        num_batches,
    })
}

/// Samples `num_batches` independent minibatches under `config.sampler`
/// (seeded by `config.seed`) and measures per-entity gradient variance
/// without touching the store.
pub fn gradient_variance_probe<T: Scalar>(
    g: &KnowledgeGraph,
    store: &EmbeddingStore<T>,
    config: &TrainConfig,
    num_batches: usize,
) -> Result<GradientVarianceReport, TrainError> {
    if num_batches < 2 {
        return Err(TrainError::TooFewProbeBatches(num_batches));
    }
    let mut sampler = Sampler::new(g, config.sampler_policy())?;
    let batches = (0..num_batches).map(|_| sampler.sample());
    gradient_variance_probe_with(g, store, &config.loss, config.seed, batches)
}
