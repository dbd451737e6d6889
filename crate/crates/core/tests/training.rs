use std::collections::HashSet;

use kgc_core::graph::{KnowledgeGraph, Triple};
use kgc_core::loss::{batch_loss, corrupt, LossConfig};
use kgc_core::model::{EmbeddingStore, ModelKind};
use kgc_core::optim::SparseAdam;
use kgc_core::sampler::{Sampler, SamplerKind, SamplerPolicy};
use kgc_core::synthetic;
use kgc_core::trainer::{gradient_variance_probe, train, TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn distmult_loss_decreases_over_first_epochs() {
    let g = synthetic::planted_graph(0.1, 3);
    let store = EmbeddingStore::<f64>::initialize(200, 3, ModelKind::DistMult, 32, 3).unwrap();
    let config = TrainConfig {
        epochs: 20,
        learning_rate: 1e-3,
        sampler: SamplerPolicy::new(SamplerKind::Sr, 256),
        loss: LossConfig {
            negatives_per_positive: 16,
            ..LossConfig::for_model(ModelKind::DistMult)
        },
        seed: 3,
        ..TrainConfig::default()
    };
    let (_, log) = train(&g, store, config).unwrap();
    let losses: Vec<f64> = log.epochs.iter().map(|e| e.mean_loss).collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "loss went up: {losses:?}");
    }
}

#[test]
fn f32_training_runs_and_stays_finite() {
    let g = synthetic::planted_graph(0.1, 4);
    let store = EmbeddingStore::<f32>::initialize(200, 3, ModelKind::ComplEx, 8, 4).unwrap();
    let config = TrainConfig {
        epochs: 3,
        learning_rate: 1e-2,
        sampler: SamplerPolicy::new(SamplerKind::RwisgN, 128),
        seed: 4,
        ..TrainConfig::default()
    };
    let (trained, log) = train(&g, store, config).unwrap();
    assert!(trained.is_finite());
    assert!(log.epochs.iter().all(|e| e.mean_loss.is_finite()));
}

/// Rows an update may touch: endpoints and relations of the positives, their
/// neighbor triples (Neighbors' Loss) and every negative. Negatives are
/// recovered by replaying the corruption stream.
fn allowed_rows(
    g: &KnowledgeGraph,
    batch: &[Triple],
    cfg: &LossConfig,
    seed: u64,
) -> (HashSet<usize>, HashSet<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entities = HashSet::new();
    let mut relations = HashSet::new();
    let mut add = |t: &Triple| {
        entities.insert(t.subject);
        entities.insert(t.object);
        relations.insert(t.relation);
    };
    for t in batch {
        let mut terms = vec![*t];
        if cfg.neighbors_loss_enabled {
            terms.extend(g.neighbor_triples(t).unwrap());
        }
        for x in terms {
            add(&x);
            for n in corrupt(
                g,
                &x,
                cfg.negatives_per_positive,
                cfg.filtered_negatives,
                &mut rng,
            )
            .unwrap()
            {
                add(&n.triple);
            }
        }
    }
    (entities, relations)
}

#[test]
fn updates_touch_only_batch_rows() {
    let g = synthetic::sweep_graph(5);
    for nloss in [false, true] {
        let cfg = LossConfig {
            negatives_per_positive: 4,
            neighbors_loss_enabled: nloss,
            ..LossConfig::default()
        };
        let mut store = EmbeddingStore::<f64>::initialize(
            g.entity_count(),
            g.relation_count(),
            ModelKind::DistMult,
            6,
            5,
        )
        .unwrap();
        let before = store.clone();
        let mut sampler =
            Sampler::new(&g, SamplerPolicy::new(SamplerKind::Rw, 16).with_seed(5)).unwrap();
        let batch = sampler.sample();
        let out = batch_loss(&g, &store, &batch, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let mut adam = SparseAdam::new(&store, 0.9, 0.999, 1e-8);
        adam.step(&mut store, &out.grad, 0.1);

        let (ents, rels) = allowed_rows(&g, &batch.positives, &cfg, 9);
        let mut changed = 0;
        for e in 0..g.entity_count() {
            if store.entity(e) != before.entity(e) {
                changed += 1;
                assert!(ents.contains(&e), "entity {e} changed outside the batch");
            }
        }
        for r in 0..g.relation_count() {
            if store.relation(r) != before.relation(r) {
                assert!(rels.contains(&r), "relation {r} changed outside the batch");
            }
        }
        assert!(changed > 0);
        if !nloss {
            assert!(changed <= batch.len() * 2 * (1 + cfg.negatives_per_positive));
        }
    }
}

#[test]
fn trainer_steps_follow_sampler_epoch() {
    let g = synthetic::planted_graph(0.1, 6);
    let store = EmbeddingStore::<f64>::initialize(200, 3, ModelKind::TransE, 4, 6).unwrap();
    let config = TrainConfig {
        epochs: 2,
        sampler: SamplerPolicy::new(SamplerKind::Sr, 500),
        ..TrainConfig::default()
    };
    let mut store = store;
    let mut trainer = Trainer::new(&g, &store, config).unwrap();
    let rec = trainer.run_epoch(&mut store).unwrap();
    assert_eq!(rec.batches, g.train().len().div_ceil(500));
    assert_eq!(trainer.steps(), rec.batches);
}

fn probe(
    kind: SamplerKind,
    g: &KnowledgeGraph,
    store: &EmbeddingStore<f64>,
) -> kgc_core::GradientVarianceReport {
    let config = TrainConfig {
        sampler: SamplerPolicy::new(kind, 128),
        loss: LossConfig {
            negatives_per_positive: 8,
            ..LossConfig::default()
        },
        seed: 21,
        ..TrainConfig::default()
    };
    gradient_variance_probe(g, store, &config, 60).unwrap()
}

#[test]
fn probe_direction_and_store_untouched() {
    let g = synthetic::variance_graph(21);
    let store = EmbeddingStore::<f64>::initialize(
        g.entity_count(),
        g.relation_count(),
        ModelKind::DistMult,
        8,
        21,
    )
    .unwrap();
    let snapshot = store.clone();
    let sr = probe(SamplerKind::Sr, &g, &store);
    let rw = probe(SamplerKind::Rw, &g, &store);
    let rwisg = probe(SamplerKind::Rwisg, &g, &store);
    assert_eq!(store, snapshot);

    assert!(rwisg.median_variance(5).unwrap() < sr.median_variance(5).unwrap());
    // an entity present in a walk-based batch is present through more triples
    let per_batch =
        |r: &kgc_core::GradientVarianceReport| r.median_appearances_per_batch(5).unwrap();
    assert!(
        per_batch(&rwisg) >= per_batch(&rw),
        "{} < {}",
        per_batch(&rwisg),
        per_batch(&rw)
    );
    assert!(
        per_batch(&rw) >= per_batch(&sr),
        "{} < {}",
        per_batch(&rw),
        per_batch(&sr)
    );

    for r in [&sr, &rw, &rwisg] {
        assert_eq!(r.num_batches, 60);
        for rec in &r.records {
            assert!(rec.grad_variance >= 0.0);
            assert!(rec.batches_seen >= 2 && rec.batches_seen <= 60);
        }
    }
    let mut csv = Vec::new();
    sr.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("entity_id,graph_degree,batches_seen,grad_variance\n"));
    assert_eq!(text.lines().count(), sr.records.len() + 1);
}
