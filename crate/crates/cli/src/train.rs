use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Local, Utc};
use kgc_core::eval::{evaluate_split, Metrics, Protocol};
use kgc_core::graph::{KnowledgeGraph, Split};
use kgc_core::trainer::{gradient_variance_probe, Trainer};
use kgc_core::EmbeddingStore64;
use log::info;
use serde::Serialize;

use crate::config::{ConfigMap, Settings};
use crate::dataset::{self, Fingerprint};
use crate::error::CliError;

#[derive(Serialize)]
struct BestCheckpoint {
    epoch: usize,
    valid_mrr: f64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    seed: u64,
    config: &'a std::collections::BTreeMap<String, String>,
    dataset: &'a Fingerprint,
    started_at: DateTime<Utc>,
    finished_at: Option<DateTime<Utc>>,
    best: Option<BestCheckpoint>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("manifest serializes");
    fs::write(path, text + "\n").map_err(CliError::io(format!("writing {}", path.display())))
}

fn append_line(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(CliError::io(format!("opening {}", path.display())))?;
    let line = serde_json::to_string(value).expect("record serializes");
    writeln!(f, "{line}").map_err(CliError::io(format!("writing {}", path.display())))
}

/// `<runs>/<dataset>-<model>-<sampler>-<timestamp>`, suffixed on collision.
fn create_run_dir(runs: &Path, stem: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(runs).map_err(CliError::io(format!("creating {}", runs.display())))?;
    let stamp = Local::now().format("%Y%m%d-%H%M%S");
    let base = format!("{stem}-{stamp}");
    for n in 1.. {
        let name = if n == 1 {
            base.clone()
        } else {
            format!("{base}-{n}")
        };
        let dir = runs.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::io(format!("creating {}", dir.display()))(e)),
        }
    }
    unreachable!()
}

#[derive(Serialize)]
struct ValidRecord<'a> {
    epoch: usize,
    #[serde(flatten)]
    metrics: &'a Metrics,
}

pub fn run(map: &ConfigMap) -> Result<PathBuf, CliError> {
    let mut map = map.clone();
    map.materialize()?;
    let settings: Settings = map.settings()?;
    settings.train.validate()?;
    let dir = dataset::resolve(&settings.dataset, settings.data_root.as_deref())?;
    let fingerprint = dataset::fingerprint(&dir)?;
    let graph = KnowledgeGraph::load_dataset(&dir)?;
    info!(
        "loaded {}: {} entities, {} relations, {} train triples",
        fingerprint.name,
        graph.entity_count(),
        graph.relation_count(),
        graph.train().len()
    );
    let protocol: Protocol = map
        .get("eval.protocol")
        .parse()
        .map_err(|m| CliError::Usage(format!("eval.protocol: {m}")))?;

    let stem = format!(
        "{}-{}-{}",
        fingerprint.name,
        settings.model.label(),
        settings.train.sampler.kind
    );
    let run_dir = create_run_dir(Path::new(&settings.runs_dir), &stem)?;
    let started_at = Utc::now();
    let mut manifest = Manifest {
        tool: "kgc",
        version: env!("CARGO_PKG_VERSION"),
        seed: settings.train.seed,
        config: map.as_map(),
        dataset: &fingerprint,
        started_at,
        finished_at: None,
        best: None,
    };
    write_json(&run_dir.join("manifest.json"), &manifest)?;
    let config_path = run_dir.join("config.txt");
    fs::write(&config_path, map.render())
        .map_err(CliError::io(format!("writing {}", config_path.display())))?;
    graph.write_dictionaries(&run_dir)?;
    let checkpoints = run_dir.join("checkpoints");
    fs::create_dir_all(&checkpoints)
        .map_err(CliError::io(format!("creating {}", checkpoints.display())))?;

    let mut store = EmbeddingStore64::initialize(
        graph.entity_count(),
        graph.relation_count(),
        settings.model,
        settings.dim,
        settings.train.seed,
    )?;
    let mut trainer = Trainer::new(&graph, &store, settings.train.clone())?;
    let log_path = run_dir.join("train_log.jsonl");
    let valid_path = run_dir.join("valid_metrics.jsonl");
    let epochs = settings.train.epochs;
    let every = settings.train.eval_every;
    for epoch in 1..=epochs {
        let record = trainer.run_epoch(&mut store)?;
        append_line(&log_path, &record)?;
        info!(
            "epoch {epoch}/{epochs}: loss {:.6} ({} batches)",
            record.mean_loss, record.batches
        );
        if epoch % every == 0 || epoch == epochs {
            store.save(checkpoints.join(format!("epoch-{epoch:04}.bin")))?;
            if !graph.valid().is_empty() {
                let m = evaluate_split(&graph, &store, Split::Valid, protocol)?;
                info!(
                    "epoch {epoch}: valid {} MRR {:.4}, Hits@10 {:.4}",
                    protocol, m.mrr, m.hits10
                );
                append_line(&valid_path, &ValidRecord { epoch, metrics: &m })?;
                if manifest.best.as_ref().is_none_or(|b| m.mrr > b.valid_mrr) {
                    store.save(run_dir.join("best.bin"))?;
                    manifest.best = Some(BestCheckpoint {
                        epoch,
                        valid_mrr: m.mrr,
                    });
                }
            }
        }
    }
    store.save(run_dir.join("final.bin"))?;
    if graph.valid().is_empty() {
        // nothing to select on: the final store is the best one
        store.save(run_dir.join("best.bin"))?;
    }
    if settings.train.variance_probe_enabled {
        let report =
            gradient_variance_probe(&graph, &store, &settings.train, settings.probe_batches)?;
        let path = run_dir.join("variance.csv");
        let f =
            File::create(&path).map_err(CliError::io(format!("creating {}", path.display())))?;
        report
            .write_csv(std::io::BufWriter::new(f))
            .map_err(CliError::io(format!("writing {}", path.display())))?;
    }
    manifest.finished_at = Some(Utc::now());
    write_json(&run_dir.join("manifest.json"), &manifest)?;
    Ok(run_dir)
}
