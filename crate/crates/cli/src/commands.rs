use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use kgc_core::eval::{evaluate_split, Metrics, Protocol};
use kgc_core::graph::{Dictionary, KnowledgeGraph, Split};
use kgc_core::sampler::{Sampler, SamplerKind, SamplerPolicy};
use kgc_core::stats::{
    measure_policy, write_distribution_csv, write_sweep_csv, PolicyMeasurement, SweepRow,
};
use kgc_core::synthetic;
use kgc_core::EmbeddingStore64;

use crate::dataset;
use crate::error::CliError;

pub fn load(dataset_arg: &str, root: Option<&str>) -> Result<KnowledgeGraph, CliError> {
    let dir = dataset::resolve(dataset_arg, root)?;
    Ok(KnowledgeGraph::load_dataset(dir)?)
}

pub fn summary(g: &KnowledgeGraph) -> String {
    let s = g.summary();
    format!(
        "entities\t{}\nrelations\t{}\ntrain\t{}\nvalid\t{}\ntest\t{}\n\
         mean_degree\t{:.2}\nmedian_degree\t{}\nmax_degree\t{}\n\
         isolated_entities\t{}\nself_loops\t{}\ncross_split_duplicates\t{}\n",
        s.entities,
        s.relations,
        s.train,
        s.valid,
        s.test,
        s.mean_degree,
        s.median_degree,
        s.max_degree,
        s.isolated_entities,
        s.self_loops,
        s.cross_split_duplicates
    )
}

pub struct StatsArgs<'a> {
    pub samplers: &'a [SamplerKind],
    pub batch_sizes: &'a [usize],
    pub num_batches: usize,
    pub seed: u64,
    pub out: &'a Path,
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(CliError::io(format!("creating {}", path.display())))
}

/// Writes `ed_sweep.csv` and `degree_distribution.csv` into `args.out` and
/// returns the printed summary table.
pub fn stats(g: &KnowledgeGraph, args: &StatsArgs) -> Result<String, CliError> {
    if args.num_batches == 0 {
        return Err(CliError::Usage("--num-batches must be at least 1".into()));
    }
    let mut measurements: Vec<PolicyMeasurement> = Vec::new();
    for &kind in args.samplers {
        for &b in args.batch_sizes {
            // same per-point seeding as the library sweep
            let p = SamplerPolicy::new(kind, b)
                .with_seed(args.seed.wrapping_mul(1_000_003).wrapping_add(b as u64));
            measurements.push(measure_policy(g, &p, args.num_batches)?);
        }
    }
    let rows: Vec<SweepRow> = measurements
        .iter()
        .map(|m| SweepRow {
            policy: m.policy.kind.label().to_owned(),
            batch_size: m.policy.batch_size,
            expected_degree: m.mean(),
            std_error: m.std_error(),
            num_batches: m.per_batch.len(),
        })
        .collect();
    fs::create_dir_all(args.out)
        .map_err(CliError::io(format!("creating {}", args.out.display())))?;
    let sweep = args.out.join("ed_sweep.csv");
    let mut w = create(&sweep)?;
    write_sweep_csv(&rows, &mut w)
        .and_then(|_| w.flush())
        .map_err(CliError::io(format!("writing {}", sweep.display())))?;
    let dist = args.out.join("degree_distribution.csv");
    let mut w = create(&dist)?;
    write_distribution_csv(
        measurements
            .iter()
            .map(|m| (m.policy.kind.label(), m.policy.batch_size, &m.histogram)),
        &mut w,
    )
    .and_then(|_| w.flush())
    .map_err(CliError::io(format!("writing {}", dist.display())))?;

    let mut table = format!(
        "{:<8} {:>7} {:>9} {:>9} {:>8} {:>8}\n",
        "sampler", "b", "E[D]", "stderr", "P_D(1)", "batches"
    );
    for (row, m) in rows.iter().zip(&measurements) {
        let se = if row.std_error.is_finite() {
            format!("{:.4}", row.std_error)
        } else {
            "-".into()
        };
        table += &format!(
            "{:<8} {:>7} {:>9.4} {:>9} {:>8.4} {:>8}\n",
            row.policy,
            row.batch_size,
            row.expected_degree,
            se,
            m.histogram.probability(1),
            row.num_batches
        );
    }
    Ok(table)
}

/// Dictionaries saved next to a checkpoint (in its directory or the run
/// directory above `checkpoints/`).
fn checkpoint_dictionaries(checkpoint: &Path) -> Option<PathBuf> {
    let parent = checkpoint.parent()?;
    [Some(parent), parent.parent()]
        .into_iter()
        .flatten()
        .find(|d| d.join("entities.tsv").is_file() && d.join("relations.tsv").is_file())
        .map(Path::to_path_buf)
}

pub fn eval(
    g: &KnowledgeGraph,
    checkpoint: &Path,
    split: Split,
    protocols: &[Protocol],
) -> Result<Vec<Metrics>, CliError> {
    let store = EmbeddingStore64::load(checkpoint)?;
    if store.entity_count() != g.entity_count() || store.relation_count() != g.relation_count() {
        return Err(CliError::Data(format!(
            "checkpoint {} has {} entities / {} relations but the dataset has {} / {}",
            checkpoint.display(),
            store.entity_count(),
            store.relation_count(),
            g.entity_count(),
            g.relation_count()
        )));
    }
    if let Some(dir) = checkpoint_dictionaries(checkpoint) {
        let entities = Dictionary::read_tsv(&dir.join("entities.tsv"))?;
        let relations = Dictionary::read_tsv(&dir.join("relations.tsv"))?;
        if entities.names() != g.entities().names() || relations.names() != g.relations().names() {
            return Err(CliError::Data(format!(
                "dictionaries in {} do not match the dataset's entity/relation ids",
                dir.display()
            )));
        }
    }
    if g.split(split).is_empty() {
        return Err(CliError::Data(format!("split `{}` is empty", split.name())));
    }
    protocols
        .iter()
        .map(|&p| Ok(evaluate_split(g, &store, split, p)?))
        .collect()
}

pub fn viz(
    g: &KnowledgeGraph,
    kind: SamplerKind,
    batch_size: usize,
    seed: u64,
    output: &Path,
) -> Result<usize, CliError> {
    let mut sampler = Sampler::new(g, SamplerPolicy::new(kind, batch_size).with_seed(seed))?;
    let batch = sampler.sample();
    fs::write(output, batch.to_dot(g))
        .map_err(CliError::io(format!("writing {}", output.display())))?;
    Ok(batch.len())
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ToyKind {
    /// 200 entities, 3 relations, planted symmetric and compositional structure.
    Planted,
    /// 1,000 entities, 5,000 power-law triples.
    Sweep,
    /// 1,000 entities, mean degree 12.
    Variance,
    /// FB15k-237 sizes with power-law degrees.
    Fb15k237Like,
}

pub fn make_toy(
    kind: ToyKind,
    seed: u64,
    holdout: Option<f64>,
    out: &Path,
) -> Result<KnowledgeGraph, CliError> {
    let holdout = holdout.unwrap_or(if kind == ToyKind::Planted { 0.1 } else { 0.0 });
    if !(0.0..1.0).contains(&holdout) {
        return Err(CliError::Usage(format!(
            "--holdout must lie in [0, 1), got {holdout}"
        )));
    }
    let g = match kind {
        ToyKind::Planted => return write_toy(synthetic::planted_graph(holdout, seed), out),
        ToyKind::Sweep => synthetic::sweep_graph(seed),
        ToyKind::Variance => synthetic::variance_graph(seed),
        ToyKind::Fb15k237Like => synthetic::fb15k237_like(seed),
    };
    let g = if holdout > 0.0 {
        synthetic::split_holdout(
            g.entity_count(),
            g.relation_count(),
            g.train().to_vec(),
            holdout,
            seed,
        )
    } else {
        g
    };
    write_toy(g, out)
}

fn write_toy(g: KnowledgeGraph, out: &Path) -> Result<KnowledgeGraph, CliError> {
    g.write_dataset(out)?;
    Ok(g)
}
