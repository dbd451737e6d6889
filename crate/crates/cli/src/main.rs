mod commands;
mod config;
mod dataset;
mod error;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kgc_core::eval::Protocol;
use kgc_core::graph::Split;
use kgc_core::sampler::SamplerKind;

use commands::ToyKind;
use config::ConfigMap;
use error::{CliError, EXIT_USAGE};

/// Knowledge-graph completion with graph-sampled minibatches.
#[derive(Parser)]
#[command(name = "kgc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DatasetArgs {
    /// Dataset directory, or a name under the data root.
    #[arg(long)]
    dataset: String,
    /// Directory holding named datasets [default: $KGC_DATA_ROOT].
    #[arg(long)]
    data_root: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train embeddings; writes a run directory with manifest, log and checkpoints.
    Train {
        /// key = value config file with [sections].
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        data_root: Option<String>,
        /// transe, distmult, complex or rotate.
        #[arg(long)]
        model: Option<String>,
        /// sr, rw, rwr, rwisg or rwisg-n.
        #[arg(long)]
        sampler: Option<String>,
        #[arg(long)]
        batch_size: Option<String>,
        #[arg(long)]
        dim: Option<String>,
        #[arg(long)]
        epochs: Option<String>,
        #[arg(long)]
        lr: Option<String>,
        #[arg(long)]
        seed: Option<String>,
        #[arg(long)]
        runs_dir: Option<String>,
        /// Any config key, e.g. `--set loss.neighbors_loss=true`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Print the resolved configuration and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Dataset summary, or minibatch degree statistics per sampler.
    Stats {
        #[command(flatten)]
        data: DatasetArgs,
        /// Print dataset counts and degree summary only.
        #[arg(long)]
        summary: bool,
        #[arg(long, value_delimiter = ',', default_value = "sr,rw,rwr,rwisg,rwisg-n")]
        samplers: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "256,1024,4096")]
        batch_sizes: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        num_batches: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for ed_sweep.csv and degree_distribution.csv.
        #[arg(long, default_value = "stats")]
        out: PathBuf,
    },
    /// Rank a split with a checkpoint and print the metrics.
    Eval {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// raw, filtered or both.
        #[arg(long, default_value = "filtered")]
        protocol: String,
        /// Print CSV instead of JSON lines.
        #[arg(long)]
        csv: bool,
    },
    /// Sample one minibatch and write it as a Graphviz DOT file.
    Viz {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        sampler: String,
        #[arg(long)]
        batch_size: usize,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate one of the synthetic graphs used by the tests.
    MakeToy {
        #[arg(long, value_enum)]
        kind: ToyKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fraction moved to valid/test [default: 0.1 for planted, else 0].
        #[arg(long)]
        holdout: Option<f64>,
    },
}

fn parse_samplers(names: &[String]) -> Result<Vec<SamplerKind>, CliError> {
    names
        .iter()
        .map(|n| Ok(n.trim().parse::<SamplerKind>()?))
        .collect()
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train {
            config,
            dataset,
            data_root,
            model,
            sampler,
            batch_size,
            dim,
            epochs,
            lr,
            seed,
            runs_dir,
            overrides,
            print_config,
        } => {
            let mut map = ConfigMap::default();
            if let Some(path) = &config {
                map.apply_file(path)?;
            }
            let flags = [
                ("data.dataset", dataset),
                ("data.root", data_root),
                ("model.kind", model),
                ("sampler.kind", sampler),
                ("sampler.batch_size", batch_size),
                ("model.dim", dim),
                ("trainer.epochs", epochs),
                ("trainer.learning_rate", lr),
                ("trainer.seed", seed),
                ("output.runs_dir", runs_dir),
            ];
            for (key, value) in flags {
                if let Some(v) = value {
                    map.set(key, &v)?;
                }
            }
            for o in &overrides {
                map.apply_override(o)?;
            }
            if print_config {
                map.materialize()?;
                map.settings()?;
                print!("{}", map.render());
                return Ok(());
            }
            let dir = train::run(&map)?;
            println!("{}", dir.display());
        }
        Command::Stats {
            data,
            summary,
            samplers,
            batch_sizes,
            num_batches,
            seed,
            out,
        } => {
            let kinds = parse_samplers(&samplers)?;
            let g = commands::load(&data.dataset, data.data_root.as_deref())?;
            if summary {
                print!("{}", commands::summary(&g));
                return Ok(());
            }
            let table = commands::stats(
                &g,
                &commands::StatsArgs {
                    samplers: &kinds,
                    batch_sizes: &batch_sizes,
                    num_batches,
                    seed,
                    out: &out,
                },
            )?;
            print!("{table}");
        }
        Command::Eval {
            data,
            checkpoint,
            split,
            protocol,
            csv,
        } => {
            let split: Split = split.parse().map_err(|e: String| CliError::Usage(e))?;
            let protocols = match protocol.as_str() {
                "both" => vec![Protocol::Raw, Protocol::Filtered],
                p => vec![p.parse::<Protocol>().map_err(CliError::Usage)?],
            };
            let g = commands::load(&data.dataset, data.data_root.as_deref())?;
            let metrics = commands::eval(&g, &checkpoint, split, &protocols)?;
            for (i, m) in metrics.iter().enumerate() {
                if csv {
                    let mut buf = Vec::new();
                    m.write_csv(&mut buf).expect("in-memory write");
                    let text = String::from_utf8(buf).expect("ascii");
                    // header once
                    let body = if i == 0 {
                        text.as_str()
                    } else {
                        text.split_once('\n').map_or("", |x| x.1)
                    };
                    print!("{body}");
                } else {
                    println!("{}", serde_json::to_string(m).expect("metrics serialize"));
                }
            }
        }
        Command::Viz {
            data,
            sampler,
            batch_size,
            output,
            seed,
        } => {
            let kind: SamplerKind = sampler.parse()?;
            let g = commands::load(&data.dataset, data.data_root.as_deref())?;
            let n = commands::viz(&g, kind, batch_size, seed, &output)?;
            eprintln!("wrote {n} triples to {}", output.display());
        }
        Command::MakeToy {
            kind,
            out,
            seed,
            holdout,
        } => {
            let g = commands::make_toy(kind, seed, holdout, &out)?;
            eprintln!(
                "wrote {} ({} entities, {} relations, {}/{}/{} triples)",
                out.display(),
                g.entity_count(),
                g.relation_count(),
                g.train().len(),
                g.valid().len(),
                g.test().len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
