use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn kgc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgc"))
        .args(args)
        .current_dir(dir)
        .env_remove("KGC_DATA_ROOT")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn toy(dir: &Path) {
    let o = kgc(
        dir,
        &[
            "make-toy", "--kind", "planted", "--out", "toy", "--seed", "1",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
}

fn quick_train(dir: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec![
        "train",
        "--dataset",
        "toy",
        "--model",
        "distmult",
        "--dim",
        "8",
        "--epochs",
        "3",
        "--batch-size",
        "512",
        "--set",
        "trainer.eval_every=2",
        "--set",
        "loss.negatives=4",
    ];
    args.extend_from_slice(extra);
    let o = kgc(dir, &args);
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join(stdout(&o).trim())
}

#[test]
fn train_writes_a_complete_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    let run = quick_train(tmp.path(), &["--sampler", "rwisg-n"]);
    let name = run.file_name().unwrap().to_string_lossy().into_owned();
    assert!(name.starts_with("toy-distmult-rwisg-n-"), "{name}");
    assert_eq!(run.parent().unwrap(), tmp.path().join("runs"));
    for f in [
        "manifest.json",
        "config.txt",
        "train_log.jsonl",
        "valid_metrics.jsonl",
        "entities.tsv",
        "relations.tsv",
        "best.bin",
        "final.bin",
        "checkpoints/epoch-0002.bin",
        "checkpoints/epoch-0003.bin",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["sampler.kind"], "rwisg-n");
    // defaults are materialized, including model-dependent ones
    assert_eq!(manifest["config"]["loss.margin"], "0");
    assert_eq!(manifest["config"]["sampler.restart_probability"], "0.15");
    assert_eq!(manifest["dataset"]["files"].as_array().unwrap().len(), 3);
    let train_bytes = fs::metadata(tmp.path().join("toy/train.txt"))
        .unwrap()
        .len();
    assert_eq!(manifest["dataset"]["files"][0]["bytes"], train_bytes);
    assert_eq!(
        manifest["dataset"]["files"][0]["sha256"]
            .as_str()
            .unwrap()
            .len(),
        64
    );
    assert!(manifest["finished_at"].is_string());
    assert!(manifest["best"]["epoch"].is_u64());

    let log = fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = log
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 3);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r["epoch"], i as u64 + 1);
        assert!(r["mean_loss"].as_f64().unwrap().is_finite());
        assert!(r["wall_time_s"].is_f64());
        assert!(r["batches"].as_u64().unwrap() >= 1);
    }
}

#[test]
fn identical_runs_are_bitwise_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    let a = quick_train(tmp.path(), &["--sampler", "rwr", "--seed", "5"]);
    // replay from the saved resolved configuration
    let cfg = a.join("config.txt");
    let o = kgc(tmp.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let b = tmp.path().join(stdout(&o).trim());
    assert_ne!(a, b);
    assert_eq!(
        fs::read(a.join("final.bin")).unwrap(),
        fs::read(b.join("final.bin")).unwrap()
    );
}

fn resolved(dir: &Path, args: &[&str]) -> HashMap<String, String> {
    let mut full = vec!["train", "--print-config"];
    full.extend_from_slice(args);
    let o = kgc(dir, &full);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut section = String::new();
    let mut out = HashMap::new();
    for line in stdout(&o).lines() {
        if let Some(s) = line.strip_prefix('[') {
            section = s.trim_end_matches(']').to_owned();
        } else if let Some((k, v)) = line.split_once(" = ") {
            out.insert(format!("{section}.{k}"), v.to_owned());
        }
    }
    out
}

#[test]
fn config_precedence_defaults_file_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("run.cfg"),
        "[sampler]\nkind = rwisg\nbatch_size = 64\n\n[trainer]\nepochs = 7\n",
    )
    .unwrap();
    let defaults = resolved(tmp.path(), &[]);
    assert_eq!(defaults["sampler.kind"], "sr");
    assert_eq!(defaults["sampler.batch_size"], "1024");
    assert_eq!(defaults["loss.margin"], "-6");

    let file = resolved(tmp.path(), &["--config", "run.cfg"]);
    assert_eq!(file["sampler.kind"], "rwisg");
    assert_eq!(file["sampler.batch_size"], "64");
    assert_eq!(file["trainer.epochs"], "7");
    assert_eq!(
        file["trainer.learning_rate"],
        defaults["trainer.learning_rate"]
    );

    let both = resolved(
        tmp.path(),
        &[
            "--config",
            "run.cfg",
            "--batch-size",
            "32",
            "--set",
            "trainer.epochs=9",
        ],
    );
    assert_eq!(both["sampler.kind"], "rwisg");
    assert_eq!(both["sampler.batch_size"], "32");
    assert_eq!(both["trainer.epochs"], "9");
}

#[test]
fn unknown_keys_and_samplers_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("bad.cfg"),
        "[loss]\nmargin = 1\ntemperature = 2\n",
    )
    .unwrap();
    let o = kgc(
        tmp.path(),
        &["train", "--config", "bad.cfg", "--dataset", "x"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("loss.temperature"), "{}", stderr(&o));

    let o = kgc(
        tmp.path(),
        &["train", "--dataset", "x", "--set", "trainer.momentum=0.9"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("trainer.momentum"));

    let o = kgc(
        tmp.path(),
        &["train", "--dataset", "x", "--sampler", "metropolis"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("sr, rw, rwr, rwisg, rwisg-n"),
        "{}",
        stderr(&o)
    );

    let o = kgc(tmp.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(kgc(tmp.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = kgc(tmp.path(), &["stats", "--dataset", "nowhere", "--summary"]);
    assert_eq!(o.status.code(), Some(2));
    let o = kgc(
        tmp.path(),
        &["train", "--dataset", "nowhere", "--data-root", "."],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere"));
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn dataset_names_resolve_under_the_data_root() {
    let tmp = tempfile::tempdir().unwrap();
    let o = kgc(
        tmp.path(),
        &["make-toy", "--kind", "sweep", "--out", "data/Sweep-5K"],
    );
    assert!(o.status.success());
    let o = Command::new(env!("CARGO_BIN_EXE_kgc"))
        .args(["stats", "--dataset", "sweep5k", "--summary"])
        .current_dir(tmp.path())
        .env("KGC_DATA_ROOT", tmp.path().join("data"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    // entities without train triples are not written to the split files
    assert!(text.contains("relations\t8"));
    assert!(text.contains("train\t5000"));
}

#[test]
fn stats_writes_both_csv_schemas() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    let o = kgc(
        tmp.path(),
        &[
            "stats",
            "--dataset",
            "toy",
            "--samplers",
            "sr,rwisg",
            "--batch-sizes",
            "32,128",
            "--num-batches",
            "5",
            "--out",
            "st",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("E[D]"));
    let sweep = fs::read_to_string(tmp.path().join("st/ed_sweep.csv")).unwrap();
    let lines: Vec<&str> = sweep.lines().collect();
    assert_eq!(
        lines[0],
        "policy,batch_size,expected_degree,std_error,num_batches"
    );
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("sr,32,") && lines[1].ends_with(",5"));
    let dist = fs::read_to_string(tmp.path().join("st/degree_distribution.csv")).unwrap();
    assert!(dist.starts_with("policy,batch_size,degree,probability\n"));
    // each (policy, b) distribution sums to one
    let mut mass: HashMap<(String, String), f64> = HashMap::new();
    for l in dist.lines().skip(1) {
        let f: Vec<&str> = l.split(',').collect();
        *mass.entry((f[0].into(), f[1].into())).or_default() += f[3].parse::<f64>().unwrap();
    }
    assert_eq!(mass.len(), 4);
    assert!(mass.values().all(|m| (m - 1.0).abs() < 1e-9));

    // a single batch is reported as is, with no standard error
    let o = kgc(
        tmp.path(),
        &[
            "stats",
            "--dataset",
            "toy",
            "--samplers",
            "rw",
            "--batch-sizes",
            "16",
            "--num-batches",
            "1",
            "--out",
            "one",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let one = fs::read_to_string(tmp.path().join("one/ed_sweep.csv")).unwrap();
    let row = one.lines().nth(1).unwrap();
    assert!(row.starts_with("rw,16,") && row.ends_with(",,1"), "{row}");
}

#[test]
fn eval_random_checkpoint_is_near_chance_and_filtering_helps() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    // zero learning rate keeps the random initialization
    let run = quick_train(tmp.path(), &["--lr", "0", "--set", "trainer.epochs=1"]);
    let o = kgc(
        tmp.path(),
        &[
            "eval",
            "--dataset",
            "toy",
            "--checkpoint",
            run.join("final.bin").to_str().unwrap(),
            "--split",
            "test",
            "--protocol",
            "both",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<serde_json::Value> = stdout(&o)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["protocol"], "raw");
    let raw = rows[0]["mrr"].as_f64().unwrap();
    let filtered = rows[1]["mrr"].as_f64().unwrap();
    assert!(filtered >= raw);
    let chance = (1..=200).map(|r| 1.0 / r as f64).sum::<f64>() / 200.0;
    assert!(
        raw < 3.0 * chance && raw > chance / 3.0,
        "raw MRR {raw} vs chance {chance}"
    );
    // two ranked queries per test triple
    assert_eq!(rows[1]["count"], 220);

    let o = kgc(
        tmp.path(),
        &[
            "eval",
            "--dataset",
            "toy",
            "--checkpoint",
            run.join("checkpoints/epoch-0001.bin").to_str().unwrap(),
            "--csv",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("protocol,mrr,mr,hits1,hits3,hits10,count\nfiltered,"));
}

#[test]
fn eval_rejects_mismatched_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    let run = quick_train(tmp.path(), &[]);
    let o = kgc(
        tmp.path(),
        &[
            "make-toy",
            "--kind",
            "sweep",
            "--out",
            "other",
            "--holdout",
            "0.1",
        ],
    );
    assert!(o.status.success());
    let ckpt = run.join("best.bin");
    let o = kgc(
        tmp.path(),
        &[
            "eval",
            "--dataset",
            "other",
            "--checkpoint",
            ckpt.to_str().unwrap(),
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("entities"), "{}", stderr(&o));

    // same sizes, different id assignment
    let o = kgc(
        tmp.path(),
        &[
            "make-toy", "--kind", "planted", "--out", "toy2", "--seed", "2",
        ],
    );
    assert!(o.status.success());
    let o = kgc(
        tmp.path(),
        &[
            "eval",
            "--dataset",
            "toy2",
            "--checkpoint",
            ckpt.to_str().unwrap(),
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dictionaries"), "{}", stderr(&o));

    fs::write(tmp.path().join("junk.bin"), b"junk").unwrap();
    let o = kgc(
        tmp.path(),
        &["eval", "--dataset", "toy", "--checkpoint", "junk.bin"],
    );
    assert_eq!(o.status.code(), Some(2));
}

struct Dot {
    nodes: usize,
    edges: Vec<(String, String)>,
}

fn parse_dot(text: &str) -> Dot {
    assert!(text.starts_with("digraph minibatch {"));
    assert!(text.trim_end().ends_with('}'));
    let mut nodes = 0;
    let mut edges = Vec::new();
    for line in text.lines().map(str::trim) {
        if let Some((a, rest)) = line.split_once(" -> ") {
            let b = rest.split_whitespace().next().unwrap();
            edges.push((a.to_owned(), b.to_owned()));
        } else if line.starts_with('n') && line.contains("[label=") {
            nodes += 1;
        }
    }
    Dot { nodes, edges }
}

fn weakly_connected(edges: &[(String, String)]) -> bool {
    let mut adj: HashMap<&str, Vec<&str>> = HashMap::new();
    for (a, b) in edges {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    }
    let start = match adj.keys().next() {
        Some(s) => *s,
        None => return true,
    };
    let mut seen = HashSet::from([start]);
    let mut stack = vec![start];
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if seen.insert(w) {
                stack.push(w);
            }
        }
    }
    seen.len() == adj.len()
}

#[test]
fn viz_writes_dot_files() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    let o = kgc(
        tmp.path(),
        &[
            "viz",
            "--dataset",
            "toy",
            "--sampler",
            "sr",
            "--batch-size",
            "12",
            "--output",
            "sr.dot",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let sr = parse_dot(&fs::read_to_string(tmp.path().join("sr.dot")).unwrap());
    assert_eq!(sr.edges.len(), 12);
    assert!(sr.nodes > 12, "SR batches are mostly isolated edges");

    for seed in ["0", "1", "2"] {
        let o = kgc(
            tmp.path(),
            &[
                "viz",
                "--dataset",
                "toy",
                "--sampler",
                "rw",
                "--batch-size",
                "20",
                "--seed",
                seed,
                "--output",
                "rw.dot",
            ],
        );
        assert!(o.status.success());
        let rw = parse_dot(&fs::read_to_string(tmp.path().join("rw.dot")).unwrap());
        assert_eq!(rw.edges.len(), 20);
        assert!(weakly_connected(&rw.edges));
    }

    let o = kgc(
        tmp.path(),
        &[
            "viz",
            "--dataset",
            "toy",
            "--sampler",
            "rw",
            "--batch-size",
            "5",
            "--output",
            "missing/dir/x.dot",
        ],
    );
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn divergence_exits_with_numerical_failure() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    let o = kgc(
        tmp.path(),
        &[
            "train",
            "--dataset",
            "toy",
            "--model",
            "distmult",
            "--dim",
            "8",
            "--epochs",
            "3",
            "--lr",
            "1e300",
            "--set",
            "trainer.optimizer=sgd",
            "--set",
            "loss.negatives=2",
        ],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite loss"));
}
