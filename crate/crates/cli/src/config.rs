//! Layered `key = value` configuration.
//!
//! A file is a list of `[section]` headers and `key = value` lines; `#`
//! starts a comment. Keys are addressed as `section.key`. Layers apply in
//! order: built-in defaults, then the file, then command-line overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use kgc_core::loss::LossConfig;
use kgc_core::optim::OptimizerKind;
use kgc_core::sampler::{RestartTarget, SamplerKind, SamplerPolicy};
use kgc_core::trainer::TrainConfig;
use kgc_core::ModelKind;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("{origin}: expected `key = value`, got `{line}`")]
    Syntax { origin: String, line: String },
    #[error("invalid value for `{key}`: {message}")]
    BadValue { key: String, message: String },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Every accepted key with its default. `auto` defers to a model-specific
/// value; `none` means unset.
const KEYS: &[(&str, &str)] = &[
    ("data.dataset", ""),
    ("data.root", ""),
    ("model.kind", "rotate"),
    ("model.dim", "200"),
    ("sampler.kind", "sr"),
    ("sampler.batch_size", "1024"),
    ("sampler.restart_probability", "0.15"),
    ("sampler.restart_target", "start"),
    ("sampler.extra_neighbor_fraction", "0.5"),
    ("sampler.extra_neighbor_cap", "32"),
    ("loss.margin", "auto"),
    ("loss.negatives", "64"),
    ("loss.adversarial_temperature", "auto"),
    ("loss.filtered_negatives", "true"),
    ("loss.neighbors_loss", "false"),
    ("loss.neighbor_cap", "none"),
    ("loss.normalize_pre_cap", "false"),
    ("trainer.epochs", "100"),
    ("trainer.learning_rate", "0.001"),
    ("trainer.optimizer", "adam"),
    ("trainer.beta1", "0.9"),
    ("trainer.beta2", "0.999"),
    ("trainer.eps", "1e-8"),
    ("trainer.eval_every", "10"),
    ("trainer.seed", "0"),
    ("trainer.variance_probe", "false"),
    ("trainer.probe_batches", "200"),
    ("trainer.normalize_entities", "false"),
    ("eval.protocol", "filtered"),
    ("output.runs_dir", "runs"),
];

/// Raw string values, all keys present.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigMap {
    values: BTreeMap<String, String>,
}

impl Default for ConfigMap {
    fn default() -> Self {
        ConfigMap {
            values: KEYS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl ConfigMap {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_owned();
                Ok(())
            }
            None => Err(ConfigError::UnknownKey(key.to_owned())),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        &self.values[key]
    }

    /// `key=value` override as typed on the command line.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), ConfigError> {
        let (k, v) = spec.split_once('=').ok_or_else(|| ConfigError::Syntax {
            origin: "--set".into(),
            line: spec.to_owned(),
        })?;
        self.set(k.trim(), v)
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_owned();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                origin: format!("{origin}:{}", n + 1),
                line: raw.to_owned(),
            })?;
            let k = k.trim();
            let key = if section.is_empty() || k.contains('.') {
                k.to_owned()
            } else {
                format!("{section}.{k}")
            };
            self.set(&key, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Sectioned file form; feeding it back through `apply_text` restores
    /// the same map.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (key, value) in &self.values {
            let (section, name) = key.split_once('.').expect("keys are sectioned");
            if section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{section}]");
                current = section;
            }
            let _ = writeln!(out, "{name} = {value}");
        }
        out
    }

    pub fn as_map(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}

fn parse<T: std::str::FromStr>(map: &ConfigMap, key: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    map.get(key)
        .parse::<T>()
        .map_err(|e| ConfigError::BadValue {
            key: key.to_owned(),
            message: e.to_string(),
        })
}

fn parse_bool(map: &ConfigMap, key: &str) -> Result<bool, ConfigError> {
    match map.get(key).to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(ConfigError::BadValue {
            key: key.to_owned(),
            message: format!("expected true or false, got `{other}`"),
        }),
    }
}

/// Typed view of a fully resolved map.
#[derive(Clone, Debug)]
pub struct Settings {
    pub dataset: String,
    pub data_root: Option<String>,
    pub model: ModelKind,
    pub dim: usize,
    pub train: TrainConfig,
    pub probe_batches: usize,
    pub runs_dir: String,
}

impl ConfigMap {
    /// Replaces `auto` entries with their model-specific values so the map
    /// records what actually runs.
    pub fn materialize(&mut self) -> Result<(), ConfigError> {
        let model: ModelKind = parse(self, "model.kind")?;
        let defaults = LossConfig::for_model(model);
        if self.get("loss.margin") == "auto" {
            self.set("loss.margin", &defaults.margin.to_string())?;
        }
        if self.get("loss.adversarial_temperature") == "auto" {
            self.set(
                "loss.adversarial_temperature",
                &defaults.adversarial_temperature.to_string(),
            )?;
        }
        Ok(())
    }

    pub fn settings(&self) -> Result<Settings, ConfigError> {
        let mut map = self.clone();
        map.materialize()?;
        let kind: SamplerKind = parse(&map, "sampler.kind")?;
        let restart_target: RestartTarget = parse(&map, "sampler.restart_target")?;
        let sampler = SamplerPolicy {
            kind,
            batch_size: parse(&map, "sampler.batch_size")?,
            restart_probability: parse(&map, "sampler.restart_probability")?,
            restart_target,
            extra_neighbor_fraction: parse(&map, "sampler.extra_neighbor_fraction")?,
            extra_neighbor_cap: parse(&map, "sampler.extra_neighbor_cap")?,
            seed: parse(&map, "trainer.seed")?,
        };
        let neighbor_cap = match map.get("loss.neighbor_cap") {
            "none" | "" => None,
            _ => Some(parse(&map, "loss.neighbor_cap")?),
        };
        let loss = LossConfig {
            margin: parse(&map, "loss.margin")?,
            negatives_per_positive: parse(&map, "loss.negatives")?,
            adversarial_temperature: parse(&map, "loss.adversarial_temperature")?,
            filtered_negatives: parse_bool(&map, "loss.filtered_negatives")?,
            neighbors_loss_enabled: parse_bool(&map, "loss.neighbors_loss")?,
            neighbor_cap,
            normalize_pre_cap: parse_bool(&map, "loss.normalize_pre_cap")?,
        };
        let optimizer = match map.get("trainer.optimizer").to_ascii_lowercase().as_str() {
            "adam" => OptimizerKind::Adam {
                beta1: parse(&map, "trainer.beta1")?,
                beta2: parse(&map, "trainer.beta2")?,
                eps: parse(&map, "trainer.eps")?,
            },
            "sgd" => OptimizerKind::Sgd,
            other => {
                return Err(ConfigError::BadValue {
                    key: "trainer.optimizer".into(),
                    message: format!("unknown optimizer `{other}` (valid: adam, sgd)"),
                })
            }
        };
        let train = TrainConfig {
            epochs: parse(&map, "trainer.epochs")?,
            learning_rate: parse(&map, "trainer.learning_rate")?,
            optimizer,
            sampler,
            loss,
            eval_every: parse(&map, "trainer.eval_every")?,
            seed: parse(&map, "trainer.seed")?,
            variance_probe_enabled: parse_bool(&map, "trainer.variance_probe")?,
            normalize_entities: parse_bool(&map, "trainer.normalize_entities")?,
        };
        let data_root = match map.get("data.root") {
            "" => None,
            r => Some(r.to_owned()),
        };
        Ok(Settings {
            dataset: map.get("data.dataset").to_owned(),
            data_root,
            model: parse(&map, "model.kind")?,
            dim: parse(&map, "model.dim")?,
            train,
            probe_batches: parse(&map, "trainer.probe_batches")?,
            runs_dir: map.get("output.runs_dir").to_owned(),
        })
    }
}
