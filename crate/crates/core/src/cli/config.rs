//! Flat `key = value` experiment configuration with a closed schema.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::data::SyntheticSpec;
use crate::eval::MetricSpec;
use crate::loss::{LossError, LossSpec};
use crate::trainer::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("{path}:{line}: expected `key = value`")]
    Malformed { path: PathBuf, line: usize },
    #[error("{path}:{line}: {source}")]
    InFile {
        path: PathBuf,
        line: usize,
        #[source]
        source: Box<ConfigError>,
    },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing required setting `{0}`")]
    Missing(&'static str),
    #[error(transparent)]
    Loss(#[from] LossError),
}

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

macro_rules! keys {
    ($($name:literal = $default:literal : $help:literal),* $(,)?) => {
        &[$(Key { name: $name, default: $default, help: $help }),*]
    };
}

/// Every accepted key. An empty default means "unset".
pub const SCHEMA: &[Key] = keys![
    "seed" = "0": "seed for every random draw",
    "out" = "out": "output directory",
    "n_topics" = "32": "synthetic topics",
    "docs_per_topic" = "8": "documents per topic",
    "queries_per_topic" = "4": "queries per topic, validation included",
    "validation_queries_per_topic" = "1": "queries per topic held out for validation",
    "dim" = "32": "embedding dimension",
    "hardness" = "0.3": "probability of a nearest-topic negative",
    "doc_noise" = "1.2": "document perturbation norm around topic centers",
    "query_noise" = "0.2": "query perturbation norm around topic centers",
    "anisotropy" = "0.3": "expected cosine between topic centers",
    "graded" = "false": "grade documents 1-3 by noise tier",
    "data_dir" = "data": "directory written by `generate`",
    "init" = "features": "initial table: features | gaussian",
    "loss" = "adaptive": "static | adaptive | distributed",
    "epsilon" = "1": "static margin target",
    "in_batch" = "": "use in-batch negatives (implied by distributed)",
    "batch_size" = "64": "triplets per step",
    "lr" = "7.8125e-8": "base learning rate",
    "weight_decay" = "1e-6": "decoupled weight decay",
    "lr_gamma" = "0.99999": "per-step learning-rate decay",
    "eval_every" = "500": "steps between validation evaluations",
    "patience" = "16": "evaluations without improvement before stopping",
    "max_epochs" = "1": "passes over the triplets",
    "max_steps" = "": "hard cap on optimizer steps",
    "checkpoint" = "": "embedding table TSV",
    "mode" = "full": "full | rerank",
    "run" = "": "baseline run file for rerank mode",
    "depth" = "1000": "candidates re-scored per query in rerank mode",
    "k" = "1000": "documents retrieved per query in full mode",
    "split" = "validation": "queries to evaluate: validation | train | all",
    "metrics" = "ndcg@10,recall@1000,hits@100": "comma-separated measures",
    "binarize_threshold" = "1": "grades above this count as relevant",
    "run_a" = "": "first run to compare",
    "run_b" = "": "second run to compare",
    "qrels" = "": "qrels file for compare",
    "metric" = "ndcg@10": "measure(s) to compare",
    "epsilon_l" = "0.05": "equivalence bound on the score difference",
    "alpha" = "0.05": "significance level",
    "family" = "1": "Bonferroni family size",
    "triplets" = "": "triplets TSV for inspect-loss",
    "query" = "": "query id for inspect-loss",
];

/// Help text listing every key with its default.
pub fn schema_help() -> String {
    let width = SCHEMA.iter().map(|k| k.name.len()).max().unwrap_or(0);
    let mut s = String::from("Config keys (file `key = value`, flags override):\n");
    for k in SCHEMA {
        let default = if k.default.is_empty() {
            "unset"
        } else {
            k.default
        };
        let _ = writeln!(s, "  {:width$}  {} [default: {}]", k.name, k.help, default);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Static,
    Adaptive,
    Distributed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    Features,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Full,
    Rerank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Validation,
    Train,
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub synthetic: SyntheticSpec,
    pub data_dir: PathBuf,
    pub init: InitMode,
    pub loss: LossKind,
    pub epsilon: f64,
    pub in_batch: Option<bool>,
    pub train: TrainConfig,
    pub checkpoint: Option<PathBuf>,
    pub mode: EvalMode,
    pub run: Option<PathBuf>,
    pub depth: usize,
    pub k: usize,
    pub split: Split,
    pub metrics: Vec<String>,
    pub binarize_threshold: u32,
    pub run_a: Option<PathBuf>,
    pub run_b: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub metric: Vec<String>,
    pub epsilon_l: f64,
    pub alpha: f64,
    pub family: usize,
    pub triplets: Option<PathBuf>,
    pub query: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut c = Self {
            seed: 0,
            out: PathBuf::new(),
            synthetic: SyntheticSpec::default(),
            data_dir: PathBuf::new(),
            init: InitMode::Features,
            loss: LossKind::Adaptive,
            epsilon: 1.0,
            in_batch: None,
            train: TrainConfig::default(),
            checkpoint: None,
            mode: EvalMode::Full,
            run: None,
            depth: 0,
            k: 0,
            split: Split::Validation,
            metrics: Vec::new(),
            binarize_threshold: 0,
            run_a: None,
            run_b: None,
            qrels: None,
            metric: Vec::new(),
            epsilon_l: 0.0,
            alpha: 0.0,
            family: 0,
            triplets: None,
            query: None,
        };
        for k in SCHEMA {
            c.set(k.name, k.default).expect("schema defaults parse");
        }
        c
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| ConfigError::InvalidValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: e.to_string(),
        })
}

fn choice<T: Copy>(key: &str, value: &str, options: &[(&str, T)]) -> Result<T, ConfigError> {
    options
        .iter()
        .find(|(name, _)| *name == value)
        .map(|(_, v)| *v)
        .ok_or_else(|| ConfigError::InvalidValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: format!(
                "expected one of {}",
                options
                    .iter()
                    .map(|(n, _)| *n)
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        })
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

impl ExperimentConfig {
    /// Sets one schema key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key {
            "seed" => {
                self.seed = parse(key, value)?;
                self.synthetic.seed = self.seed;
                self.train.seed = self.seed;
            }
            "out" => self.out = PathBuf::from(value),
            "n_topics" => self.synthetic.n_topics = parse(key, value)?,
            "docs_per_topic" => self.synthetic.docs_per_topic = parse(key, value)?,
            "queries_per_topic" => self.synthetic.queries_per_topic = parse(key, value)?,
            "validation_queries_per_topic" => {
                self.synthetic.validation_queries_per_topic = parse(key, value)?
            }
            "dim" => self.synthetic.dim = parse(key, value)?,
            "hardness" => self.synthetic.hardness = parse(key, value)?,
            "doc_noise" => self.synthetic.doc_noise = parse(key, value)?,
            "query_noise" => self.synthetic.query_noise = parse(key, value)?,
            "anisotropy" => self.synthetic.anisotropy = parse(key, value)?,
            "graded" => self.synthetic.graded = parse(key, value)?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "init" => {
                self.init = choice(
                    key,
                    value,
                    &[
                        ("features", InitMode::Features),
                        ("gaussian", InitMode::Gaussian),
                    ],
                )?
            }
            "loss" => {
                self.loss = choice(
                    key,
                    value,
                    &[
                        ("static", LossKind::Static),
                        ("adaptive", LossKind::Adaptive),
                        ("distributed", LossKind::Distributed),
                    ],
                )?
            }
            "epsilon" => self.epsilon = parse(key, value)?,
            "in_batch" => {
                self.in_batch = if value.is_empty() {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "lr" => self.train.base_lr = parse(key, value)?,
            "weight_decay" => self.train.weight_decay = parse(key, value)?,
            "lr_gamma" => self.train.lr_gamma = parse(key, value)?,
            "eval_every" => self.train.eval_every = parse(key, value)?,
            "patience" => self.train.patience = parse(key, value)?,
            "max_epochs" => self.train.max_epochs = parse(key, value)?,
            "max_steps" => {
                self.train.max_steps = if value.is_empty() {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "checkpoint" => self.checkpoint = path(value),
            "mode" => {
                self.mode = choice(
                    key,
                    value,
                    &[("full", EvalMode::Full), ("rerank", EvalMode::Rerank)],
                )?
            }
            "run" => self.run = path(value),
            "depth" => self.depth = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "split" => {
                self.split = choice(
                    key,
                    value,
                    &[
                        ("validation", Split::Validation),
                        ("train", Split::Train),
                        ("all", Split::All),
                    ],
                )?
            }
            "metrics" => self.metrics = list(value),
            "binarize_threshold" => self.binarize_threshold = parse(key, value)?,
            "run_a" => self.run_a = path(value),
            "run_b" => self.run_b = path(value),
            "qrels" => self.qrels = path(value),
            "metric" => self.metric = list(value),
            "epsilon_l" => self.epsilon_l = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "family" => self.family = parse(key, value)?,
            "triplets" => self.triplets = path(value),
            "query" => self.query = (!value.is_empty()).then(|| value.to_string()),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies a config file: one `key = value` per line, `#` starts a comment.
    pub fn apply_str(&mut self, text: &str, origin: &Path) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Malformed {
                path: origin.to_path_buf(),
                line: n + 1,
            })?;
            self.set(key.trim(), value)
                .map_err(|e| ConfigError::InFile {
                    path: origin.to_path_buf(),
                    line: n + 1,
                    source: Box::new(e),
                })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.apply_str(&text, path)
    }

    /// The configured loss; distributed implies in-batch.
    pub fn loss_spec(&self) -> Result<LossSpec, ConfigError> {
        let spec = match self.loss {
            LossKind::Static => {
                LossSpec::static_margin(self.epsilon, self.in_batch.unwrap_or(false))?
            }
            LossKind::Adaptive => LossSpec::adaptive(self.in_batch.unwrap_or(false)),
            LossKind::Distributed => {
                if self.in_batch == Some(false) {
                    return Err(ConfigError::InvalidValue {
                        key: "in_batch".into(),
                        value: "false".into(),
                        reason: "the distributed loss always uses in-batch negatives".into(),
                    });
                }
                LossSpec::distributed()
            }
        };
        Ok(spec)
    }

    fn metric_specs(&self, key: &str, names: &[String]) -> Result<Vec<MetricSpec>, ConfigError> {
        if names.is_empty() {
            return Err(ConfigError::InvalidValue {
                key: key.into(),
                value: String::new(),
                reason: "at least one metric is required".into(),
            });
        }
        names
            .iter()
            .map(|m| {
                MetricSpec::parse(m, self.binarize_threshold).map_err(|e| {
                    ConfigError::InvalidValue {
                        key: key.into(),
                        value: m.clone(),
                        reason: e.to_string(),
                    }
                })
            })
            .collect()
    }

    pub fn evaluate_metrics(&self) -> Result<Vec<MetricSpec>, ConfigError> {
        self.metric_specs("metrics", &self.metrics)
    }

    pub fn compare_metrics(&self) -> Result<Vec<MetricSpec>, ConfigError> {
        self.metric_specs("metric", &self.metric)
    }
}
