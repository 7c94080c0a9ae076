//! Flat key–value run configuration with a fixed schema.
//!
//! A TOML file's nested tables are flattened to dotted keys
//! (`[train] lr = 0.1` becomes `train.lr`). `--set key=value` flags
//! override file values. Every key is checked against [`SCHEMA`] before
//! any work starts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use toml::Value;

use crate::corpus::SplitRatios;
use crate::gaussmask::SigmaRule;
use crate::qagent::QConfig;
use crate::seq2seq::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueKind {
    Int,
    Float,
    Path,
    /// Three non-negative numbers.
    Ratios,
    /// `"log2"` or a positive number.
    Sigma,
}

pub const SCHEMA: &[(&str, ValueKind)] = &[
    ("seed", ValueKind::Int),
    ("corpus.path", ValueKind::Path),
    ("corpus.max_pairs", ValueKind::Int),
    ("corpus.split_ratios", ValueKind::Ratios),
    ("corpus.seed", ValueKind::Int),
    ("embeddings.path", ValueKind::Path),
    ("embeddings.dim", ValueKind::Int),
    ("graph.threshold", ValueKind::Float),
    ("model.hidden_dim", ValueKind::Int),
    ("train.lr", ValueKind::Float),
    ("train.epochs", ValueKind::Int),
    ("train.seed", ValueKind::Int),
    ("train.grad_clip", ValueKind::Float),
    ("q.alpha", ValueKind::Float),
    ("q.horizon", ValueKind::Int),
    ("q.epsilon0", ValueKind::Float),
    ("q.episodes", ValueKind::Int),
    ("q.bonus", ValueKind::Float),
    ("q.seed", ValueKind::Int),
    ("mask.sigma", ValueKind::Sigma),
    ("output.dir", ValueKind::Path),
];

fn kind_of(key: &str) -> Option<ValueKind> {
    SCHEMA.iter().find(|(k, _)| *k == key).map(|&(_, kind)| kind)
}

fn flatten(prefix: &str, table: toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            v => {
                out.insert(key, v);
            }
        }
    }
}

fn check(key: &str, value: &Value) -> Result<()> {
    let kind = kind_of(key).ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
    let ok = match kind {
        ValueKind::Int => matches!(value, Value::Integer(i) if *i >= 0),
        ValueKind::Float => matches!(value, Value::Float(_) | Value::Integer(_)),
        ValueKind::Path => matches!(value, Value::String(_)),
        ValueKind::Ratios => matches!(value, Value::Array(a)
            if a.len() == 3 && a.iter().all(|x| matches!(x, Value::Float(_) | Value::Integer(_)))),
        ValueKind::Sigma => match value {
            Value::String(s) => s == "log2",
            Value::Float(f) => *f > 0.0,
            Value::Integer(i) => *i > 0,
            _ => false,
        },
    };
    if ok {
        Ok(())
    } else {
        let expected = match kind {
            ValueKind::Int => "a non-negative integer",
            ValueKind::Float => "a number",
            ValueKind::Path => "a path string",
            ValueKind::Ratios => "three numbers [train, val, test]",
            ValueKind::Sigma => "\"log2\" or a positive number",
        };
        Err(Error::Config(format!("`{key}` must be {expected}, got {value}")))
    }
}

fn number(value: &Value) -> f64 {
    match value {
        Value::Float(f) => *f,
        Value::Integer(i) => *i as f64,
        _ => unreachable!("validated against the schema"),
    }
}

/// 64-bit FNV-1a.
fn name_hash(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, Value>,
    /// Relative paths resolve against this directory.
    base_dir: PathBuf,
}

impl RunConfig {
    /// Reads `path` (if any), applies `overrides` and the `--seed` flag, and
    /// validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut values = BTreeMap::new();
        let base_dir = match path {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
                let table: toml::Table = text
                    .parse()
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                flatten("", table, &mut values);
                absolute(path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new(".")))?
            }
            None => absolute(Path::new("."))?,
        };
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{item}` is not of the form key=value")))?;
            let key = key.trim();
            // Parse the right-hand side as a TOML value, falling back to a
            // bare string so that paths need no quoting.
            let value = format!("v = {raw}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| Value::String(raw.trim().to_owned()));
            values.insert(key.to_owned(), value);
        }
        if let Some(seed) = seed {
            values.insert("seed".into(), Value::Integer(seed as i64));
        }
        Self::from_values(values, base_dir)
    }

    pub fn from_values(values: BTreeMap<String, Value>, base_dir: PathBuf) -> Result<Self> {
        for (key, value) in &values {
            check(key, value)?;
        }
        let config = Self { values, base_dir };
        // Composite settings have cross-field rules; surface them now.
        config.split_ratios()?;
        config.train_config()?;
        config.q_config()?.validate()?;
        Ok(config)
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.values.get(key)
    }

    fn int(&self, key: &str) -> Option<u64> {
        self.values.get(key).map(|v| v.as_integer().expect("validated") as u64)
    }

    fn float(&self, key: &str) -> Option<f64> {
        self.values.get(key).map(number)
    }

    pub fn global_seed(&self) -> u64 {
        self.int("seed").unwrap_or(0)
    }

    /// `<module>.seed` when set, otherwise the global seed offset by a hash
    /// of the module name.
    pub fn module_seed(&self, module: &str) -> u64 {
        self.int(&format!("{module}.seed"))
            .unwrap_or_else(|| self.global_seed().wrapping_add(name_hash(module)))
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.base_dir.join(path)
    }

    /// Required path setting. A missing key is a config error naming it.
    pub fn path(&self, key: &str) -> Result<PathBuf> {
        match self.values.get(key) {
            Some(Value::String(s)) => Ok(self.resolve(Path::new(s))),
            _ => Err(Error::Config(format!("missing required key `{key}`"))),
        }
    }

    /// Required path that must name an existing file.
    pub fn input_file(&self, key: &str) -> Result<PathBuf> {
        let path = self.path(key)?;
        if !path.is_file() {
            return Err(Error::Config(format!("`{key}` points to {}, which does not exist", path.display())));
        }
        Ok(path)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.path("output.dir").unwrap_or_else(|_| self.resolve(Path::new("runs")))
    }

    pub fn max_pairs(&self) -> Option<usize> {
        self.int("corpus.max_pairs").map(|n| n as usize)
    }

    pub fn embedding_dim(&self) -> Result<usize> {
        self.int("embeddings.dim")
            .map(|d| d as usize)
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::Config("missing required key `embeddings.dim`".into()))
    }

    pub fn hidden_dim(&self) -> usize {
        self.int("model.hidden_dim").map_or(32, |d| d as usize)
    }

    pub fn split_ratios(&self) -> Result<SplitRatios> {
        match self.values.get("corpus.split_ratios") {
            None => Ok(SplitRatios::default()),
            Some(Value::Array(a)) => {
                SplitRatios::new(number(&a[0]), number(&a[1]), number(&a[2]))
            }
            Some(_) => unreachable!("validated against the schema"),
        }
    }

    pub fn threshold(&self) -> f64 {
        self.float("graph.threshold").unwrap_or(QConfig::default().threshold)
    }

    pub fn sigma_rule(&self) -> SigmaRule {
        match self.values.get("mask.sigma") {
            Some(Value::String(_)) | None => SigmaRule::LogWindow,
            Some(v) => SigmaRule::Fixed(number(v)),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let config = TrainConfig {
            lr: self.float("train.lr").unwrap_or(d.lr),
            epochs: self.int("train.epochs").map_or(d.epochs, |e| e as usize),
            seed: self.module_seed("train"),
            grad_clip: self.float("train.grad_clip").unwrap_or(d.grad_clip),
        };
        if !(config.lr >= 0.0 && config.lr.is_finite()) {
            return Err(Error::Config(format!("`train.lr` must be non-negative, got {}", config.lr)));
        }
        if config.grad_clip.is_nan() || config.grad_clip <= 0.0 {
            return Err(Error::Config(format!("`train.grad_clip` must be positive, got {}", config.grad_clip)));
        }
        Ok(config)
    }

    pub fn q_config(&self) -> Result<QConfig> {
        let d = QConfig::default();
        Ok(QConfig {
            alpha: self.float("q.alpha").unwrap_or(d.alpha),
            horizon: self.int("q.horizon").map_or(d.horizon, |h| h as usize),
            epsilon0: self.float("q.epsilon0").unwrap_or(d.epsilon0),
            threshold: self.threshold(),
            bonus: self.float("q.bonus").unwrap_or(d.bonus),
            episodes: self.int("q.episodes").map_or(d.episodes, |e| e as usize),
            seed: self.module_seed("q"),
        })
    }
}

fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).map_err(|e| Error::Config(format!("cannot resolve {}: {e}", path.display())))
}
