//! Run configuration: a line-oriented `key = value` file.
//!
//! `#` starts a comment; blank lines are ignored; every key may appear once.
//! Relative paths are taken relative to the file's directory.
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `train_manifest`, `test_manifest` | dataset manifests | none |
//! | `out_dir` | output directory | `out` |
//! | `seed` | root seed | 0 |
//! | `threads` | worker cap (0 = all cores) | 0 |
//! | `model` | `full` or `desk` preset | `full` |
//! | `d1`, `d2`, `d3`, `hidden` | override preset widths | preset |
//! | `classes` | class count (checked against the data) | from data |
//! | `use_bbox`, `norm_affine` | head bbox feature, trainable γ/β | false, true |
//! | `walk_len` / `walk_fraction` | walk length, at most one of them | fraction 0.4 |
//! | `k`, `strategy`, `combined_variance_prob` | walk neighbourhood and step rule | 20, random, 0.3 |
//! | `walks` | walks per shape at inference | 48 |
//! | `aggregation` | majority, mean or max | majority |
//! | `lr_min`, `lr_max`, `cycle_iters`, `total_iters`, `batch_size` | schedule | 1e-6, 5e-4, 20000, 100000, 32 |
//! | `beta1`, `beta2`, `adam_eps`, `checkpoint_every` | optimizer, checkpoints | 0.9, 0.999, 1e-8, 0 |

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::inference::Aggregation;
use crate::neural::ModelConfig;
use crate::trainer::TrainConfig;
use crate::walker::{WalkLength, WalkSetup};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Architecture; `classes` is filled in by [`RunConfig::model_for`].
    pub model: ModelConfig,
    pub classes: Option<usize>,
    pub walk: WalkSetup,
    pub aggregation: Aggregation,
    pub train: TrainConfig,
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::full(0),
            classes: None,
            walk: WalkSetup::default(),
            aggregation: Aggregation::Majority,
            train: TrainConfig::default(),
            train_manifest: None,
            test_manifest: None,
            out_dir: PathBuf::from("out"),
            seed: 0,
            threads: 0,
        }
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> std::result::Result<T, String> {
    raw.parse()
        .map_err(|_| format!("`{key}`: cannot parse `{raw}` as {}", std::any::type_name::<T>()))
}

fn flag(key: &str, raw: &str) -> std::result::Result<bool, String> {
    match raw {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("`{key}`: expected true or false, got `{raw}`")),
    }
}

impl RunConfig {
    /// Sets one key. Paths are joined onto `base`.
    pub fn set(&mut self, key: &str, raw: &str, base: &Path) -> std::result::Result<(), String> {
        let path = || base.join(raw);
        match key {
            "train_manifest" => self.train_manifest = Some(path()),
            "test_manifest" => self.test_manifest = Some(path()),
            "out_dir" => self.out_dir = path(),
            "seed" => {
                self.seed = value(key, raw)?;
                self.train.seed = self.seed;
            }
            "threads" => self.threads = value(key, raw)?,
            "model" => {
                let preset = match raw {
                    "full" => ModelConfig::full(0),
                    "desk" => ModelConfig::desk(0),
                    _ => return Err(format!("`model`: expected full or desk, got `{raw}`")),
                };
                self.model.mlp_widths = preset.mlp_widths;
                self.model.hidden = preset.hidden;
            }
            "d1" => self.model.mlp_widths[0] = value(key, raw)?,
            "d2" => self.model.mlp_widths[1] = value(key, raw)?,
            "d3" => self.model.mlp_widths[2] = value(key, raw)?,
            "hidden" => self.model.hidden = value(key, raw)?,
            "classes" => self.classes = Some(value(key, raw)?),
            "use_bbox" => self.model.use_bbox = flag(key, raw)?,
            "norm_affine" => self.model.norm_affine = flag(key, raw)?,
            "walk_len" => self.walk.length = WalkLength::Fixed(value(key, raw)?),
            "walk_fraction" => self.walk.length = WalkLength::Fraction(value(key, raw)?),
            "k" => self.walk.k = value(key, raw)?,
            "strategy" => self.walk.strategy = raw.parse().map_err(|e: Error| e.to_string())?,
            "combined_variance_prob" => self.walk.combined_variance_prob = value(key, raw)?,
            "walks" => self.walk.walks = value(key, raw)?,
            "aggregation" => self.aggregation = raw.parse().map_err(|e: Error| e.to_string())?,
            "lr_min" => self.train.lr_min = value(key, raw)?,
            "lr_max" => self.train.lr_max = value(key, raw)?,
            "cycle_iters" => self.train.cycle_iters = value(key, raw)?,
            "total_iters" => self.train.total_iters = value(key, raw)?,
            "batch_size" => self.train.batch_size = value(key, raw)?,
            "beta1" => self.train.beta1 = value(key, raw)?,
            "beta2" => self.train.beta2 = value(key, raw)?,
            "adam_eps" => self.train.eps = value(key, raw)?,
            "checkpoint_every" => self.train.checkpoint_every = value(key, raw)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Applies the lines of a config text on top of `self`.
    pub fn apply_text(&mut self, text: &str, base: &Path) -> Result<()> {
        // "model" is applied first so explicit widths win regardless of order
        let mut seen: Vec<&str> = Vec::new();
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, val) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected `key = value`, got `{content}`"),
            })?;
            let (key, val) = (key.trim(), val.trim());
            if seen.contains(&key) {
                return Err(Error::Config { line, message: format!("duplicate key `{key}`") });
            }
            seen.push(key);
            entries.push((line, key, val));
        }
        if seen.contains(&"walk_len") && seen.contains(&"walk_fraction") {
            return Err(Error::ConfigValue("conflicting walk length: set walk_len or walk_fraction, not both".into()));
        }
        entries.sort_by_key(|&(_, key, _)| key != "model");
        for (line, key, val) in entries {
            self.set(key, val, base).map_err(|message| Error::Config { line, message })?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides, as given on a command line.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        let cwd = Path::new("");
        for o in overrides {
            let o = o.as_ref();
            let (key, val) = o.split_once('=').ok_or_else(|| {
                Error::ConfigValue(format!("override `{o}` is not of the form key=value"))
            })?;
            self.set(key.trim(), val.trim(), cwd)
                .map_err(|message| Error::ConfigValue(format!("override `{o}`: {message}")))?;
        }
        Ok(())
    }

    /// Checks value ranges and, if `need_train`, that a training manifest is
    /// set and exists.
    pub fn validate(&self, need_train: bool) -> Result<()> {
        let usage = |e: Error| match e {
            Error::InvalidParam(m) => Error::ConfigValue(m),
            other => other,
        };
        self.walk.validate().map_err(usage)?;
        if self.walk.walks == 0 {
            return Err(Error::ConfigValue("walks must be >= 1".into()));
        }
        self.train.validate().map_err(usage)?;
        self.model_for(self.classes.unwrap_or(1)).map_err(usage)?;
        if need_train {
            let path = self
                .train_manifest
                .as_ref()
                .ok_or_else(|| Error::ConfigValue("missing dataset path: set train_manifest".into()))?;
            if !path.is_file() {
                return Err(Error::MissingFile(path.clone()));
            }
        }
        Ok(())
    }

    /// The architecture for a dataset with `classes` classes.
    pub fn model_for(&self, classes: usize) -> Result<ModelConfig> {
        if let Some(c) = self.classes {
            if c != classes {
                return Err(Error::ConfigValue(format!(
                    "config declares {c} classes but the data has {classes}"
                )));
            }
        }
        let cfg = ModelConfig { classes, ..self.model.clone() };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads and validates a config file; a training manifest is required.
pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let cfg = load_config(path)?;
    cfg.validate(true)?;
    Ok(cfg)
}

/// Reads a config file without the dataset checks, so overrides can still
/// be applied before validation.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut cfg = RunConfig::default();
    cfg.apply_text(&text, base)?;
    Ok(cfg)
}
