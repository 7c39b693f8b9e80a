//! Run configuration: a TOML file whose every field can be overridden from
//! the command line.
//!
//! ```toml
//! dataset = "data/learning_traces.13m.csv"
//! model = "hlr_plus"
//! seed = 7
//! limit = 500000
//! out = "runs/hlr_plus"
//!
//! [split]
//! train_fraction = 0.9
//! mode = "random"
//!
//! [hyper]
//! learning_rate = 0.001
//! epochs = 1
//!
//! [[lexicons]]
//! path = "lexicons/complexity.tsv"
//! kind = "complexity"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{SplitMode, SplitSpec};
use crate::error::{Error, Result};
use crate::lexicon::{FeatureFlags, LexiconSource};
use crate::model::ModelKind;
use crate::seed;
use crate::train::{Hyperparameters, Optimizer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub mode: SplitMode,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_fraction: 0.9,
            mode: SplitMode::Random,
        }
    }
}

/// Hyperparameter overrides; unset fields fall back to per-kind defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperOverrides {
    pub learning_rate: Option<f64>,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub epochs: Option<usize>,
    pub minibatch_size: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub neural_bias: Option<bool>,
    pub optimizer: Option<Optimizer>,
    pub init_scale: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureOverrides {
    pub dense: Option<bool>,
    pub interaction: Option<bool>,
    pub lexeme_tags: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub learning_language: String,
    pub lexicons: Vec<LexiconSource>,
    pub model: ModelKind,
    pub seed: u64,
    /// Keep only the first `limit` matching events (0 = all).
    pub limit: usize,
    /// Train neural kinds on at most this many training events (0 = all).
    pub neural_train_limit: usize,
    pub out: PathBuf,
    /// Worker threads (0 = one per core).
    pub workers: usize,
    pub split: SplitConfig,
    pub hyper: HyperOverrides,
    pub features: FeatureOverrides,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            learning_language: "en".into(),
            lexicons: Vec::new(),
            model: ModelKind::Hlr,
            seed: 0,
            limit: 0,
            neural_train_limit: 0,
            out: PathBuf::from("out"),
            workers: 0,
            split: SplitConfig::default(),
            hyper: HyperOverrides::default(),
            features: FeatureOverrides::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = cfg.dataset.as_mut() {
            rebase(d);
        }
        for lex in cfg.lexicons.iter_mut() {
            rebase(&mut lex.path);
        }
        rebase(&mut cfg.out);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.split.train_fraction,
            seed: seed::derive(self.seed, "split"),
            mode: self.split.mode,
        }
    }

    pub fn hyperparameters(&self, kind: ModelKind) -> Hyperparameters {
        let o = &self.hyper;
        let d = Hyperparameters::defaults_for(kind);
        Hyperparameters {
            learning_rate: o.learning_rate.unwrap_or(d.learning_rate),
            alpha: o.alpha.unwrap_or(d.alpha),
            lambda: o.lambda.unwrap_or(d.lambda),
            epochs: o.epochs.unwrap_or(d.epochs),
            minibatch_size: o.minibatch_size.unwrap_or(d.minibatch_size),
            seed: seed::derive(self.seed, "train"),
            hidden_dim: o.hidden_dim.unwrap_or(d.hidden_dim),
            neural_bias: o.neural_bias.unwrap_or(d.neural_bias),
            optimizer: o.optimizer.unwrap_or(d.optimizer),
            init_scale: o.init_scale.unwrap_or(d.init_scale),
        }
    }

    pub fn feature_flags(&self, kind: ModelKind) -> FeatureFlags {
        let d = kind.default_flags();
        let o = &self.features;
        FeatureFlags {
            dense: o.dense.unwrap_or(d.dense),
            interaction: o.interaction.unwrap_or(d.interaction),
            lexeme_tags: o.lexeme_tags.unwrap_or(d.lexeme_tags),
        }
    }

    pub fn dataset_path(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| Error::Config("no dataset path given (--dataset or `dataset` in config)".into()))
    }

    /// Checks ranges and that every referenced input file exists.
    pub fn validate(&self) -> Result<()> {
        self.split_spec().validate()?;
        let dataset = self.dataset_path()?;
        if !dataset.is_file() {
            return Err(Error::Config(format!("dataset not found: {}", dataset.display())));
        }
        for lex in &self.lexicons {
            if !lex.path.is_file() {
                return Err(Error::Config(format!("lexicon not found: {}", lex.path.display())));
            }
        }
        for kind in ModelKind::TRAINABLE {
            self.hyperparameters(kind).validate()?;
        }
        Ok(())
    }
}
