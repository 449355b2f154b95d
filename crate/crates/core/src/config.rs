//! Run configuration files: TOML with a dataset, model and metrics block.
//!
//! Precedence when resolving: command-line flags, then the file, then the
//! `TIF_SEED` environment variable (seed only), then built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{assign_folds, load_bundle, DatasetBundle, DatasetError};
use crate::metrics::{KernelConfig, SurrogateConfig};
use crate::model::{ModelError, TifConfig};

pub const SEED_ENV: &str = "TIF_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("{SEED_ENV}={0:?} is not an unsigned integer")]
    SeedEnv(String),
    #[error("fold {fold} out of range for {folds} folds")]
    Fold { fold: usize, folds: usize },
    #[error("no dataset path given")]
    NoDataset,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Serialize(#[from] toml::ser::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: Option<PathBuf>,
    pub folds: usize,
    /// Held-out test fold; the next fold validates.
    pub fold: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: None,
            folds: 10,
            fold: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Feature-noise std for path consistency.
    pub noise: f64,
    pub runs: usize,
    pub surrogate: SurrogateConfig,
    pub kernel: KernelConfig,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            noise: 0.05,
            runs: 10,
            surrogate: SurrogateConfig::default(),
            kernel: KernelConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Canonical seed; copied into the model and metrics blocks on resolve.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub model: TifConfig,
    pub metrics: MetricsConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    /// Fills the seed from `flag`, the file, `TIF_SEED`, then the model block.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> Result<u64, ConfigError> {
        let env = match std::env::var(SEED_ENV) {
            Ok(v) => Some(v.trim().parse().map_err(|_| ConfigError::SeedEnv(v))?),
            Err(_) => None,
        };
        let seed = flag.or(self.seed).or(env).unwrap_or(self.model.seed);
        self.seed = Some(seed);
        self.model.seed = seed;
        self.metrics.surrogate.seed = seed;
        Ok(seed)
    }

    /// Sizes the model's input, class and cluster widths from the dataset.
    pub fn fit_to(&mut self, bundle: &DatasetBundle) -> Result<(), ConfigError> {
        self.model.feat_dim = bundle.feature_dim();
        self.model.classes = bundle.num_classes();
        self.model.max_nodes = bundle.max_nodes();
        if self.dataset.fold >= self.dataset.folds {
            return Err(ConfigError::Fold {
                fold: self.dataset.fold,
                folds: self.dataset.folds,
            });
        }
        self.model.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }
}

/// Loads a bundle and assigns stratified folds when it carries none.
pub fn load_dataset(path: &Path, folds: usize, seed: u64) -> Result<DatasetBundle, ConfigError> {
    let bundle = load_bundle(path)?;
    let assigned = bundle.folds.iter().any(|&f| f != 0) || bundle.graphs.len() < 2;
    if assigned && bundle.folds.iter().all(|&f| f < folds) {
        Ok(bundle)
    } else {
        Ok(assign_folds(bundle, folds, seed)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let p = Path::new("x.toml");
        assert!(RunConfig::from_toml("[model]\nlevls = 3\n", p).is_err());
        assert!(RunConfig::from_toml("bogus = 1\n", p).is_err());
        let c = RunConfig::from_toml("seed = 4\n[model]\nlevels = 3\n[dataset]\nfold = 2\n", p).unwrap();
        assert_eq!(c.model.levels, 3);
        assert_eq!(c.dataset.fold, 2);
        assert_eq!(c.seed, Some(4));
    }

    #[test]
    fn resolved_echo_roundtrips() {
        let mut c = RunConfig::default();
        c.resolve_seed(Some(9)).unwrap();
        let text = c.to_toml().unwrap();
        let back = RunConfig::from_toml(&text, Path::new("r.toml")).unwrap();
        assert_eq!(back, c);
        assert!(text.contains("alpha1"));
        assert!(text.contains("noise"));
    }

    #[test]
    fn flag_beats_file() {
        let mut c = RunConfig {
            seed: Some(3),
            ..Default::default()
        };
        assert_eq!(c.resolve_seed(Some(5)).unwrap(), 5);
        let mut c = RunConfig {
            seed: Some(3),
            ..Default::default()
        };
        assert_eq!(c.resolve_seed(None).unwrap(), 3);
        assert_eq!(c.model.seed, 3);
    }
}
