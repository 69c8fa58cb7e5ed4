//! Experiment configuration, read from a flat TOML file whose keys are the
//! field names of [`ExperimentConfig`].

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_cifar10_bin, load_mnist_idx, make_synthetic_linear, Dataset};
use crate::error::{Error, Result};
use crate::federated::{LdpMode, RoundConfig};
use crate::mechanisms::{ClipSpec, PrivacyBudget};
use crate::seed::derive;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    SyntheticLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    /// Directory holding the raw files; unused for synthetic data. Relative
    /// paths are resolved against the config file's directory.
    #[serde(default)]
    pub data_dir: PathBuf,
    pub train_size: usize,
    pub test_size: usize,
    pub layer_dims: Vec<usize>,
    pub n_clients: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub ldp_mode: LdpMode,
    pub clip_radius: f64,
    pub rounds: usize,
    pub epsilon_grid: Vec<PrivacyBudget>,
    pub n_repeats: usize,
    pub alpha: f64,
    pub master_seed: u64,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Mnist,
            data_dir: PathBuf::from("data/mnist"),
            train_size: 2000,
            test_size: 500,
            layer_dims: vec![784, 64, 10],
            n_clients: 10,
            local_epochs: 1,
            batch_size: 32,
            learning_rate: 0.05,
            ldp_mode: LdpMode::UpdatePerturbation,
            clip_radius: 1.0,
            rounds: 20,
            epsilon_grid: [0.5, 1.0, 2.0, 4.0, 8.0]
                .into_iter()
                .map(PrivacyBudget::Finite)
                .chain([PrivacyBudget::Infinite])
                .collect(),
            n_repeats: 5,
            alpha: 0.1,
            master_seed: 20210601,
            output: PathBuf::from("results/sweep.csv"),
        }
    }
}

const STREAM_TRAIN_SUBSET: u64 = 0x5452_4e53;
const STREAM_TEST_SUBSET: u64 = 0x5445_5354;

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if cfg.data_dir.is_relative() && !cfg.data_dir.as_os_str().is_empty() {
            if let Some(parent) = path.parent() {
                cfg.data_dir = parent.join(&cfg.data_dir);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epsilon_grid.is_empty() {
            return bad("epsilon_grid must not be empty".into());
        }
        if self.n_repeats == 0 {
            return bad("n_repeats must be at least 1".into());
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be nonnegative, got {}", self.alpha));
        }
        if self.train_size == 0 || self.test_size == 0 {
            return bad("train_size and test_size must be positive".into());
        }
        if self.train_size < self.n_clients {
            return bad("train_size must be at least n_clients".into());
        }
        ClipSpec::l1(self.clip_radius).map_err(|e| Error::Config(e.to_string()))?;
        self.round_config(PrivacyBudget::Infinite).validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn round_config(&self, budget: PrivacyBudget) -> RoundConfig {
        RoundConfig {
            layer_dims: self.layer_dims.clone(),
            n_clients: self.n_clients,
            local_epochs: self.local_epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            ldp_mode: self.ldp_mode,
            budget,
            clip: ClipSpec::l1(self.clip_radius).unwrap_or(ClipSpec::l1(1.0).expect("positive")),
            rounds: self.rounds,
        }
    }

    /// Loads the train and test splits and draws the configured stratified
    /// subsets. Subset draws depend only on `master_seed`.
    pub fn load_splits(&self) -> Result<(Dataset, Dataset)> {
        let (train, test) = match self.dataset {
            DatasetKind::Mnist => {
                let d = &self.data_dir;
                (
                    load_mnist_idx(d.join("train-images-idx3-ubyte"), d.join("train-labels-idx1-ubyte"))?,
                    load_mnist_idx(d.join("t10k-images-idx3-ubyte"), d.join("t10k-labels-idx1-ubyte"))?,
                )
            }
            DatasetKind::Cifar10 => {
                let d = &self.data_dir;
                let train_files: Vec<PathBuf> = (1..=5).map(|i| d.join(format!("data_batch_{i}.bin"))).collect();
                (load_cifar10_bin(&train_files)?, load_cifar10_bin(&[d.join("test_batch.bin")])?)
            }
            DatasetKind::SyntheticLinear => {
                let seed = derive(self.master_seed, &[STREAM_TRAIN_SUBSET]);
                let (all, _) = make_synthetic_linear(self.train_size + self.test_size, seed)?;
                let train_idx: Vec<usize> = (0..self.train_size).collect();
                let test_idx: Vec<usize> = (self.train_size..all.len()).collect();
                let split = |idx: &[usize], name: &str| Dataset {
                    name: name.to_string(),
                    data: all.data.select(idx),
                    n_classes: all.n_classes,
                };
                return Ok((split(&train_idx, "synthetic_linear"), split(&test_idx, "synthetic_linear")));
            }
        };
        if train.dim() != self.layer_dims[0] || train.n_classes != *self.layer_dims.last().expect("validated") {
            return Err(Error::Config(format!(
                "layer_dims {:?} do not fit {} (d = {}, C = {})",
                self.layer_dims,
                train.name,
                train.dim(),
                train.n_classes
            )));
        }
        Ok((
            train.stratified_subset(self.train_size, derive(self.master_seed, &[STREAM_TRAIN_SUBSET]))?,
            test.stratified_subset(self.test_size, derive(self.master_seed, &[STREAM_TEST_SUBSET]))?,
        ))
    }
}
