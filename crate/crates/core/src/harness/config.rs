use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetConfig, STANDARD_DISTANCES};
use crate::error::{Error, Result};
use crate::nn::Arch;
use crate::optim::OptimConfig;
use crate::pipeline::PipelineVariant;
use crate::svm::SvmConfig;

/// Everything a run of the experiment matrix needs.
///
/// In TOML the matrix keys sit at the top level, followed by `[dataset]`,
/// `[optim]` and `[svm]` tables. Omitted keys take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Dataset root with a manifest. Rendered from `dataset` (and written
    /// here) when absent; rendered in memory when unset.
    pub data_dir: Option<PathBuf>,
    /// Network input side after crop and resize.
    pub input_side: usize,
    pub variants: Vec<PipelineVariant>,
    pub architectures: Vec<Arch>,
    pub train_distances: Vec<f64>,
    pub trials: usize,
    /// Probe split: train on this distance, test on the rest.
    pub probe_distance: f64,
    pub dataset: DatasetConfig,
    pub optim: OptimConfig,
    pub svm: SvmConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_dir: None,
            input_side: 224,
            variants: PipelineVariant::ALL.to_vec(),
            architectures: vec![Arch::MiniCnn, Arch::MiniResNet8],
            train_distances: STANDARD_DISTANCES.to_vec(),
            trials: 5,
            probe_distance: 54.5,
            dataset: DatasetConfig::full(),
            optim: OptimConfig::default(),
            svm: SvmConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.variants.is_empty()
            || self.architectures.is_empty()
            || self.train_distances.is_empty()
        {
            return bad("variants, architectures and train_distances must be non-empty");
        }
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.input_side < 8 {
            return bad("input_side must be at least 8");
        }
        self.optim.validate()?;
        self.svm.validate()?;
        if self.data_dir.is_none() {
            self.dataset.validate()?;
        }
        Ok(())
    }
}
