//! Experiment configuration: one JSON document wiring network, training,
//! data and metric settings together.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mscanet_core::data::{load_dataset, split_counts, synth_generate, SegmentationSample, SynthConfig};
use mscanet_core::network::NetworkConfig;
use mscanet_core::train::TrainConfig;
use mscanet_core::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataConfig {
    /// On-disk dataset in the `images/` + `masks/` layout.
    Disk {
        root: PathBuf,
        #[serde(default = "default_split_ratio")]
        split_ratio: f64,
        #[serde(default)]
        split_seed: u64,
    },
    /// Synthetic dataset generated in-process.
    Synth {
        synth: SynthConfig,
        #[serde(default = "default_split_ratio")]
        split_ratio: f64,
    },
}

fn default_split_ratio() -> f64 {
    0.7
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub threshold: f64,
    pub dist_px: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            threshold: 0.5,
            dist_px: 3.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub training: TrainConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.training.validate()?;
        if !(self.metrics.threshold > 0.0 && self.metrics.threshold < 1.0) {
            return Err(Error::Config(format!(
                "metrics.threshold must lie in (0, 1), got {}",
                self.metrics.threshold
            )));
        }
        if self.metrics.dist_px <= 0.0 {
            return Err(Error::Config(format!(
                "metrics.dist_px must be positive, got {}",
                self.metrics.dist_px
            )));
        }
        match &self.data {
            DataConfig::Disk { split_ratio, .. } | DataConfig::Synth { split_ratio, .. } => {
                if !(0.0..=1.0).contains(split_ratio) {
                    return Err(Error::Config(format!(
                        "data.split_ratio must lie in [0, 1], got {split_ratio}"
                    )));
                }
            }
        }
        if let DataConfig::Synth { synth, .. } = &self.data {
            synth.validate()?;
        }
        Ok(())
    }

    /// Materialize (train, test) per the data section.
    pub fn load_split(&self) -> Result<(Vec<SegmentationSample>, Vec<SegmentationSample>)> {
        match &self.data {
            DataConfig::Disk {
                root,
                split_ratio,
                split_seed,
            } => {
                if !root.exists() {
                    return Err(Error::Load(format!(
                        "dataset path does not exist: {}",
                        root.display()
                    )));
                }
                load_dataset(root, *split_ratio, *split_seed)
            }
            DataConfig::Synth { synth, split_ratio } => {
                let samples = synth_generate(synth)?;
                let (n_train, _) = split_counts(samples.len(), *split_ratio);
                let mut train = samples;
                let test = train.split_off(n_train);
                Ok((train, test))
            }
        }
    }
}
