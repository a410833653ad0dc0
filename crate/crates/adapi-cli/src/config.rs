//! Experiment configuration: TOML in, resolved JSON out.

use adapi::masks::{DensityLevel, DensitySchedule};
use adapi::nn::data::{self, Dataset};
use adapi::nn::optim::{AdamWConfig, KdConfig, TrainConfig};
use adapi::nn::Model;
use adapi::prg::session_rng;
use adapi::cost::DeviceProfile;
use adapi::ring::FixedPointCodec;
use adapi::runtime::ComparisonMode;
use adapi::train::FreezeMode;
use adapi::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum ModelConfig {
    Mlp {
        input_dim: usize,
        hidden: Vec<usize>,
        classes: usize,
    },
    ToyCnn {
        input: (usize, usize, usize),
        conv_channels: (usize, usize),
        fc_hidden: usize,
        classes: usize,
    },
}

impl ModelConfig {
    pub fn build(&self, seed: u64) -> Model {
        let mut rng = session_rng(seed, 0, "model-init");
        match self {
            ModelConfig::Mlp {
                input_dim,
                hidden,
                classes,
            } => adapi::nn::mlp(*input_dim, hidden, *classes, &mut rng),
            ModelConfig::ToyCnn {
                input,
                conv_channels,
                fc_hidden,
                classes,
            } => adapi::nn::toy_cnn(*input, *conv_channels, *fc_hidden, *classes, &mut rng),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum DatasetConfig {
    TwoMoons {
        train: usize,
        test: usize,
        noise: f64,
    },
    Blobs {
        train: usize,
        test: usize,
        classes: usize,
        std: f64,
    },
    Bars {
        train: usize,
        test: usize,
        size: usize,
        noise: f64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        classes: usize,
    },
}

impl DatasetConfig {
    pub fn build(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        let mut rng = session_rng(seed, 0, "dataset");
        Ok(match self {
            DatasetConfig::TwoMoons { train, test, noise } => {
                data::two_moons(train + test, *noise, &mut rng).split(*train)
            }
            DatasetConfig::Blobs {
                train,
                test,
                classes,
                std,
            } => data::gaussian_blobs(train + test, *classes, *std, &mut rng).split(*train),
            DatasetConfig::Bars {
                train,
                test,
                size,
                noise,
            } => data::bar_images(train + test, *size, *noise, &mut rng).split(*train),
            DatasetConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                classes,
            } => {
                for path in [train_images, train_labels, test_images, test_labels] {
                    if !path.exists() {
                        return Err(Error::Config(format!(
                            "dataset file not found: {}",
                            path.display()
                        )));
                    }
                }
                (
                    data::load_idx_dataset(train_images, train_labels, *classes)?,
                    data::load_idx_dataset(test_images, test_labels, *classes)?,
                )
            }
        })
    }
}

fn default_schedule() -> Vec<(String, f64, f64)> {
    vec![
        ("L4".into(), 0.05, 0.05),
        ("L3".into(), 0.1, 0.1),
        ("L2".into(), 0.2, 0.2),
        ("L1".into(), 0.4, 0.4),
    ]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda: f64,
    pub mu: f64,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        PhaseConfig {
            epochs: 60,
            batch_size: 32,
            lr: 1e-3,
            lambda: 1.0,
            mu: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequentialConfig {
    pub epochs_per_level: usize,
    pub lr: f64,
    pub freeze_mode: FreezeMode,
}

impl Default for SequentialConfig {
    fn default() -> Self {
        SequentialConfig {
            epochs_per_level: 30,
            lr: 0.01,
            freeze_mode: FreezeMode::FreezeCore,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdSection {
    pub enabled: bool,
    pub alpha_kl: f64,
    pub alpha_at: f64,
    pub temperature: f64,
    /// Matched feature-map pairs as activation indices (1 = output of the
    /// first layer); empty means the conv-ReLU defaults.
    pub pairs: Vec<usize>,
}

impl Default for KdSection {
    fn default() -> Self {
        let kd = KdConfig::default();
        KdSection {
            enabled: true,
            alpha_kl: kd.alpha_kl,
            alpha_at: kd.alpha_at,
            temperature: kd.temperature,
            pairs: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeConfig {
    pub frac_bits: u32,
    pub comparison: ComparisonMode,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            frac_bits: 16,
            comparison: ComparisonMode::SignBit,
        }
    }
}

fn default_device() -> DeviceProfile {
    DeviceProfile::default()
}

/// Whole-experiment description; every field has a spelled-out default and the
/// resolved state is emitted next to every artifact.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub dataset: DatasetConfig,
    #[serde(default = "default_schedule")]
    pub schedule: Vec<(String, f64, f64)>,
    #[serde(default)]
    pub teacher: PhaseConfig,
    #[serde(default)]
    pub soft: PhaseConfig,
    #[serde(default)]
    pub sequential: SequentialConfig,
    #[serde(default)]
    pub single: PhaseConfig,
    #[serde(default)]
    pub kd: KdSection,
    #[serde(default = "default_device")]
    pub device: DeviceProfile,
    #[serde(default)]
    pub runtime: RuntimeConfig,
}

impl ExperimentConfig {
    pub fn load<P: AsRef<Path>>(path: P) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Config(format!("cannot read config: {e}")))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        if let Ok(seed) = std::env::var("ADAPI_SEED") {
            cfg.seed = seed
                .parse()
                .map_err(|_| Error::Config(format!("ADAPI_SEED is not an integer: {seed}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.density_schedule()?;
        if self.runtime.frac_bits == 0 || self.runtime.frac_bits >= 62 {
            return Err(Error::Config(format!(
                "frac_bits {} outside sensible range",
                self.runtime.frac_bits
            )));
        }
        Ok(())
    }

    pub fn density_schedule(&self) -> Result<DensitySchedule> {
        DensitySchedule::new(
            self.schedule
                .iter()
                .map(|(label, dw, dr)| DensityLevel {
                    label: label.clone(),
                    weight_density: *dw,
                    relu_density: *dr,
                })
                .collect(),
        )
    }

    pub fn codec(&self) -> FixedPointCodec {
        FixedPointCodec::new(self.runtime.frac_bits)
    }

    pub fn kd_config(&self) -> Option<KdConfig> {
        self.kd.enabled.then_some(KdConfig {
            alpha_kl: self.kd.alpha_kl,
            alpha_at: self.kd.alpha_at,
            temperature: self.kd.temperature,
        })
    }

    pub fn teacher_train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.teacher.epochs,
            batch_size: self.teacher.batch_size,
            lambda: 0.0,
            mu: 0.0,
            adamw: AdamWConfig {
                lr: self.teacher.lr,
                ..Default::default()
            },
            sgd_lr: self.sequential.lr,
            kd: None,
            seed: self.seed,
        }
    }

    pub fn adaptive_train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.soft.epochs,
            batch_size: self.soft.batch_size,
            lambda: self.soft.lambda,
            mu: self.soft.mu,
            adamw: AdamWConfig {
                lr: self.soft.lr,
                ..Default::default()
            },
            sgd_lr: self.sequential.lr,
            kd: self.kd_config(),
            seed: self.seed,
        }
    }

    /// Write the fully resolved state next to the artifacts it produced.
    pub fn emit_resolved(&self, dir: &Path) -> Result<serde_json::Value> {
        std::fs::create_dir_all(dir)?;
        let value = serde_json::to_value(self)?;
        std::fs::write(
            dir.join("resolved_config.json"),
            serde_json::to_vec_pretty(&value)?,
        )?;
        Ok(value)
    }
}
