//! The deployable artifact: one weight set plus a nested mask family.
//!
//! Stored as a directory: `manifest.json` (codec, seed, metrics, provenance),
//! `weights.ckpt`, `masks.bin`, and `metrics.csv`.

use crate::error::{Error, Result};
use crate::masks::MaskFamily;
use crate::nn::{MaskValues, Model};
use crate::ring::FixedPointCodec;
use crate::train::LevelMetrics;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub model: Model,
    pub family: MaskFamily,
    pub codec: FixedPointCodec,
    pub seed: u64,
    pub metrics: Vec<LevelMetrics>,
    /// Resolved configuration the bundle was produced from.
    pub resolved_config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    architecture_digest: u64,
    codec: FixedPointCodec,
    seed: u64,
    metrics: Vec<LevelMetrics>,
    resolved_config: serde_json::Value,
    weights_file: String,
    masks_file: String,
}

impl ModelBundle {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.family.check_nesting()?;
        self.family.validate_for(&self.model)?;
        for level in &self.family.schedule.levels {
            if !self.metrics.iter().any(|m| m.label == level.label) {
                return Err(Error::Config(format!(
                    "bundle metrics missing level {}",
                    level.label
                )));
            }
        }
        Ok(())
    }

    pub fn level_labels(&self) -> Vec<String> {
        self.family
            .schedule
            .levels
            .iter()
            .map(|l| l.label.clone())
            .collect()
    }

    pub fn mask_values(&self, label: &str) -> Result<MaskValues> {
        self.family
            .level(label)
            .map(|l| l.to_mask_values())
            .ok_or_else(|| Error::Config(format!("unknown density level {label}")))
    }

    pub fn save_dir<P: AsRef<Path>>(&self, dir: P) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.model.save(dir.join("weights.ckpt"))?;
        self.family.save(dir.join("masks.bin"))?;
        let manifest = Manifest {
            architecture_digest: self.model.architecture_digest(),
            codec: self.codec,
            seed: self.seed,
            metrics: self.metrics.clone(),
            resolved_config: self.resolved_config.clone(),
            weights_file: "weights.ckpt".into(),
            masks_file: "masks.bin".into(),
        };
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_vec_pretty(&manifest)?,
        )?;
        let mut csv = String::from("label,weight_density,relu_density,train_accuracy,test_accuracy\n");
        for m in &self.metrics {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                m.label, m.weight_density, m.relu_density, m.train_accuracy, m.test_accuracy
            ));
        }
        std::fs::write(dir.join("metrics.csv"), csv)?;
        Ok(())
    }

    pub fn load_dir<P: AsRef<Path>>(dir: P) -> Result<ModelBundle> {
        let dir = dir.as_ref();
        let manifest: Manifest =
            serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
        let model = Model::load(dir.join(&manifest.weights_file))?;
        if model.architecture_digest() != manifest.architecture_digest {
            return Err(Error::ChecksumMismatch("bundle architecture digest".into()));
        }
        let family = MaskFamily::load(dir.join(&manifest.masks_file))?;
        let bundle = ModelBundle {
            model,
            family,
            codec: manifest.codec,
            seed: manifest.seed,
            metrics: manifest.metrics,
            resolved_config: manifest.resolved_config,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::{mask_family, DensitySchedule};
    use crate::prg::session_rng;
    use crate::train::SoftMasks;
    use rand::Rng;

    fn demo_bundle() -> ModelBundle {
        let mut rng = session_rng(5, 0, "bundle-test");
        let model = crate::nn::mlp(2, &[6], 2, &mut rng);
        let mut soft = SoftMasks::init(&model, &mut rng);
        for t in soft.weight.iter_mut().chain(soft.feature.iter_mut()) {
            for v in t.data.iter_mut() {
                *v += rng.gen::<f64>() * 0.1;
            }
        }
        let schedule = DensitySchedule::reference_levels();
        let family = mask_family(&soft.weight, &soft.feature, &schedule).unwrap();
        let metrics = schedule
            .levels
            .iter()
            .map(|l| LevelMetrics {
                label: l.label.clone(),
                weight_density: l.weight_density,
                relu_density: l.relu_density,
                train_accuracy: 0.9,
                test_accuracy: 0.85,
            })
            .collect();
        ModelBundle {
            model,
            family,
            codec: FixedPointCodec::default(),
            seed: 5,
            metrics,
            resolved_config: serde_json::json!({"demo": true}),
        }
    }

    #[test]
    fn bundle_round_trip() {
        let bundle = demo_bundle();
        bundle.validate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        bundle.save_dir(dir.path()).unwrap();
        let loaded = ModelBundle::load_dir(dir.path()).unwrap();
        assert_eq!(loaded.model.payload(), bundle.model.payload());
        assert_eq!(loaded.family, bundle.family);
        assert_eq!(loaded.seed, 5);
        assert_eq!(loaded.metrics.len(), 4);
    }

    #[test]
    fn save_is_deterministic() {
        let bundle = demo_bundle();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        bundle.save_dir(d1.path()).unwrap();
        bundle.save_dir(d2.path()).unwrap();
        for name in ["manifest.json", "weights.ckpt", "masks.bin", "metrics.csv"] {
            let a = std::fs::read(d1.path().join(name)).unwrap();
            let b = std::fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical saves");
        }
    }

    #[test]
    fn unknown_level_is_a_config_error() {
        let bundle = demo_bundle();
        assert!(bundle.mask_values("L9").is_err());
        assert!(bundle.mask_values("L4").is_ok());
    }
}
