//! Soft masks, the threshold indicator, density-driven nested binary mask
//! families, and their container file.
//!
//! One soft mask per prunable tensor is thresholded at several densities.
//! Because every level cuts the same soft values, the resulting binary masks
//! nest: positions kept at a sparser level stay kept at every denser level.

use crate::error::{Error, Result};
use crate::nn::{MaskValues, Model, Tensor};
use crate::prg::fnv1a64;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Hard 0/1 mask over one tensor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    pub shape: Vec<usize>,
    pub bits: Vec<u8>,
}

impl BinaryMask {
    pub fn ones(shape: Vec<usize>) -> BinaryMask {
        let len = shape.iter().product();
        BinaryMask {
            shape,
            bits: vec![1u8; len],
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn ones_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    /// Realized fraction of kept positions.
    pub fn density(&self) -> f64 {
        self.ones_count() as f64 / self.len().max(1) as f64
    }

    pub fn to_values(&self) -> Tensor {
        Tensor::new(
            self.shape.clone(),
            self.bits.iter().map(|&b| b as f64).collect(),
        )
    }

    /// First index where `self` keeps a position that `denser` drops.
    pub fn first_nesting_violation(&self, denser: &BinaryMask) -> Option<usize> {
        self.bits
            .iter()
            .zip(&denser.bits)
            .position(|(&sparse, &dense)| sparse != 0 && dense == 0)
    }
}

/// Eq-style strict threshold step: bit = 1 iff `value > theta`.
pub fn indicator(soft: &Tensor, theta: f64) -> BinaryMask {
    BinaryMask {
        shape: soft.shape.clone(),
        bits: soft
            .data
            .iter()
            .map(|&m| if m > theta { 1 } else { 0 })
            .collect(),
    }
}

/// Stable descending order of flat indices: by value, lower index first among
/// ties, so selections are deterministic across runs and platforms.
fn ranked_indices(soft: &Tensor) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..soft.data.len()).collect();
    idx.sort_by(|&a, &b| soft.data[b].total_cmp(&soft.data[a]).then(a.cmp(&b)));
    idx
}

fn keep_count(len: usize, density: f64) -> usize {
    ((len as f64 * density).ceil() as usize).clamp(1, len)
}

/// Threshold realizing a target density: the `(1 - d)` quantile of the soft
/// values. With distinct values, `indicator` at this threshold keeps exactly
/// `ceil(d * size)` positions; boundary ties defer to the rank-based
/// selection used by [`mask_family`].
pub fn threshold_for_density(soft: &Tensor, density: f64) -> Result<f64> {
    if soft.is_empty() {
        return Err(Error::Config("threshold of an empty tensor".into()));
    }
    if !(0.0..=1.0).contains(&density) || density == 0.0 {
        return Err(Error::Config(format!("density {density} outside (0, 1]")));
    }
    let order = ranked_indices(soft);
    let k = keep_count(order.len(), density);
    if k == order.len() {
        let min = soft.data.iter().cloned().fold(f64::INFINITY, f64::min);
        return Ok(min - 1.0);
    }
    let last_kept = soft.data[order[k - 1]];
    let first_cut = soft.data[order[k]];
    Ok(if last_kept > first_cut {
        0.5 * (last_kept + first_cut)
    } else {
        first_cut
    })
}

/// Top-`ceil(d * size)` selection with the stable index tie-break. This is the
/// authoritative realization used when families must hit the density exactly.
pub fn rank_select(soft: &Tensor, density: f64) -> Result<BinaryMask> {
    if soft.is_empty() {
        return Err(Error::Config("selection from an empty tensor".into()));
    }
    if !(0.0..=1.0).contains(&density) || density == 0.0 {
        return Err(Error::Config(format!("density {density} outside (0, 1]")));
    }
    let order = ranked_indices(soft);
    let k = keep_count(order.len(), density);
    let mut bits = vec![0u8; order.len()];
    for &i in order.iter().take(k) {
        bits[i] = 1;
    }
    Ok(BinaryMask {
        shape: soft.shape.clone(),
        bits,
    })
}

/// One named density level: a weight density and a ReLU density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityLevel {
    pub label: String,
    pub weight_density: f64,
    pub relu_density: f64,
}

/// Ordered density levels, ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensitySchedule {
    pub levels: Vec<DensityLevel>,
}

impl DensitySchedule {
    pub fn new(levels: Vec<DensityLevel>) -> Result<DensitySchedule> {
        if levels.is_empty() {
            return Err(Error::Config("empty density schedule".into()));
        }
        for level in &levels {
            for d in [level.weight_density, level.relu_density] {
                if !(d > 0.0 && d <= 1.0) {
                    return Err(Error::Config(format!(
                        "density {d} of level {} outside (0, 1]",
                        level.label
                    )));
                }
            }
        }
        for pair in levels.windows(2) {
            if pair[1].weight_density <= pair[0].weight_density
                || pair[1].relu_density <= pair[0].relu_density
            {
                return Err(Error::Config(
                    "schedule densities must strictly ascend".into(),
                ));
            }
        }
        Ok(DensitySchedule { levels })
    }

    /// The four reference levels: L4 (0.05) up to L1 (0.4).
    pub fn reference_levels() -> DensitySchedule {
        DensitySchedule::new(
            [("L4", 0.05), ("L3", 0.1), ("L2", 0.2), ("L1", 0.4)]
                .into_iter()
                .map(|(label, d)| DensityLevel {
                    label: label.into(),
                    weight_density: d,
                    relu_density: d,
                })
                .collect(),
        )
        .unwrap()
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.levels.iter().position(|l| l.label == label)
    }
}

/// Binary masks of one level, aligned with a model's weight and ReLU layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelMasks {
    pub label: String,
    pub weight: Vec<BinaryMask>,
    pub feature: Vec<BinaryMask>,
}

impl LevelMasks {
    pub fn to_mask_values(&self) -> MaskValues {
        MaskValues {
            weight: self.weight.iter().map(|m| m.to_values()).collect(),
            feature: self.feature.iter().map(|m| m.to_values()).collect(),
        }
    }
}

/// The deployable family: one level of binary masks per schedule entry,
/// ascending density, nested by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskFamily {
    pub schedule: DensitySchedule,
    pub levels: Vec<LevelMasks>,
}

/// Threshold one soft mask per tensor at every scheduled density.
pub fn mask_family(
    soft_weight: &[Tensor],
    soft_feature: &[Tensor],
    schedule: &DensitySchedule,
) -> Result<MaskFamily> {
    let mut levels = Vec::with_capacity(schedule.len());
    for level in &schedule.levels {
        let weight = soft_weight
            .iter()
            .map(|t| rank_select(t, level.weight_density))
            .collect::<Result<Vec<_>>>()?;
        let feature = soft_feature
            .iter()
            .map(|t| rank_select(t, level.relu_density))
            .collect::<Result<Vec<_>>>()?;
        levels.push(LevelMasks {
            label: level.label.clone(),
            weight,
            feature,
        });
    }
    let family = MaskFamily {
        schedule: schedule.clone(),
        levels,
    };
    family.check_nesting()?;
    Ok(family)
}

impl MaskFamily {
    pub fn level(&self, label: &str) -> Option<&LevelMasks> {
        self.levels.iter().find(|l| l.label == label)
    }

    /// Every kept position of a sparser level must be kept at each denser one.
    pub fn check_nesting(&self) -> Result<()> {
        for li in 0..self.levels.len().saturating_sub(1) {
            let sparse = &self.levels[li];
            let dense = &self.levels[li + 1];
            for (ti, (s, d)) in sparse.weight.iter().zip(&dense.weight).enumerate() {
                if let Some(index) = s.first_nesting_violation(d) {
                    return Err(Error::NestingViolation {
                        level: li,
                        tensor: ti,
                        index,
                    });
                }
            }
            for (ti, (s, d)) in sparse.feature.iter().zip(&dense.feature).enumerate() {
                if let Some(index) = s.first_nesting_violation(d) {
                    return Err(Error::NestingViolation {
                        level: li,
                        tensor: sparse.weight.len() + ti,
                        index,
                    });
                }
            }
        }
        Ok(())
    }

    /// Check the masks line up with a model's weight and feature shapes.
    pub fn validate_for(&self, model: &Model) -> Result<()> {
        let weight_shapes: Vec<Vec<usize>> = model
            .weight_layers()
            .iter()
            .map(|&l| model.layers[l].weight().unwrap().shape.clone())
            .collect();
        let feature_shapes = model.feature_shapes();
        for level in &self.levels {
            for (m, expect) in level.weight.iter().zip(&weight_shapes) {
                if &m.shape != expect {
                    return Err(Error::ShapeMismatch {
                        expected: expect.clone(),
                        got: m.shape.clone(),
                    });
                }
            }
            if level.weight.len() != weight_shapes.len()
                || level.feature.len() != feature_shapes.len()
            {
                return Err(Error::Config("mask family arity mismatch".into()));
            }
            for (m, expect) in level.feature.iter().zip(&feature_shapes) {
                if &m.shape != expect {
                    return Err(Error::ShapeMismatch {
                        expected: expect.clone(),
                        got: m.shape.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// container file: JSON header + bit-packed payload, per-level checksums
// ---------------------------------------------------------------------------

fn pack_bits(bits: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b != 0 {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_bits(packed: &[u8], len: usize) -> Vec<u8> {
    (0..len)
        .map(|i| (packed[i / 8] >> (i % 8)) & 1)
        .collect()
}

#[derive(Serialize, Deserialize)]
struct MaskFileHeader {
    schedule: DensitySchedule,
    weight_shapes: Vec<Vec<usize>>,
    feature_shapes: Vec<Vec<usize>>,
    /// fnv1a64 digest of each level's packed payload, ascending level order.
    level_checksums: Vec<u64>,
    realized_densities: Vec<(f64, f64)>,
}

impl MaskFamily {
    fn level_payload(level: &LevelMasks) -> Vec<u8> {
        let mut out = Vec::new();
        for m in level.weight.iter().chain(level.feature.iter()) {
            out.extend_from_slice(&pack_bits(&m.bits));
        }
        out
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let weight_shapes: Vec<Vec<usize>> = self.levels[0]
            .weight
            .iter()
            .map(|m| m.shape.clone())
            .collect();
        let feature_shapes: Vec<Vec<usize>> = self.levels[0]
            .feature
            .iter()
            .map(|m| m.shape.clone())
            .collect();
        let payloads: Vec<Vec<u8>> = self.levels.iter().map(Self::level_payload).collect();
        let header = MaskFileHeader {
            schedule: self.schedule.clone(),
            weight_shapes,
            feature_shapes,
            level_checksums: payloads.iter().map(|p| fnv1a64(p)).collect(),
            realized_densities: self
                .levels
                .iter()
                .map(|l| {
                    let wd = l.weight.iter().map(|m| m.ones_count()).sum::<usize>() as f64
                        / l.weight.iter().map(|m| m.len()).sum::<usize>().max(1) as f64;
                    let rd = l.feature.iter().map(|m| m.ones_count()).sum::<usize>() as f64
                        / l.feature.iter().map(|m| m.len()).sum::<usize>().max(1) as f64;
                    (wd, rd)
                })
                .collect(),
        };
        let header_bytes = serde_json::to_vec(&header)?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
        f.write_all(&header_bytes)?;
        for p in payloads {
            f.write_all(&p)?;
        }
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<MaskFamily> {
        let mut f = std::fs::File::open(path)?;
        let mut len_bytes = [0u8; 4];
        f.read_exact(&mut len_bytes)?;
        let mut header_bytes = vec![0u8; u32::from_le_bytes(len_bytes) as usize];
        f.read_exact(&mut header_bytes)?;
        let header: MaskFileHeader = serde_json::from_slice(&header_bytes)?;

        let shapes: Vec<Vec<usize>> = header
            .weight_shapes
            .iter()
            .chain(header.feature_shapes.iter())
            .cloned()
            .collect();
        let level_bytes: usize = shapes
            .iter()
            .map(|s| s.iter().product::<usize>().div_ceil(8))
            .sum();
        let mut levels = Vec::with_capacity(header.schedule.len());
        for (li, level) in header.schedule.levels.iter().enumerate() {
            let mut payload = vec![0u8; level_bytes];
            f.read_exact(&mut payload)?;
            if fnv1a64(&payload) != header.level_checksums[li] {
                return Err(Error::ChecksumMismatch(format!(
                    "mask level {}",
                    level.label
                )));
            }
            let mut offset = 0usize;
            let mut take = |shape: &Vec<usize>| {
                let len: usize = shape.iter().product();
                let packed = &payload[offset..offset + len.div_ceil(8)];
                offset += len.div_ceil(8);
                BinaryMask {
                    shape: shape.clone(),
                    bits: unpack_bits(packed, len),
                }
            };
            let weight: Vec<BinaryMask> = header.weight_shapes.iter().map(&mut take).collect();
            let feature: Vec<BinaryMask> = header.feature_shapes.iter().map(&mut take).collect();
            levels.push(LevelMasks {
                label: level.label.clone(),
                weight,
                feature,
            });
        }
        Ok(MaskFamily {
            schedule: header.schedule,
            levels,
        })
    }
}
