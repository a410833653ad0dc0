//! Synthetic datasets and the IDX image container.

use super::tensor::Tensor;
use super::{MaskValues, Model};
use crate::error::{Error, Result};
use rand::Rng;
use std::io::{Read, Write};
use std::path::Path;

#[derive(Clone, Debug)]
pub struct Dataset {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn split(mut self, first: usize) -> (Dataset, Dataset) {
        let rest_x = self.inputs.split_off(first);
        let rest_y = self.labels.split_off(first);
        (
            Dataset {
                inputs: self.inputs,
                labels: self.labels,
                classes: self.classes,
            },
            Dataset {
                inputs: rest_x,
                labels: rest_y,
                classes: self.classes,
            },
        )
    }
}

/// Fraction of correct masked predictions over a dataset.
pub fn accuracy(model: &Model, data: &Dataset, masks: Option<&MaskValues>) -> f64 {
    let mut hits = 0usize;
    for (x, &y) in data.inputs.iter().zip(&data.labels) {
        if model.predict(x, masks).map(|p| p == y).unwrap_or(false) {
            hits += 1;
        }
    }
    hits as f64 / data.len().max(1) as f64
}

/// Two interleaved half-circles with Gaussian jitter; inputs have shape [2].
pub fn two_moons<R: Rng>(n: usize, noise: f64, rng: &mut R) -> Dataset {
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let t = rng.gen::<f64>() * std::f64::consts::PI;
        let (mut x, mut y, label) = if i % 2 == 0 {
            (t.cos(), t.sin(), 0)
        } else {
            (1.0 - t.cos(), 0.5 - t.sin(), 1)
        };
        x += gaussian(rng) * noise;
        y += gaussian(rng) * noise;
        inputs.push(Tensor::new(vec![2], vec![x, y]));
        labels.push(label);
    }
    Dataset {
        inputs,
        labels,
        classes: 2,
    }
}

/// Isotropic Gaussian clusters centered on a circle of radius 2.
pub fn gaussian_blobs<R: Rng>(n: usize, classes: usize, std: f64, rng: &mut R) -> Dataset {
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
        inputs.push(Tensor::new(
            vec![2],
            vec![
                2.0 * angle.cos() + gaussian(rng) * std,
                2.0 * angle.sin() + gaussian(rng) * std,
            ],
        ));
        labels.push(c);
    }
    Dataset {
        inputs,
        labels,
        classes,
    }
}

/// Four-class grayscale pattern set (horizontal bar, vertical bar, cross,
/// diagonal), one channel, `size x size`, with positional jitter and noise.
pub fn bar_images<R: Rng>(n: usize, size: usize, noise: f64, rng: &mut R) -> Dataset {
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 4;
        let mut img = vec![0.0f64; size * size];
        let pos = rng.gen_range(1..size - 1);
        let pos2 = rng.gen_range(1..size - 1);
        match class {
            0 => {
                for j in 0..size {
                    img[pos * size + j] = 1.0;
                }
            }
            1 => {
                for j in 0..size {
                    img[j * size + pos] = 1.0;
                }
            }
            2 => {
                for j in 0..size {
                    img[pos * size + j] = 1.0;
                    img[j * size + pos2] = 1.0;
                }
            }
            _ => {
                for j in 0..size {
                    img[j * size + j] = 1.0;
                }
            }
        }
        for p in img.iter_mut() {
            *p = (*p + gaussian(rng) * noise).clamp(0.0, 1.0);
        }
        inputs.push(Tensor::new(vec![1, size, size], img));
        labels.push(class);
    }
    Dataset {
        inputs,
        labels,
        classes: 4,
    }
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-12);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

// ---------------------------------------------------------------------------
// IDX container (big-endian dims, u8 payload)
// ---------------------------------------------------------------------------

const IDX_U8: u8 = 0x08;

/// Write single-channel images as an IDX tensor file; values are clamped to
/// [0,1] and quantized to u8.
pub fn write_idx_images<P: AsRef<Path>>(path: P, images: &[Tensor]) -> Result<()> {
    let first = images
        .first()
        .ok_or_else(|| Error::Config("no images to write".into()))?;
    if first.shape.len() != 3 || first.shape[0] != 1 {
        return Err(Error::Config("idx writer expects [1,H,W] images".into()));
    }
    let (h, w) = (first.shape[1], first.shape[2]);
    let mut f = std::fs::File::create(path)?;
    f.write_all(&[0, 0, IDX_U8, 3])?;
    for dim in [images.len() as u32, h as u32, w as u32] {
        f.write_all(&dim.to_be_bytes())?;
    }
    let mut buf = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.shape != first.shape {
            return Err(Error::ShapeMismatch {
                expected: first.shape.clone(),
                got: img.shape.clone(),
            });
        }
        buf.extend(
            img.data
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
    }
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_idx_images<P: AsRef<Path>>(path: P) -> Result<Vec<Tensor>> {
    let mut f = std::fs::File::open(path)?;
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if magic != [0, 0, IDX_U8, 3] {
        return Err(Error::Config(format!("bad idx image magic {magic:?}")));
    }
    let mut dim = [0u8; 4];
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        f.read_exact(&mut dim)?;
        *d = u32::from_be_bytes(dim) as usize;
    }
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    let mut payload = vec![0u8; n * h * w];
    f.read_exact(&mut payload)?;
    Ok(payload
        .chunks_exact(h * w)
        .map(|c| {
            Tensor::new(
                vec![1, h, w],
                c.iter().map(|&b| b as f64 / 255.0).collect(),
            )
        })
        .collect())
}

pub fn write_idx_labels<P: AsRef<Path>>(path: P, labels: &[usize]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&[0, 0, IDX_U8, 1])?;
    f.write_all(&(labels.len() as u32).to_be_bytes())?;
    f.write_all(&labels.iter().map(|&l| l as u8).collect::<Vec<_>>())?;
    Ok(())
}

pub fn read_idx_labels<P: AsRef<Path>>(path: P) -> Result<Vec<usize>> {
    let mut f = std::fs::File::open(path)?;
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if magic != [0, 0, IDX_U8, 1] {
        return Err(Error::Config(format!("bad idx label magic {magic:?}")));
    }
    let mut dim = [0u8; 4];
    f.read_exact(&mut dim)?;
    let n = u32::from_be_bytes(dim) as usize;
    let mut payload = vec![0u8; n];
    f.read_exact(&mut payload)?;
    Ok(payload.into_iter().map(|b| b as usize).collect())
}

/// Load an image dataset from a pair of IDX files.
pub fn load_idx_dataset<P: AsRef<Path>>(images: P, labels: P, classes: usize) -> Result<Dataset> {
    let inputs = read_idx_images(images)?;
    let labels = read_idx_labels(labels)?;
    if inputs.len() != labels.len() {
        return Err(Error::Config(format!(
            "idx pair length mismatch: {} images vs {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    Ok(Dataset {
        inputs,
        labels,
        classes,
    })
}
