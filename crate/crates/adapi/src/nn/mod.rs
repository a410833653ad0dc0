//! Plaintext layers, masked forward/backward passes, loss, and model I/O.
//!
//! The masked forward pass follows two rules: linear layers use `W (*) M_w`
//! in place of `W`, and each ReLU computes
//! `relu(z) (*) M_r + z (*) (1 - M_r)` so that masked-out positions pass
//! through linearly. Absent masks mean all-ones.

pub mod data;
pub mod optim;
pub mod tensor;

use crate::error::{Error, Result};
use crate::prg::fnv1a64;
use crate::ring::ConvGeometry;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub use tensor::Tensor;

#[derive(Clone, Debug)]
pub enum Layer {
    Conv2d {
        geom: ConvGeometry,
        weight: Tensor,
        bias: Tensor,
    },
    FullyConnected {
        weight: Tensor,
        bias: Tensor,
    },
    Relu,
    AvgPool {
        k: usize,
    },
    Flatten,
}

/// Architecture-only view of a layer, used for checkpoints and digests.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpecDef {
    Conv2d { geom: ConvGeometry },
    FullyConnected { inputs: usize, outputs: usize },
    Relu,
    AvgPool { k: usize },
    Flatten,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d { .. } => "conv2d",
            Layer::FullyConnected { .. } => "fully_connected",
            Layer::Relu => "relu",
            Layer::AvgPool { .. } => "avgpool",
            Layer::Flatten => "flatten",
        }
    }

    pub fn spec_def(&self) -> LayerSpecDef {
        match self {
            Layer::Conv2d { geom, .. } => LayerSpecDef::Conv2d { geom: *geom },
            Layer::FullyConnected { weight, .. } => LayerSpecDef::FullyConnected {
                inputs: weight.shape[1],
                outputs: weight.shape[0],
            },
            Layer::Relu => LayerSpecDef::Relu,
            Layer::AvgPool { k } => LayerSpecDef::AvgPool { k: *k },
            Layer::Flatten => LayerSpecDef::Flatten,
        }
    }

    pub fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv2d { geom, .. } => {
                if in_shape != geom.input_shape().as_slice() {
                    return Err(Error::Config(format!(
                        "conv2d expects {:?}, got {in_shape:?}",
                        geom.input_shape()
                    )));
                }
                Ok(geom.output_shape())
            }
            Layer::FullyConnected { weight, .. } => {
                if in_shape != [weight.shape[1]] {
                    return Err(Error::Config(format!(
                        "fully-connected expects [{}], got {in_shape:?}",
                        weight.shape[1]
                    )));
                }
                Ok(vec![weight.shape[0]])
            }
            Layer::Relu => Ok(in_shape.to_vec()),
            Layer::AvgPool { k } => {
                if in_shape.len() != 3 || !in_shape[1].is_multiple_of(*k) || !in_shape[2].is_multiple_of(*k) {
                    return Err(Error::Config(format!(
                        "avgpool({k}) needs [C,H,W] divisible by {k}, got {in_shape:?}"
                    )));
                }
                Ok(vec![in_shape[0], in_shape[1] / k, in_shape[2] / k])
            }
            Layer::Flatten => Ok(vec![in_shape.iter().product()]),
        }
    }

    pub fn weight(&self) -> Option<&Tensor> {
        match self {
            Layer::Conv2d { weight, .. } | Layer::FullyConnected { weight, .. } => Some(weight),
            _ => None,
        }
    }

    pub fn weight_mut(&mut self) -> Option<&mut Tensor> {
        match self {
            Layer::Conv2d { weight, .. } | Layer::FullyConnected { weight, .. } => Some(weight),
            _ => None,
        }
    }

    pub fn bias(&self) -> Option<&Tensor> {
        match self {
            Layer::Conv2d { bias, .. } | Layer::FullyConnected { bias, .. } => Some(bias),
            _ => None,
        }
    }

    pub fn bias_mut(&mut self) -> Option<&mut Tensor> {
        match self {
            Layer::Conv2d { bias, .. } | Layer::FullyConnected { bias, .. } => Some(bias),
            _ => None,
        }
    }
}

/// Mask values aligned with a model: one tensor per weight layer and one per
/// ReLU layer. Values are bits when realized from a threshold, arbitrary
/// positive reals in the relaxed training mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskValues {
    pub weight: Vec<Tensor>,
    pub feature: Vec<Tensor>,
}

impl MaskValues {
    pub fn all_ones(model: &Model) -> MaskValues {
        MaskValues {
            weight: model
                .weight_layers()
                .iter()
                .map(|&l| Tensor::ones(model.layers[l].weight().unwrap().shape.clone()))
                .collect(),
            feature: model
                .feature_shapes()
                .into_iter()
                .map(Tensor::ones)
                .collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub input_shape: Vec<usize>,
    pub classes: usize,
    pub layers: Vec<Layer>,
}

/// Per-layer activations of one forward pass; `activations[0]` is the input,
/// the last entry the logits.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub activations: Vec<Tensor>,
}

impl ForwardCache {
    pub fn logits(&self) -> &Tensor {
        self.activations.last().unwrap()
    }
}

/// Gradients of one backward pass, aligned with the model's weight and ReLU
/// layers. Mask gradients are with respect to the mask *values* used forward.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub weight: Vec<Tensor>,
    pub bias: Vec<Tensor>,
    pub weight_mask: Vec<Tensor>,
    pub feature_mask: Vec<Tensor>,
    pub input: Tensor,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Gradients {
        Gradients {
            weight: model
                .weight_layers()
                .iter()
                .map(|&l| Tensor::zeros(model.layers[l].weight().unwrap().shape.clone()))
                .collect(),
            bias: model
                .weight_layers()
                .iter()
                .map(|&l| Tensor::zeros(model.layers[l].bias().unwrap().shape.clone()))
                .collect(),
            weight_mask: model
                .weight_layers()
                .iter()
                .map(|&l| Tensor::zeros(model.layers[l].weight().unwrap().shape.clone()))
                .collect(),
            feature_mask: model
                .feature_shapes()
                .into_iter()
                .map(Tensor::zeros)
                .collect(),
            input: Tensor::zeros(model.input_shape.clone()),
        }
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            a.add_assign(b);
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            a.add_assign(b);
        }
        for (a, b) in self.weight_mask.iter_mut().zip(&other.weight_mask) {
            a.add_assign(b);
        }
        for (a, b) in self.feature_mask.iter_mut().zip(&other.feature_mask) {
            a.add_assign(b);
        }
        self.input.add_assign(&other.input);
    }

    pub fn scale(&mut self, c: f64) {
        for t in self
            .weight
            .iter_mut()
            .chain(self.bias.iter_mut())
            .chain(self.weight_mask.iter_mut())
            .chain(self.feature_mask.iter_mut())
        {
            t.scale_assign(c);
        }
        self.input.scale_assign(c);
    }
}

impl Model {
    /// Indices of layers carrying prunable weights, in layer order.
    pub fn weight_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.weight().is_some())
            .map(|(i, _)| i)
            .collect()
    }

    /// Indices of ReLU layers, in layer order.
    pub fn relu_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Relu))
            .map(|(i, _)| i)
            .collect()
    }

    /// Input shape of every layer plus the final output shape.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.clone()];
        for layer in &self.layers {
            let next = layer.out_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Shapes of the pre-activation tensors feeding each ReLU layer.
    pub fn feature_shapes(&self) -> Vec<Vec<usize>> {
        let shapes = self.layer_shapes().expect("validated model");
        self.relu_layers()
            .into_iter()
            .map(|l| shapes[l].clone())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = self.layer_shapes()?;
        let out = shapes.last().unwrap();
        if out != &[self.classes] {
            return Err(Error::Config(format!(
                "model output {out:?} does not match {} classes",
                self.classes
            )));
        }
        Ok(())
    }

    pub fn spec_defs(&self) -> Vec<LayerSpecDef> {
        self.layers.iter().map(|l| l.spec_def()).collect()
    }

    /// Digest of the architecture (not the weights); both inference parties
    /// agree on it before any layer runs.
    pub fn architecture_digest(&self) -> u64 {
        let header = serde_json::json!({
            "input_shape": self.input_shape,
            "classes": self.classes,
            "layers": self.spec_defs(),
        });
        fnv1a64(header.to_string().as_bytes())
    }

    /// Masked forward pass; `masks` of `None` means all-ones everywhere.
    pub fn forward(&self, input: &Tensor, masks: Option<&MaskValues>) -> Result<ForwardCache> {
        if input.shape != self.input_shape {
            return Err(Error::ShapeMismatch {
                expected: self.input_shape.clone(),
                got: input.shape.clone(),
            });
        }
        let mut activations = vec![input.clone()];
        let mut weight_idx = 0usize;
        let mut relu_idx = 0usize;
        for layer in &self.layers {
            let x = activations.last().unwrap();
            let out = match layer {
                Layer::Conv2d { geom, weight, bias } => {
                    let w = match masks {
                        Some(m) => weight.mul(&m.weight[weight_idx]),
                        None => weight.clone(),
                    };
                    weight_idx += 1;
                    conv2d_forward(x, &w, bias, geom)
                }
                Layer::FullyConnected { weight, bias } => {
                    let w = match masks {
                        Some(m) => weight.mul(&m.weight[weight_idx]),
                        None => weight.clone(),
                    };
                    weight_idx += 1;
                    fc_forward(x, &w, bias)
                }
                Layer::Relu => {
                    let out = match masks {
                        Some(m) => masked_relu_forward(x, &m.feature[relu_idx]),
                        None => x.map(|z| if z > 0.0 { z } else { 0.0 }),
                    };
                    relu_idx += 1;
                    out
                }
                Layer::AvgPool { k } => avgpool_forward(x, *k),
                Layer::Flatten => x.reshaped(vec![x.len()]),
            };
            activations.push(out);
        }
        Ok(ForwardCache { activations })
    }

    /// Backward pass through the masked graph. Weight gradients come
    /// pre-multiplied by the weight mask (pruned positions receive zero
    /// update); mask gradients are with respect to the raw mask values.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        dlogits: &Tensor,
        masks: Option<&MaskValues>,
    ) -> Result<Gradients> {
        self.backward_with_injections(cache, dlogits, masks, &Default::default())
    }

    /// Backward pass that additionally injects gradients at intermediate
    /// activations (keyed by activation index, 1 = output of layer 0), as
    /// auxiliary losses on feature maps require.
    pub fn backward_with_injections(
        &self,
        cache: &ForwardCache,
        dlogits: &Tensor,
        masks: Option<&MaskValues>,
        injections: &std::collections::BTreeMap<usize, Tensor>,
    ) -> Result<Gradients> {
        if cache.activations.len() != self.layers.len() + 1 {
            return Err(Error::Training("stale forward cache".into()));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut g = dlogits.clone();
        let mut weight_idx = self.weight_layers().len();
        let mut relu_idx = self.relu_layers().len();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            if let Some(extra) = injections.get(&(l + 1)) {
                g.add_assign(extra);
            }
            let x = &cache.activations[l];
            g = match layer {
                Layer::Conv2d { geom, weight, .. } => {
                    weight_idx -= 1;
                    let mask = masks.map(|m| &m.weight[weight_idx]);
                    let (dw_eff, dx) = conv2d_backward(x, weight, mask, &g, geom);
                    let (oh, ow) = (geom.out_h(), geom.out_w());
                    for oc in 0..geom.out_channels {
                        let mut s = 0.0;
                        for i in 0..oh * ow {
                            s += g.data[oc * oh * ow + i];
                        }
                        grads.bias[weight_idx].data[oc] += s;
                    }
                    split_effective_weight_grad(
                        &dw_eff,
                        weight,
                        mask,
                        &mut grads.weight[weight_idx],
                        &mut grads.weight_mask[weight_idx],
                    );
                    dx
                }
                Layer::FullyConnected { weight, .. } => {
                    weight_idx -= 1;
                    let mask = masks.map(|m| &m.weight[weight_idx]);
                    let (out_dim, in_dim) = (weight.shape[0], weight.shape[1]);
                    let mut dw_eff = Tensor::zeros(weight.shape.clone());
                    for o in 0..out_dim {
                        for i in 0..in_dim {
                            dw_eff.data[o * in_dim + i] = g.data[o] * x.data[i];
                        }
                        grads.bias[weight_idx].data[o] += g.data[o];
                    }
                    split_effective_weight_grad(
                        &dw_eff,
                        weight,
                        mask,
                        &mut grads.weight[weight_idx],
                        &mut grads.weight_mask[weight_idx],
                    );
                    let mut dx = Tensor::zeros(vec![in_dim]);
                    for o in 0..out_dim {
                        for i in 0..in_dim {
                            let idx = o * in_dim + i;
                            let m = mask.map_or(1.0, |mm| mm.data[idx]);
                            dx.data[i] += weight.data[idx] * m * g.data[o];
                        }
                    }
                    dx
                }
                Layer::Relu => {
                    relu_idx -= 1;
                    let z = x;
                    let mut dz = Tensor::zeros(z.shape.clone());
                    match masks {
                        Some(m) => {
                            let mv = &m.feature[relu_idx];
                            for i in 0..z.len() {
                                let step = if z.data[i] > 0.0 { 1.0 } else { 0.0 };
                                // d/dm [relu(z) m + z (1-m)] = relu(z) - z
                                grads.feature_mask[relu_idx].data[i] +=
                                    g.data[i] * (z.data[i].max(0.0) - z.data[i]);
                                dz.data[i] =
                                    g.data[i] * (mv.data[i] * step + 1.0 - mv.data[i]);
                            }
                        }
                        None => {
                            for i in 0..z.len() {
                                dz.data[i] = if z.data[i] > 0.0 { g.data[i] } else { 0.0 };
                            }
                        }
                    }
                    dz
                }
                Layer::AvgPool { k } => {
                    let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
                    let (ph, pw) = (h / k, w / k);
                    let inv = 1.0 / ((k * k) as f64);
                    let mut dx = Tensor::zeros(x.shape.clone());
                    for ci in 0..c {
                        for i in 0..h {
                            for j in 0..w {
                                dx.data[(ci * h + i) * w + j] =
                                    g.data[(ci * ph + i / k) * pw + j / k] * inv;
                            }
                        }
                    }
                    dx
                }
                Layer::Flatten => g.reshaped(x.shape.clone()),
            };
        }
        grads.input = g;
        Ok(grads)
    }

    pub fn predict(&self, input: &Tensor, masks: Option<&MaskValues>) -> Result<usize> {
        Ok(self.forward(input, masks)?.logits().argmax())
    }

    pub fn parameter_count(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| {
                l.weight().map_or(0, |w| w.len() as u64) + l.bias().map_or(0, |b| b.len() as u64)
            })
            .sum()
    }
}

fn split_effective_weight_grad(
    dw_eff: &Tensor,
    weight: &Tensor,
    mask: Option<&Tensor>,
    grad_w: &mut Tensor,
    grad_mask: &mut Tensor,
) {
    match mask {
        Some(m) => {
            for i in 0..dw_eff.len() {
                grad_w.data[i] += dw_eff.data[i] * m.data[i];
                grad_mask.data[i] += dw_eff.data[i] * weight.data[i];
            }
        }
        None => {
            for i in 0..dw_eff.len() {
                grad_w.data[i] += dw_eff.data[i];
            }
        }
    }
}

fn fc_forward(x: &Tensor, w: &Tensor, bias: &Tensor) -> Tensor {
    let (out_dim, in_dim) = (w.shape[0], w.shape[1]);
    let mut y = Tensor::zeros(vec![out_dim]);
    for o in 0..out_dim {
        let mut acc = bias.data[o];
        for i in 0..in_dim {
            acc += w.data[o * in_dim + i] * x.data[i];
        }
        y.data[o] = acc;
    }
    y
}

fn conv2d_forward(x: &Tensor, w: &Tensor, bias: &Tensor, geom: &ConvGeometry) -> Tensor {
    let (oh, ow) = (geom.out_h(), geom.out_w());
    let (ic, k) = (geom.in_channels, geom.kernel);
    let (h, wd) = (geom.in_h, geom.in_w);
    let mut out = Tensor::zeros(geom.output_shape());
    for oc in 0..geom.out_channels {
        for or in 0..oh {
            for ocol in 0..ow {
                let mut acc = bias.data[oc];
                for ci in 0..ic {
                    for kr in 0..k {
                        let ir = (or * geom.stride + kr) as isize - geom.pad as isize;
                        if ir < 0 || ir as usize >= h {
                            continue;
                        }
                        for kc in 0..k {
                            let icol = (ocol * geom.stride + kc) as isize - geom.pad as isize;
                            if icol < 0 || icol as usize >= wd {
                                continue;
                            }
                            acc += w.data[((oc * ic + ci) * k + kr) * k + kc]
                                * x.data[(ci * h + ir as usize) * wd + icol as usize];
                        }
                    }
                }
                out.data[(oc * oh + or) * ow + ocol] = acc;
            }
        }
    }
    out
}

/// Returns (gradient wrt the effective kernel, gradient wrt the input).
fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    mask: Option<&Tensor>,
    g: &Tensor,
    geom: &ConvGeometry,
) -> (Tensor, Tensor) {
    let (oh, ow) = (geom.out_h(), geom.out_w());
    let (ic, k) = (geom.in_channels, geom.kernel);
    let (h, wd) = (geom.in_h, geom.in_w);
    let mut dw = Tensor::zeros(weight.shape.clone());
    let mut dx = Tensor::zeros(x.shape.clone());
    for oc in 0..geom.out_channels {
        for or in 0..oh {
            for ocol in 0..ow {
                let go = g.data[(oc * oh + or) * ow + ocol];
                if go == 0.0 {
                    continue;
                }
                for ci in 0..ic {
                    for kr in 0..k {
                        let ir = (or * geom.stride + kr) as isize - geom.pad as isize;
                        if ir < 0 || ir as usize >= h {
                            continue;
                        }
                        for kc in 0..k {
                            let icol = (ocol * geom.stride + kc) as isize - geom.pad as isize;
                            if icol < 0 || icol as usize >= wd {
                                continue;
                            }
                            let widx = ((oc * ic + ci) * k + kr) * k + kc;
                            let xidx = (ci * h + ir as usize) * wd + icol as usize;
                            dw.data[widx] += go * x.data[xidx];
                            let m = mask.map_or(1.0, |mm| mm.data[widx]);
                            dx.data[xidx] += go * weight.data[widx] * m;
                        }
                    }
                }
            }
        }
    }
    (dw, dx)
}

fn masked_relu_forward(z: &Tensor, mask: &Tensor) -> Tensor {
    z.zip(mask, |zv, m| {
        let s = if zv > 0.0 { zv } else { 0.0 };
        s * m + zv * (1.0 - m)
    })
}

fn avgpool_forward(x: &Tensor, k: usize) -> Tensor {
    let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    let (ph, pw) = (h / k, w / k);
    let inv = 1.0 / ((k * k) as f64);
    let mut out = Tensor::zeros(vec![c, ph, pw]);
    for ci in 0..c {
        for i in 0..ph {
            for j in 0..pw {
                let mut acc = 0.0;
                for di in 0..k {
                    for dj in 0..k {
                        acc += x.data[(ci * h + i * k + di) * w + j * k + dj];
                    }
                }
                out.data[(ci * ph + i) * pw + j] = acc * inv;
            }
        }
    }
    out
}

/// Softmax cross-entropy for one sample; returns `(loss, dlogits)`.
pub fn cross_entropy(logits: &Tensor, label: usize) -> (f64, Tensor) {
    let m = logits.data.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.data.iter().map(|&l| (l - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = -(exps[label] / sum).ln();
    let grad = Tensor::new(
        logits.shape.clone(),
        exps.iter()
            .enumerate()
            .map(|(i, &e)| e / sum - if i == label { 1.0 } else { 0.0 })
            .collect(),
    );
    (loss, grad)
}

/// Per-layer multiply-accumulate and ReLU counts, full or mask-scaled.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerCount {
    pub layer_index: usize,
    pub kind: String,
    pub macs: u64,
    pub relus: u64,
    pub weights: u64,
    /// Input feature volume (elements) seen by this layer.
    pub input_volume: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OpCounts {
    pub per_layer: Vec<LayerCount>,
}

impl OpCounts {
    pub fn total_macs(&self) -> u64 {
        self.per_layer.iter().map(|l| l.macs).sum()
    }

    pub fn total_relus(&self) -> u64 {
        self.per_layer.iter().map(|l| l.relus).sum()
    }

    pub fn total_weights(&self) -> u64 {
        self.per_layer.iter().map(|l| l.weights).sum()
    }
}

/// Count MACs, ReLUs and weights per layer. With binary masks supplied the
/// counts cover only kept weights and masked-in ReLU positions.
pub fn count_ops(model: &Model, masks: Option<&MaskValues>) -> Result<OpCounts> {
    let shapes = model.layer_shapes()?;
    let mut rows = Vec::new();
    let mut weight_idx = 0usize;
    let mut relu_idx = 0usize;
    for (l, layer) in model.layers.iter().enumerate() {
        let input_volume = shapes[l].iter().product::<usize>() as u64;
        let row = match layer {
            Layer::Conv2d { geom, weight, .. } => {
                let kept = match masks {
                    Some(m) => m.weight[weight_idx].data.iter().filter(|&&v| v != 0.0).count()
                        as u64,
                    None => weight.len() as u64,
                };
                weight_idx += 1;
                let fo2 = (geom.out_h() * geom.out_w()) as u64;
                LayerCount {
                    layer_index: l,
                    kind: layer.kind().into(),
                    macs: kept * fo2,
                    relus: 0,
                    weights: kept,
                    input_volume,
                }
            }
            Layer::FullyConnected { weight, .. } => {
                let kept = match masks {
                    Some(m) => m.weight[weight_idx].data.iter().filter(|&&v| v != 0.0).count()
                        as u64,
                    None => weight.len() as u64,
                };
                weight_idx += 1;
                LayerCount {
                    layer_index: l,
                    kind: layer.kind().into(),
                    macs: kept,
                    relus: 0,
                    weights: kept,
                    input_volume,
                }
            }
            Layer::Relu => {
                let kept = match masks {
                    Some(m) => m.feature[relu_idx].data.iter().filter(|&&v| v != 0.0).count()
                        as u64,
                    None => input_volume,
                };
                relu_idx += 1;
                LayerCount {
                    layer_index: l,
                    kind: layer.kind().into(),
                    macs: 0,
                    relus: kept,
                    weights: 0,
                    input_volume,
                }
            }
            _ => LayerCount {
                layer_index: l,
                kind: layer.kind().into(),
                macs: 0,
                relus: 0,
                weights: 0,
                input_volume,
            },
        };
        rows.push(row);
    }
    Ok(OpCounts { per_layer: rows })
}

// ---------------------------------------------------------------------------
// checkpoint format: 4-byte LE header length, JSON header, f64 LE payload
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    input_shape: Vec<usize>,
    classes: usize,
    layers: Vec<LayerSpecDef>,
    payload_f64s: usize,
}

impl Model {
    /// All parameters flattened in layer order (weight then bias per layer).
    pub fn payload(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if let Some(w) = layer.weight() {
                out.extend_from_slice(&w.data);
            }
            if let Some(b) = layer.bias() {
                out.extend_from_slice(&b.data);
            }
        }
        out
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let payload = self.payload();
        let header = CheckpointHeader {
            input_shape: self.input_shape.clone(),
            classes: self.classes,
            layers: self.spec_defs(),
            payload_f64s: payload.len(),
        };
        let header_bytes = serde_json::to_vec(&header)?;
        let mut file = std::fs::File::create(path)?;
        file.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
        file.write_all(&header_bytes)?;
        let mut raw = Vec::with_capacity(payload.len() * 8);
        for v in payload {
            raw.extend_from_slice(&v.to_le_bytes());
        }
        file.write_all(&raw)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Model> {
        let mut file = std::fs::File::open(path)?;
        let mut len_bytes = [0u8; 4];
        file.read_exact(&mut len_bytes)?;
        let header_len = u32::from_le_bytes(len_bytes) as usize;
        let mut header_bytes = vec![0u8; header_len];
        file.read_exact(&mut header_bytes)?;
        let header: CheckpointHeader = serde_json::from_slice(&header_bytes)?;
        let mut payload = Vec::new();
        file.read_to_end(&mut payload)?;
        if payload.len() != header.payload_f64s * 8 {
            return Err(Error::ChecksumMismatch("model checkpoint payload".into()));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Model::from_defs(header.input_shape, header.classes, &header.layers, &values)
    }

    pub fn from_defs(
        input_shape: Vec<usize>,
        classes: usize,
        defs: &[LayerSpecDef],
        values: &[f64],
    ) -> Result<Model> {
        let mut layers = Vec::with_capacity(defs.len());
        let mut cursor = 0usize;
        let mut take = |n: usize| -> Result<Vec<f64>> {
            if cursor + n > values.len() {
                return Err(Error::ChecksumMismatch("model payload underrun".into()));
            }
            let v = values[cursor..cursor + n].to_vec();
            cursor += n;
            Ok(v)
        };
        for def in defs {
            let layer = match def {
                LayerSpecDef::Conv2d { geom } => {
                    let wlen = geom.out_channels * geom.in_channels * geom.kernel * geom.kernel;
                    Layer::Conv2d {
                        geom: *geom,
                        weight: Tensor::new(geom.kernel_shape(), take(wlen)?),
                        bias: Tensor::new(vec![geom.out_channels], take(geom.out_channels)?),
                    }
                }
                LayerSpecDef::FullyConnected { inputs, outputs } => Layer::FullyConnected {
                    weight: Tensor::new(vec![*outputs, *inputs], take(outputs * inputs)?),
                    bias: Tensor::new(vec![*outputs], take(*outputs)?),
                },
                LayerSpecDef::Relu => Layer::Relu,
                LayerSpecDef::AvgPool { k } => Layer::AvgPool { k: *k },
                LayerSpecDef::Flatten => Layer::Flatten,
            };
            layers.push(layer);
        }
        let model = Model {
            input_shape,
            classes,
            layers,
        };
        model.validate()?;
        Ok(model)
    }
}

// ---------------------------------------------------------------------------
// reference desk-scale architectures
// ---------------------------------------------------------------------------

fn he_tensor<R: Rng>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let len = shape.iter().product();
    let mut data = Vec::with_capacity(len);
    while data.len() < len {
        // Box-Muller keeps the generator stream portable
        let u1: f64 = rng.gen::<f64>().max(1e-12);
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        data.push(r * (2.0 * std::f64::consts::PI * u2).cos() * std);
        if data.len() < len {
            data.push(r * (2.0 * std::f64::consts::PI * u2).sin() * std);
        }
    }
    Tensor::new(shape, data)
}

/// Multi-layer perceptron with ReLU after every hidden layer.
pub fn mlp<R: Rng>(input_dim: usize, hidden: &[usize], classes: usize, rng: &mut R) -> Model {
    let mut layers = Vec::new();
    let mut prev = input_dim;
    for &h in hidden {
        layers.push(Layer::FullyConnected {
            weight: he_tensor(vec![h, prev], prev, rng),
            bias: Tensor::zeros(vec![h]),
        });
        layers.push(Layer::Relu);
        prev = h;
    }
    layers.push(Layer::FullyConnected {
        weight: he_tensor(vec![classes, prev], prev, rng),
        bias: Tensor::zeros(vec![classes]),
    });
    Model {
        input_shape: vec![input_dim],
        classes,
        layers,
    }
}

/// Small convolutional reference net:
/// conv-relu-pool-conv-relu-flatten-fc-relu-fc.
pub fn toy_cnn<R: Rng>(
    input: (usize, usize, usize),
    conv_channels: (usize, usize),
    fc_hidden: usize,
    classes: usize,
    rng: &mut R,
) -> Model {
    let (c, h, w) = input;
    let (c1, c2) = conv_channels;
    let g1 = ConvGeometry {
        in_channels: c,
        out_channels: c1,
        kernel: 3,
        stride: 1,
        pad: 0,
        in_h: h,
        in_w: w,
    };
    let (h1, w1) = (g1.out_h(), g1.out_w());
    let g2 = ConvGeometry {
        in_channels: c1,
        out_channels: c2,
        kernel: 3,
        stride: 1,
        pad: 0,
        in_h: h1 / 2,
        in_w: w1 / 2,
    };
    let flat = c2 * g2.out_h() * g2.out_w();
    let layers = vec![
        Layer::Conv2d {
            geom: g1,
            weight: he_tensor(g1.kernel_shape(), c * 9, rng),
            bias: Tensor::zeros(vec![c1]),
        },
        Layer::Relu,
        Layer::AvgPool { k: 2 },
        Layer::Conv2d {
            geom: g2,
            weight: he_tensor(g2.kernel_shape(), c1 * 9, rng),
            bias: Tensor::zeros(vec![c2]),
        },
        Layer::Relu,
        Layer::Flatten,
        Layer::FullyConnected {
            weight: he_tensor(vec![fc_hidden, flat], flat, rng),
            bias: Tensor::zeros(vec![fc_hidden]),
        },
        Layer::Relu,
        Layer::FullyConnected {
            weight: he_tensor(vec![classes, fc_hidden], fc_hidden, rng),
            bias: Tensor::zeros(vec![classes]),
        },
    ];
    Model {
        input_shape: vec![c, h, w],
        classes,
        layers,
    }
}
