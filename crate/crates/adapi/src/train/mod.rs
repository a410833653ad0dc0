//! Mask-adaptive training: the triple objective (task loss plus weight- and
//! feature-sparsity terms), the softplus straight-through estimator behind the
//! hard threshold, knowledge distillation, sequential multi-mask training over
//! ascending densities, and the per-level single-model baseline.

pub mod kd;

use crate::error::{Error, Result};
use crate::masks::{mask_family, rank_select, DensityLevel, DensitySchedule, MaskFamily};
use crate::nn::data::{accuracy, Dataset};
use crate::nn::optim::{AdamW, KdConfig, SgdCosine, TrainConfig};
use crate::nn::{count_ops, cross_entropy, Gradients, Layer, MaskValues, Model, OpCounts, Tensor};
use crate::prg::session_rng;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Straight-through gradient of the hard indicator: the backward pass treats
/// it as softplus, whose derivative is the logistic function.
pub fn ste_backward(soft_value: f64, upstream: f64) -> f64 {
    upstream * logistic(soft_value)
}

/// Trainable real-valued masks, one tensor per prunable weight tensor and one
/// per ReLU feature map.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SoftMasks {
    pub weight: Vec<Tensor>,
    pub feature: Vec<Tensor>,
}

impl SoftMasks {
    /// Weight soft masks start at |W|; feature soft masks at a small positive
    /// constant plus uniform noise (seed-controlled).
    pub fn init<R: Rng>(model: &Model, rng: &mut R) -> SoftMasks {
        let weight = model
            .weight_layers()
            .iter()
            .map(|&l| model.layers[l].weight().unwrap().map(f64::abs))
            .collect();
        let feature = model
            .feature_shapes()
            .into_iter()
            .map(|shape| {
                let len: usize = shape.iter().product();
                Tensor::new(
                    shape,
                    (0..len).map(|_| 0.01 + 0.01 * rng.gen::<f64>()).collect(),
                )
            })
            .collect();
        SoftMasks { weight, feature }
    }
}

/// Components of one evaluation of the triple objective.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct TripleLossBreakdown {
    pub task: f64,
    pub weight_sparsity: f64,
    pub relu_sparsity: f64,
    pub kd_kl: f64,
    pub kd_at: f64,
}

impl TripleLossBreakdown {
    pub fn total(&self) -> f64 {
        self.task + self.weight_sparsity + self.relu_sparsity + self.kd_kl + self.kd_at
    }
}

/// How soft masks enter the forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MaskMode {
    /// Hard indicator at the given (weight, relu) densities, straight-through
    /// softplus gradients.
    Hard { densities: (f64, f64) },
    /// Softplus of the soft values everywhere; the objective is smooth and
    /// finite-difference checkable.
    Relaxed,
}

/// Frozen teacher outputs for distillation, cached over a dataset.
pub struct TeacherContext {
    pub cfg: KdConfig,
    /// Activation indices (same graph positions on student and teacher).
    pub pairs: Vec<usize>,
    logits: Vec<Tensor>,
    features: Vec<Vec<Tensor>>,
}

impl TeacherContext {
    /// Cache teacher logits and the attention-pair feature maps for every
    /// sample. Pairs default to the outputs of ReLU layers that follow a
    /// convolution.
    pub fn build(teacher: &Model, data: &Dataset, cfg: KdConfig) -> Result<TeacherContext> {
        let pairs = default_attention_pairs(teacher);
        Self::build_with_pairs(teacher, data, cfg, pairs)
    }

    /// Cache teacher outputs with an explicit list of matched activation
    /// indices (1 = output of layer 0).
    pub fn build_with_pairs(
        teacher: &Model,
        data: &Dataset,
        cfg: KdConfig,
        pairs: Vec<usize>,
    ) -> Result<TeacherContext> {
        let depth = teacher.layers.len();
        if pairs.iter().any(|&a| a == 0 || a > depth) {
            return Err(Error::Config(format!(
                "attention pair index out of range (1..={depth})"
            )));
        }
        let mut logits = Vec::with_capacity(data.len());
        let mut features = Vec::with_capacity(data.len());
        for x in &data.inputs {
            let cache = teacher.forward(x, None)?;
            logits.push(cache.logits().clone());
            features.push(
                pairs
                    .iter()
                    .map(|&a| cache.activations[a].clone())
                    .collect(),
            );
        }
        Ok(TeacherContext {
            cfg,
            pairs,
            logits,
            features,
        })
    }
}

/// Outputs of ReLU layers directly following a convolution.
pub fn default_attention_pairs(model: &Model) -> Vec<usize> {
    let mut pairs = Vec::new();
    for (l, layer) in model.layers.iter().enumerate() {
        if matches!(layer, Layer::Relu)
            && l > 0
            && matches!(model.layers[l - 1], Layer::Conv2d { .. })
        {
            pairs.push(l + 1);
        }
    }
    pairs
}

/// Realize the forward-pass mask values for the given mode.
pub fn mask_values_for(soft: &SoftMasks, mode: &MaskMode) -> Result<MaskValues> {
    match mode {
        MaskMode::Hard {
            densities: (dw, dr),
        } => Ok(MaskValues {
            weight: soft
                .weight
                .iter()
                .map(|t| rank_select(t, *dw).map(|m| m.to_values()))
                .collect::<Result<_>>()?,
            feature: soft
                .feature
                .iter()
                .map(|t| rank_select(t, *dr).map(|m| m.to_values()))
                .collect::<Result<_>>()?,
        }),
        MaskMode::Relaxed => Ok(MaskValues {
            weight: soft.weight.iter().map(|t| t.map(softplus)).collect(),
            feature: soft.feature.iter().map(|t| t.map(softplus)).collect(),
        }),
    }
}

/// Gradients of the triple objective over one batch.
pub struct BatchGradients {
    pub loss: TripleLossBreakdown,
    pub weight: Vec<Tensor>,
    pub bias: Vec<Tensor>,
    pub soft_weight: Vec<Tensor>,
    pub soft_feature: Vec<Tensor>,
}

/// Sparsity regularizer over a group of masks: realized density in hard mode,
/// mean softplus in relaxed mode. The gradient with respect to each soft value
/// is `logistic(m) / total_size` in both (that is the straight-through rule).
pub fn sparsity_regularizer(
    soft_group: &[Tensor],
    mode: &MaskMode,
    hard_values: Option<&[Tensor]>,
) -> (f64, Vec<Tensor>) {
    let total: usize = soft_group.iter().map(|t| t.len()).sum();
    if total == 0 {
        return (0.0, Vec::new());
    }
    let value = match (mode, hard_values) {
        (MaskMode::Hard { .. }, Some(hard)) => {
            hard.iter()
                .map(|t| t.data.iter().filter(|&&v| v != 0.0).count())
                .sum::<usize>() as f64
                / total as f64
        }
        _ => {
            soft_group
                .iter()
                .map(|t| t.data.iter().map(|&m| softplus(m)).sum::<f64>())
                .sum::<f64>()
                / total as f64
        }
    };
    let grads = soft_group
        .iter()
        .map(|t| t.map(|m| logistic(m) / total as f64))
        .collect();
    (value, grads)
}

/// Evaluate the triple objective and its gradients over a batch of samples.
///
/// Weight/bias gradients are the batch means; soft-mask gradients combine the
/// straight-through task term with the sparsity regularizers.
#[allow(clippy::too_many_arguments)]
pub fn triple_objective_gradients(
    model: &Model,
    soft: &SoftMasks,
    mode: &MaskMode,
    data: &Dataset,
    batch: &[usize],
    lambda: f64,
    mu: f64,
    teacher: Option<&TeacherContext>,
) -> Result<BatchGradients> {
    let values = mask_values_for(soft, mode)?;
    let mut acc = Gradients::zeros_like(model);
    let mut loss = TripleLossBreakdown::default();
    for &idx in batch {
        let x = &data.inputs[idx];
        let label = data.labels[idx];
        let cache = model.forward(x, Some(&values))?;
        let (task, mut dlogits) = cross_entropy(cache.logits(), label);
        loss.task += task;
        let mut injections: BTreeMap<usize, Tensor> = BTreeMap::new();
        if let Some(t) = teacher {
            let (kl, dkl) = kd::kl_term(cache.logits(), &t.logits[idx], &t.cfg);
            loss.kd_kl += kl;
            dlogits.add_assign(&dkl);
            for (pi, &act) in t.pairs.iter().enumerate() {
                let (at, dat) =
                    kd::attention_term(&cache.activations[act], &t.features[idx][pi], &t.cfg);
                loss.kd_at += at;
                injections.insert(act, dat);
            }
        }
        let grads =
            model.backward_with_injections(&cache, &dlogits, Some(&values), &injections)?;
        acc.accumulate(&grads);
    }
    let inv = 1.0 / batch.len().max(1) as f64;
    acc.scale(inv);
    loss.task *= inv;
    loss.kd_kl *= inv;
    loss.kd_at *= inv;

    // straight-through chain into the soft values
    let chain = |soft_t: &Tensor, mask_grad: &Tensor| -> Tensor {
        Tensor::new(
            soft_t.shape.clone(),
            soft_t
                .data
                .iter()
                .zip(&mask_grad.data)
                .map(|(&m, &g)| ste_backward(m, g))
                .collect(),
        )
    };
    let mut soft_weight: Vec<Tensor> = soft
        .weight
        .iter()
        .zip(&acc.weight_mask)
        .map(|(s, g)| chain(s, g))
        .collect();
    let mut soft_feature: Vec<Tensor> = soft
        .feature
        .iter()
        .zip(&acc.feature_mask)
        .map(|(s, g)| chain(s, g))
        .collect();

    let (rw, rw_grads) = sparsity_regularizer(&soft.weight, mode, Some(&values.weight));
    let (rr, rr_grads) = sparsity_regularizer(&soft.feature, mode, Some(&values.feature));
    loss.weight_sparsity = lambda * rw;
    loss.relu_sparsity = mu * rr;
    for (t, g) in soft_weight.iter_mut().zip(&rw_grads) {
        t.add_assign(&g.scale(lambda));
    }
    for (t, g) in soft_feature.iter_mut().zip(&rr_grads) {
        t.add_assign(&g.scale(mu));
    }

    if !loss.total().is_finite() {
        return Err(Error::Training("objective diverged to non-finite".into()));
    }
    Ok(BatchGradients {
        loss,
        weight: acc.weight,
        bias: acc.bias,
        soft_weight,
        soft_feature,
    })
}

/// Scalar value of the fully relaxed objective (softplus masks everywhere);
/// the finite-difference oracle for the straight-through estimator.
pub fn relaxed_objective(
    model: &Model,
    soft: &SoftMasks,
    data: &Dataset,
    batch: &[usize],
    lambda: f64,
    mu: f64,
    teacher: Option<&TeacherContext>,
) -> Result<f64> {
    let values = mask_values_for(soft, &MaskMode::Relaxed)?;
    let mut task = 0.0;
    let mut kd_total = 0.0;
    for &idx in batch {
        let cache = model.forward(&data.inputs[idx], Some(&values))?;
        task += cross_entropy(cache.logits(), data.labels[idx]).0;
        if let Some(t) = teacher {
            kd_total += kd::kl_term(cache.logits(), &t.logits[idx], &t.cfg).0;
            for (pi, &act) in t.pairs.iter().enumerate() {
                kd_total +=
                    kd::attention_term(&cache.activations[act], &t.features[idx][pi], &t.cfg).0;
            }
        }
    }
    let inv = 1.0 / batch.len().max(1) as f64;
    let (rw, _) = sparsity_regularizer(&soft.weight, &MaskMode::Relaxed, None);
    let (rr, _) = sparsity_regularizer(&soft.feature, &MaskMode::Relaxed, None);
    Ok(task * inv + kd_total * inv + lambda * rw + mu * rr)
}

fn restore_payload(model: &mut Model, payload: &[f64]) {
    let mut cursor = 0usize;
    for layer in model.layers.iter_mut() {
        match layer {
            Layer::Conv2d { weight, bias, .. } | Layer::FullyConnected { weight, bias } => {
                let n = weight.data.len();
                weight.data.copy_from_slice(&payload[cursor..cursor + n]);
                cursor += n;
                let n = bias.data.len();
                bias.data.copy_from_slice(&payload[cursor..cursor + n]);
                cursor += n;
            }
            _ => {}
        }
    }
    debug_assert_eq!(cursor, payload.len());
}

fn collect_params(model: &mut Model) -> (Vec<&mut Tensor>, Vec<&mut Tensor>) {
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for layer in model.layers.iter_mut() {
        match layer {
            Layer::Conv2d { weight, bias, .. } | Layer::FullyConnected { weight, bias } => {
                weights.push(weight);
                biases.push(bias);
            }
            _ => {}
        }
    }
    (weights, biases)
}

fn shuffled_indices(len: usize, rng: &mut ChaCha20Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Plain task-loss training of the dense teacher model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TeacherReport {
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub stats: OpCounts,
    pub parameters: u64,
}

pub fn train_teacher(
    model: &mut Model,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<TeacherReport> {
    model.validate()?;
    let mut rng = session_rng(cfg.seed, 0, "teacher");
    let shapes: Vec<Vec<usize>> = {
        let (ws, bs) = collect_params(model);
        ws.iter()
            .map(|t| t.shape.clone())
            .chain(bs.iter().map(|t| t.shape.clone()))
            .collect()
    };
    let mut opt = AdamW::new(cfg.adamw, &shapes);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _epoch in 0..cfg.epochs {
        let order = shuffled_indices(train.len(), &mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let mut acc = Gradients::zeros_like(model);
            let mut batch_loss = 0.0;
            for &idx in batch {
                let cache = model.forward(&train.inputs[idx], None)?;
                let (loss, dlogits) = cross_entropy(cache.logits(), train.labels[idx]);
                batch_loss += loss;
                acc.accumulate(&model.backward(&cache, &dlogits, None)?);
            }
            let inv = 1.0 / batch.len() as f64;
            acc.scale(inv);
            batch_loss *= inv;
            if !batch_loss.is_finite() {
                return Err(Error::Training("teacher loss became non-finite".into()));
            }
            epoch_loss += batch_loss * batch.len() as f64;
            let (mut ws, mut bs) = collect_params(model);
            let n_w = ws.len();
            let mut params: Vec<&mut Tensor> = Vec::new();
            params.extend(ws.iter_mut().map(|t| &mut **t));
            params.extend(bs.iter_mut().map(|t| &mut **t));
            let grads: Vec<&Tensor> = acc.weight.iter().chain(acc.bias.iter()).collect();
            let decay: Vec<bool> = (0..params.len()).map(|i| i < n_w).collect();
            opt.step(&mut params, &grads, &decay);
        }
        epoch_losses.push(epoch_loss / train.len().max(1) as f64);
    }
    Ok(TeacherReport {
        epoch_losses,
        train_accuracy: accuracy(model, train, None),
        test_accuracy: accuracy(model, test, None),
        stats: count_ops(model, None)?,
        parameters: model.parameter_count(),
    })
}

/// Joint optimization of weights and soft masks at the sparsest scheduled
/// densities, hard thresholds refreshed every batch.
pub fn optimize_soft_phase(
    model: &mut Model,
    soft: &mut SoftMasks,
    schedule: &DensitySchedule,
    train: &Dataset,
    cfg: &TrainConfig,
    teacher: Option<&TeacherContext>,
) -> Result<Vec<TripleLossBreakdown>> {
    model.validate()?;
    let min_level = &schedule.levels[0];
    let mode = MaskMode::Hard {
        densities: (min_level.weight_density, min_level.relu_density),
    };
    let mut rng = session_rng(cfg.seed, 0, "soft-phase");
    let shapes: Vec<Vec<usize>> = {
        let (ws, bs) = collect_params(model);
        ws.iter()
            .map(|t| t.shape.clone())
            .chain(bs.iter().map(|t| t.shape.clone()))
            .chain(soft.weight.iter().map(|t| t.shape.clone()))
            .chain(soft.feature.iter().map(|t| t.shape.clone()))
            .collect()
    };
    let mut opt = AdamW::new(cfg.adamw, &shapes);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _epoch in 0..cfg.epochs {
        let order = shuffled_indices(train.len(), &mut rng);
        let mut epoch = TripleLossBreakdown::default();
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let bg = triple_objective_gradients(
                model, soft, &mode, train, batch, cfg.lambda, cfg.mu, teacher,
            )?;
            epoch.task += bg.loss.task;
            epoch.weight_sparsity += bg.loss.weight_sparsity;
            epoch.relu_sparsity += bg.loss.relu_sparsity;
            epoch.kd_kl += bg.loss.kd_kl;
            epoch.kd_at += bg.loss.kd_at;
            batches += 1;

            let n_w = bg.weight.len();
            let (mut ws, mut bs) = collect_params(model);
            let mut params: Vec<&mut Tensor> = Vec::new();
            params.extend(ws.iter_mut().map(|t| &mut **t));
            params.extend(bs.iter_mut().map(|t| &mut **t));
            params.extend(soft.weight.iter_mut());
            params.extend(soft.feature.iter_mut());
            let grads: Vec<&Tensor> = bg
                .weight
                .iter()
                .chain(bg.bias.iter())
                .chain(bg.soft_weight.iter())
                .chain(bg.soft_feature.iter())
                .collect();
            let decay: Vec<bool> = (0..params.len()).map(|i| i < n_w).collect();
            opt.step(&mut params, &grads, &decay);
        }
        let inv = 1.0 / batches.max(1) as f64;
        trace.push(TripleLossBreakdown {
            task: epoch.task * inv,
            weight_sparsity: epoch.weight_sparsity * inv,
            relu_sparsity: epoch.relu_sparsity * inv,
            kd_kl: epoch.kd_kl * inv,
            kd_at: epoch.kd_at * inv,
        });
    }
    Ok(trace)
}

/// Whether later sequential levels may touch weights that earlier (sparser)
/// levels rely on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FreezeMode {
    /// Only weights newly activated at the current level train; sparser
    /// levels stay bit-identical afterwards. Biases train at the first level
    /// only.
    FreezeCore,
    /// All weights active at the current level train.
    RetrainAll,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SequentialPlan {
    pub schedule: DensitySchedule,
    pub soft_epochs: usize,
    pub level_epochs: usize,
    pub freeze_mode: FreezeMode,
    /// Trailing fraction of the training set held out to score per-stage
    /// model selection (the best-scoring state of each stage is kept).
    pub holdout_fraction: f64,
}

impl SequentialPlan {
    pub fn new(
        schedule: DensitySchedule,
        soft_epochs: usize,
        level_epochs: usize,
        freeze_mode: FreezeMode,
    ) -> SequentialPlan {
        SequentialPlan {
            schedule,
            soft_epochs,
            level_epochs,
            freeze_mode,
            holdout_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub label: String,
    pub weight_density: f64,
    pub relu_density: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Result of one sequential pass. The digests fingerprint the logits of each
/// level over the test set: `post_stage` right after that level finished
/// training, `final` after every stage. In frozen-core mode the two must be
/// identical per level.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SequentialOutcome {
    pub metrics: Vec<LevelMetrics>,
    pub post_stage_digests: Vec<u64>,
    pub final_digests: Vec<u64>,
}

/// Bit-exact fingerprint of a model's logits at fixed masks over a dataset.
pub fn logits_digest(model: &Model, data: &Dataset, masks: &MaskValues) -> Result<u64> {
    let mut bytes = Vec::with_capacity(data.len() * model.classes * 8);
    for x in &data.inputs {
        for v in &model.forward(x, Some(masks))?.logits().data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(crate::prg::fnv1a64(&bytes))
}

/// Fine-tune weights for each scheduled level in ascending density order,
/// with the level's binary masks fixed.
pub fn sequential_train(
    model: &mut Model,
    family: &MaskFamily,
    plan: &SequentialPlan,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    teacher: Option<&TeacherContext>,
) -> Result<SequentialOutcome> {
    family.check_nesting()?;
    family.validate_for(model)?;
    let mut rng = session_rng(cfg.seed, 0, "sequential");
    let holdout = ((train.len() as f64 * plan.holdout_fraction) as usize).min(train.len() / 2);
    let fit_len = train.len() - holdout;
    // stage selection score: mean task loss on the held-out tail (falls back
    // to the whole training set when no holdout is configured)
    let holdout_loss = |model: &Model, values: &MaskValues| -> Result<f64> {
        let range = if holdout == 0 { 0..train.len() } else { fit_len..train.len() };
        let count = range.len().max(1);
        let mut total = 0.0;
        for i in range {
            let cache = model.forward(&train.inputs[i], Some(values))?;
            total += cross_entropy(cache.logits(), train.labels[i]).0;
        }
        Ok(total / count as f64)
    };
    let mut post_stage_digests = Vec::with_capacity(family.levels.len());
    for (k, level) in family.levels.iter().enumerate() {
        let values = level.to_mask_values();
        // entry gates for the weight update
        let gates: Vec<Tensor> = match plan.freeze_mode {
            FreezeMode::RetrainAll => values.weight.clone(),
            FreezeMode::FreezeCore => {
                if k == 0 {
                    values.weight.clone()
                } else {
                    let prev = family.levels[k - 1].to_mask_values();
                    values
                        .weight
                        .iter()
                        .zip(&prev.weight)
                        .map(|(cur, old)| cur.zip(old, |c, o| c * (1.0 - o)))
                        .collect()
                }
            }
        };
        let train_biases = match plan.freeze_mode {
            FreezeMode::RetrainAll => true,
            FreezeMode::FreezeCore => k == 0,
        };
        if matches!(plan.freeze_mode, FreezeMode::FreezeCore) && k > 0 {
            // newly activated weights start from zero: the level opens at the
            // previous level's exact function and trains only its additions
            let weight_layers = model.weight_layers();
            for (wi, &l) in weight_layers.iter().enumerate() {
                let w = model.layers[l].weight_mut().unwrap();
                for (v, g) in w.data.iter_mut().zip(&gates[wi].data) {
                    if *g != 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
        let batches_per_epoch = train.len().div_ceil(cfg.batch_size.max(1));
        let mut opt = SgdCosine::new(cfg.sgd_lr, (plan.level_epochs * batches_per_epoch) as u64);
        // keep the best holdout-scored state of this stage; with zero-init
        // deltas the stage opens at the previous level's function, so the
        // kept level can only match or improve it
        let mut best_payload = model.payload();
        let mut best_score = holdout_loss(model, &values)?;
        for _epoch in 0..plan.level_epochs {
            let order = shuffled_indices(fit_len, &mut rng);
            for batch in order.chunks(cfg.batch_size.max(1)) {
                let mut acc = Gradients::zeros_like(model);
                let mut batch_loss = 0.0;
                for &idx in batch {
                    let cache = model.forward(&train.inputs[idx], Some(&values))?;
                    let (loss, mut dlogits) = cross_entropy(cache.logits(), train.labels[idx]);
                    batch_loss += loss;
                    let mut injections: BTreeMap<usize, Tensor> = BTreeMap::new();
                    if let Some(t) = teacher {
                        let (_, dkl) = kd::kl_term(cache.logits(), &t.logits[idx], &t.cfg);
                        dlogits.add_assign(&dkl);
                        for (pi, &act) in t.pairs.iter().enumerate() {
                            let (_, dat) = kd::attention_term(
                                &cache.activations[act],
                                &t.features[idx][pi],
                                &t.cfg,
                            );
                            injections.insert(act, dat);
                        }
                    }
                    acc.accumulate(&model.backward_with_injections(
                        &cache,
                        &dlogits,
                        Some(&values),
                        &injections,
                    )?);
                }
                if !batch_loss.is_finite() {
                    return Err(Error::Training("sequential loss became non-finite".into()));
                }
                acc.scale(1.0 / batch.len() as f64);
                let (mut ws, mut bs) = collect_params(model);
                let mut params: Vec<&mut Tensor> = Vec::new();
                params.extend(ws.iter_mut().map(|t| &mut **t));
                let n_w = params.len();
                if train_biases {
                    params.extend(bs.iter_mut().map(|t| &mut **t));
                }
                let grads: Vec<&Tensor> = if train_biases {
                    acc.weight.iter().chain(acc.bias.iter()).collect()
                } else {
                    acc.weight.iter().collect()
                };
                let gate_refs: Vec<Option<&Tensor>> = (0..params.len())
                    .map(|i| if i < n_w { Some(&gates[i]) } else { None })
                    .collect();
                opt.step(&mut params, &grads, Some(&gate_refs));
            }
            let score = holdout_loss(model, &values)?;
            if score < best_score {
                best_score = score;
                best_payload = model.payload();
            }
        }
        restore_payload(model, &best_payload);
        post_stage_digests.push(logits_digest(model, test, &values)?);
    }
    // final metrics per level with the finished weight set
    let metrics = family
        .levels
        .iter()
        .zip(&family.schedule.levels)
        .map(|(level, sched)| {
            let values = level.to_mask_values();
            LevelMetrics {
                label: level.label.clone(),
                weight_density: sched.weight_density,
                relu_density: sched.relu_density,
                train_accuracy: accuracy(model, train, Some(&values)),
                test_accuracy: accuracy(model, test, Some(&values)),
            }
        })
        .collect();
    let final_digests = family
        .levels
        .iter()
        .map(|level| logits_digest(model, test, &level.to_mask_values()))
        .collect::<Result<Vec<_>>>()?;
    Ok(SequentialOutcome {
        metrics,
        post_stage_digests,
        final_digests,
    })
}

/// Full adaptive run: soft phase at the sparsest level, mask family
/// realization, then sequential fine-tuning over all levels.
pub fn train_adaptive(
    model: &mut Model,
    plan: &SequentialPlan,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    teacher: Option<&TeacherContext>,
) -> Result<(MaskFamily, SequentialOutcome, Vec<TripleLossBreakdown>)> {
    let mut soft = SoftMasks::init(model, &mut session_rng(cfg.seed, 0, "soft-init"));
    let soft_cfg = TrainConfig {
        epochs: plan.soft_epochs,
        ..cfg.clone()
    };
    let trace = optimize_soft_phase(model, &mut soft, &plan.schedule, train, &soft_cfg, teacher)?;
    let family = mask_family(&soft.weight, &soft.feature, &plan.schedule)?;
    let outcome = sequential_train(model, &family, plan, train, test, cfg, teacher)?;
    Ok((family, outcome, trace))
}

/// Independent per-level baseline: optimize a fresh model for one density
/// pair (soft phase at that density, then masked fine-tuning).
pub fn train_single(
    base: &Model,
    level: &DensityLevel,
    plan_epochs: (usize, usize),
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    teacher: Option<&TeacherContext>,
) -> Result<(Model, MaskFamily, LevelMetrics)> {
    let mut model = base.clone();
    let schedule = DensitySchedule::new(vec![level.clone()])?;
    let plan = SequentialPlan::new(
        schedule,
        plan_epochs.0,
        plan_epochs.1,
        FreezeMode::FreezeCore,
    );
    let (family, outcome, _) = train_adaptive(&mut model, &plan, train, test, cfg, teacher)?;
    let m = outcome.metrics.into_iter().next().unwrap();
    Ok((model, family, m))
}

#[cfg(test)]
mod tests;
