//! Optimizers and training hyper-parameters.

use super::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Knowledge-distillation weights: KL on logits plus an attention-transfer
/// penalty on declared feature-map pairs.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct KdConfig {
    pub alpha_kl: f64,
    pub alpha_at: f64,
    pub temperature: f64,
}

impl Default for KdConfig {
    fn default() -> Self {
        KdConfig {
            alpha_kl: 1.0,
            alpha_at: 1000.0,
            temperature: 4.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 1e-4,
        }
    }
}

/// Shared training knobs. `lambda` and `mu` weigh the weight- and
/// feature-sparsity regularizers.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub mu: f64,
    pub adamw: AdamWConfig,
    pub sgd_lr: f64,
    pub kd: Option<KdConfig>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            lambda: 1.0,
            mu: 1.0,
            adamw: AdamWConfig::default(),
            sgd_lr: 0.01,
            kd: None,
            seed: 7,
        }
    }
}

/// AdamW over a fixed group of tensors. Weight decay applies only to tensors
/// flagged in `decay`.
pub struct AdamW {
    pub config: AdamWConfig,
    step_count: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, shapes: &[Vec<usize>]) -> AdamW {
        AdamW {
            config,
            step_count: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor], decay: &[bool]) {
        assert_eq!(params.len(), self.m.len());
        self.step_count += 1;
        let t = self.step_count as f64;
        let c = &self.config;
        let bias1 = 1.0 - c.beta1.powf(t);
        let bias2 = 1.0 - c.beta2.powf(t);
        for (idx, p) in params.iter_mut().enumerate() {
            let g = grads[idx];
            for i in 0..p.data.len() {
                let m = &mut self.m[idx].data[i];
                let v = &mut self.v[idx].data[i];
                *m = c.beta1 * *m + (1.0 - c.beta1) * g.data[i];
                *v = c.beta2 * *v + (1.0 - c.beta2) * g.data[i] * g.data[i];
                let mh = *m / bias1;
                let vh = *v / bias2;
                let mut update = mh / (vh.sqrt() + 1e-8);
                if decay[idx] {
                    update += c.weight_decay * p.data[i];
                }
                p.data[i] -= c.lr * update;
            }
        }
    }
}

/// Momentum SGD under a cosine-annealed learning rate. `gates`, when present,
/// freeze entries outside an allowed set; gated-off entries receive no update
/// and no momentum, so they keep their exact bit pattern — the frozen-core
/// training mode relies on that.
pub struct SgdCosine {
    pub base_lr: f64,
    pub momentum: f64,
    pub total_steps: u64,
    step_count: u64,
    velocity: Option<Vec<Tensor>>,
}

impl SgdCosine {
    pub fn new(base_lr: f64, total_steps: u64) -> SgdCosine {
        SgdCosine {
            base_lr,
            momentum: 0.9,
            total_steps: total_steps.max(1),
            step_count: 0,
            velocity: None,
        }
    }

    pub fn current_lr(&self) -> f64 {
        let t = self.step_count.min(self.total_steps) as f64 / self.total_steps as f64;
        0.5 * self.base_lr * (1.0 + (std::f64::consts::PI * t).cos())
    }

    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[&Tensor],
        gates: Option<&[Option<&Tensor>]>,
    ) {
        let lr = self.current_lr();
        self.step_count += 1;
        let velocity = self.velocity.get_or_insert_with(|| {
            params
                .iter()
                .map(|p| Tensor::zeros(p.shape.clone()))
                .collect()
        });
        for (idx, p) in params.iter_mut().enumerate() {
            let g = grads[idx];
            let gate = gates.and_then(|gs| gs[idx]);
            let v = &mut velocity[idx];
            for i in 0..p.data.len() {
                let allowed = gate.map_or(1.0, |t| t.data[i]);
                if allowed != 0.0 {
                    v.data[i] = self.momentum * v.data[i] + g.data[i];
                    p.data[i] -= lr * v.data[i];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adamw_minimizes_a_quadratic() {
        let mut x = Tensor::new(vec![1], vec![5.0]);
        let mut opt = AdamW::new(
            AdamWConfig {
                lr: 0.1,
                ..Default::default()
            },
            &[vec![1]],
        );
        for _ in 0..500 {
            let g = Tensor::new(vec![1], vec![2.0 * x.data[0]]);
            opt.step(&mut [&mut x], &[&g], &[false]);
        }
        assert!(x.data[0].abs() < 1e-3, "x = {}", x.data[0]);
    }

    #[test]
    fn cosine_schedule_decays_to_zero() {
        let mut opt = SgdCosine::new(0.5, 10);
        assert!((opt.current_lr() - 0.5).abs() < 1e-12);
        let mut x = Tensor::new(vec![1], vec![0.0]);
        let g = Tensor::new(vec![1], vec![0.0]);
        for _ in 0..10 {
            opt.step(&mut [&mut x], &[&g], None);
        }
        assert!(opt.current_lr() < 1e-12);
    }

    #[test]
    fn gated_entries_never_move() {
        let mut x = Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]);
        let g = Tensor::new(vec![4], vec![1.0, 1.0, 1.0, 1.0]);
        let gate = Tensor::new(vec![4], vec![0.0, 1.0, 0.0, 1.0]);
        let mut opt = SgdCosine::new(0.1, 5);
        opt.step(&mut [&mut x], &[&g], Some(&[Some(&gate)]));
        assert_eq!(x.data[0], 1.0);
        assert_eq!(x.data[2], 3.0);
        assert!(x.data[1] < 2.0);
        assert!(x.data[3] < 4.0);
    }
}
