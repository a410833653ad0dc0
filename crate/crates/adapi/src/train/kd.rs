//! Knowledge distillation: temperature-scaled KL on logits plus an
//! attention-transfer penalty on matched feature maps.

use crate::nn::optim::KdConfig;
use crate::nn::Tensor;

fn softmax(logits: &Tensor, temperature: f64) -> Vec<f64> {
    let m = logits
        .data
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b / temperature));
    let exps: Vec<f64> = logits
        .data
        .iter()
        .map(|&l| (l / temperature - m).exp())
        .collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `alpha_kl * T^2 * KL(softmax(t/T) || softmax(s/T))` and its gradient with
/// respect to the student logits.
pub fn kl_term(
    student_logits: &Tensor,
    teacher_logits: &Tensor,
    cfg: &KdConfig,
) -> (f64, Tensor) {
    let t = cfg.temperature;
    let p_s = softmax(student_logits, t);
    let p_t = softmax(teacher_logits, t);
    let mut kl = 0.0;
    for (pt, ps) in p_t.iter().zip(&p_s) {
        if *pt > 0.0 {
            kl += pt * (pt / ps.max(1e-300)).ln();
        }
    }
    let value = cfg.alpha_kl * t * t * kl;
    // d/ds_i [T^2 KL] = T (p_s_i - p_t_i)
    let grad = Tensor::new(
        student_logits.shape.clone(),
        p_s.iter()
            .zip(&p_t)
            .map(|(ps, pt)| cfg.alpha_kl * t * (ps - pt))
            .collect(),
    );
    (value, grad)
}

/// Stabilizer added to attention-map norms: masked students can produce
/// near-dead maps whose exact L2 normalization has an unbounded gradient.
const NORM_EPS: f64 = 1e-6;

/// Cap on the L2 norm of one pair's feature gradient; sickly maps otherwise
/// inject steps large enough to blow up plain SGD.
const GRAD_CAP: f64 = 100.0;

/// Channel-summed squared activations, flattened over spatial positions.
/// For 1-D features every entry is its own position.
fn attention_map(feature: &Tensor) -> (Vec<f64>, f64) {
    let spatial = if feature.shape.len() == 3 {
        feature.shape[1] * feature.shape[2]
    } else {
        feature.len()
    };
    let channels = feature.len() / spatial;
    let mut v = vec![0.0f64; spatial];
    for c in 0..channels {
        for (i, slot) in v.iter_mut().enumerate() {
            let f = feature.data[c * spatial + i];
            *slot += f * f;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (v, norm)
}

/// `alpha_at * || norm(A_s) - norm(A_t) ||_2^2` for one feature-map pair and
/// its gradient with respect to the student feature map. Maps are normalized
/// by `||v|| + eps`; a map with no energy contributes no gradient.
pub fn attention_term(
    student_feature: &Tensor,
    teacher_feature: &Tensor,
    cfg: &KdConfig,
) -> (f64, Tensor) {
    let (vs, ns) = attention_map(student_feature);
    let (vt, nt) = attention_map(teacher_feature);
    let denom_s = ns + NORM_EPS;
    let denom_t = nt + NORM_EPS;
    let n_s: Vec<f64> = vs.iter().map(|x| x / denom_s).collect();
    let n_t: Vec<f64> = vt.iter().map(|x| x / denom_t).collect();
    let diff: Vec<f64> = n_s.iter().zip(&n_t).map(|(a, b)| a - b).collect();
    let value = cfg.alpha_at * diff.iter().map(|d| d * d).sum::<f64>();
    if ns < 1e-9 {
        // dead map: no usable attention signal
        return (value, Tensor::zeros(student_feature.shape.clone()));
    }

    // dL/dv_j = 2 alpha (d_j / denom - v_j * <d, v> / (||v|| denom^2)),
    // then dv/df = 2 f per channel
    let dv_dot: f64 = diff.iter().zip(&vs).map(|(d, v)| d * v).sum();
    let dv: Vec<f64> = vs
        .iter()
        .zip(&diff)
        .map(|(v, d)| 2.0 * cfg.alpha_at * (d / denom_s - v * dv_dot / (ns * denom_s * denom_s)))
        .collect();
    let spatial = dv.len();
    let mut grad = Tensor::new(
        student_feature.shape.clone(),
        student_feature
            .data
            .iter()
            .enumerate()
            .map(|(idx, &f)| 2.0 * f * dv[idx % spatial])
            .collect(),
    );
    let norm = grad.data.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > GRAD_CAP {
        grad.scale_assign(GRAD_CAP / norm);
    }
    (value, grad)
}
