use super::*;
use crate::masks::DensityLevel;
use crate::nn::data::two_moons;
use crate::nn::mlp;

fn tiny_setup(seed: u64) -> (Model, Dataset, Dataset) {
    let mut rng = session_rng(seed, 0, "tiny-setup");
    let model = mlp(2, &[16], 2, &mut rng);
    let data = two_moons(240, 0.08, &mut rng);
    let (train, test) = data.split(160);
    (model, train, test)
}

#[test]
fn ste_surrogate_values() {
    assert!((logistic(0.0) - 0.5).abs() < 1e-12);
    assert!((ste_backward(0.0, 1.0) - 0.5).abs() < 1e-12);
    assert!(ste_backward(40.0, 1.0) > 0.999_999);
    assert!(ste_backward(-40.0, 1.0) < 1e-6);
}

#[test]
fn ste_matches_softplus_finite_difference() {
    let h = 1e-6;
    let mut rng = session_rng(3, 0, "ste-fd");
    for _ in 0..100 {
        let m: f64 = (rng.gen::<f64>() - 0.5) * 8.0;
        let fd = (softplus(m + h) - softplus(m - h)) / (2.0 * h);
        let an = ste_backward(m, 1.0);
        assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "m={m} fd={fd} an={an}");
    }
}

#[test]
fn regularizer_density_values() {
    let ones = vec![Tensor::ones(vec![10])];
    let (r, _) = sparsity_regularizer(
        &ones,
        &MaskMode::Hard { densities: (1.0, 1.0) },
        Some(&[Tensor::ones(vec![10])]),
    );
    assert_eq!(r, 1.0);
    let half = Tensor::new(vec![4], vec![1.0, 1.0, 0.0, 0.0]);
    let (r, _) = sparsity_regularizer(
        &[Tensor::zeros(vec![4])],
        &MaskMode::Hard { densities: (0.5, 0.5) },
        Some(&[half]),
    );
    assert_eq!(r, 0.5);
}

#[test]
fn regularizer_gradient_is_logistic_over_size() {
    let soft = vec![Tensor::new(vec![3], vec![-1.0, 0.0, 2.0])];
    let (_, grads) = sparsity_regularizer(&soft, &MaskMode::Relaxed, None);
    for (i, &m) in soft[0].data.iter().enumerate() {
        assert!((grads[0].data[i] - logistic(m) / 3.0).abs() < 1e-12);
    }
}

#[test]
fn relaxed_objective_gradient_matches_finite_differences() {
    // the straight-through estimator is exact on the relaxed objective
    let (model, train, _) = tiny_setup(11);
    let mut rng = session_rng(11, 0, "soft-init");
    let mut soft = SoftMasks::init(&model, &mut rng);
    // spread soft values so both sides of the threshold are exercised
    for t in soft.weight.iter_mut().chain(soft.feature.iter_mut()) {
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = (*v + (i as f64 * 0.37).sin()) * 0.8;
        }
    }
    let batch: Vec<usize> = (0..8).collect();
    let (lambda, mu) = (0.7, 1.3);
    let bg = triple_objective_gradients(
        &model,
        &soft,
        &MaskMode::Relaxed,
        &train,
        &batch,
        lambda,
        mu,
        None,
    )
    .unwrap();
    let h = 1e-5;
    for (ti, t) in soft.weight.clone().iter().enumerate() {
        for i in 0..t.len() {
            let orig = soft.weight[ti].data[i];
            soft.weight[ti].data[i] = orig + h;
            let up = relaxed_objective(&model, &soft, &train, &batch, lambda, mu, None).unwrap();
            soft.weight[ti].data[i] = orig - h;
            let down = relaxed_objective(&model, &soft, &train, &batch, lambda, mu, None).unwrap();
            soft.weight[ti].data[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = bg.soft_weight[ti].data[i];
            assert!(
                (fd - an).abs() <= 1e-4 * (1.0 + fd.abs().max(an.abs())),
                "soft weight grad {ti}/{i}: fd={fd} an={an}"
            );
        }
    }
    for (ti, t) in soft.feature.clone().iter().enumerate() {
        for i in 0..t.len() {
            let orig = soft.feature[ti].data[i];
            soft.feature[ti].data[i] = orig + h;
            let up = relaxed_objective(&model, &soft, &train, &batch, lambda, mu, None).unwrap();
            soft.feature[ti].data[i] = orig - h;
            let down = relaxed_objective(&model, &soft, &train, &batch, lambda, mu, None).unwrap();
            soft.feature[ti].data[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = bg.soft_feature[ti].data[i];
            assert!(
                (fd - an).abs() <= 1e-4 * (1.0 + fd.abs().max(an.abs())),
                "soft feature grad {ti}/{i}: fd={fd} an={an}"
            );
        }
    }
}

#[test]
fn loss_breakdown_components_sum_to_total() {
    let (model, train, _) = tiny_setup(13);
    let mut rng = session_rng(13, 0, "soft-init");
    let soft = SoftMasks::init(&model, &mut rng);
    let batch: Vec<usize> = (0..10).collect();
    let bg = triple_objective_gradients(
        &model,
        &soft,
        &MaskMode::Hard { densities: (0.5, 0.5) },
        &train,
        &batch,
        2.0,
        3.0,
        None,
    )
    .unwrap();
    let sum = bg.loss.task
        + bg.loss.weight_sparsity
        + bg.loss.relu_sparsity
        + bg.loss.kd_kl
        + bg.loss.kd_at;
    assert!((sum - bg.loss.total()).abs() <= 1e-9 * sum.abs().max(1.0));
}

#[test]
fn teacher_training_reaches_high_accuracy_on_moons() {
    let (mut model, train, test) = tiny_setup(17);
    let cfg = TrainConfig {
        epochs: 40,
        batch_size: 16,
        seed: 17,
        ..Default::default()
    };
    let report = train_teacher(&mut model, &train, &test, &cfg).unwrap();
    assert!(
        report.test_accuracy >= 0.9,
        "teacher accuracy {}",
        report.test_accuracy
    );
    // loss trace trends downward
    assert!(report.epoch_losses.last().unwrap() < report.epoch_losses.first().unwrap());
}

#[test]
fn zero_epoch_training_returns_the_model_unchanged() {
    let (mut model, train, test) = tiny_setup(19);
    let before = model.payload();
    let cfg = TrainConfig {
        epochs: 0,
        seed: 19,
        ..Default::default()
    };
    train_teacher(&mut model, &train, &test, &cfg).unwrap();
    assert_eq!(model.payload(), before);
}

#[test]
fn freeze_core_levels_stay_bit_identical() {
    let (mut model, train, test) = tiny_setup(23);
    let plan = SequentialPlan::new(
        DensitySchedule::new(vec![
            DensityLevel {
                label: "lo".into(),
                weight_density: 0.2,
                relu_density: 0.2,
            },
            DensityLevel {
                label: "hi".into(),
                weight_density: 0.6,
                relu_density: 0.6,
            },
        ])
        .unwrap(),
        4,
        3,
        FreezeMode::FreezeCore,
    );
    let cfg = TrainConfig {
        batch_size: 16,
        seed: 23,
        ..Default::default()
    };
    let (_family, outcome, _) =
        train_adaptive(&mut model, &plan, &train, &test, &cfg, None).unwrap();
    assert_eq!(
        outcome.post_stage_digests, outcome.final_digests,
        "sparser level moved under later training"
    );
}

#[test]
fn retrain_all_mode_is_allowed_to_move_earlier_levels() {
    let (mut model, train, test) = tiny_setup(27);
    let plan = SequentialPlan::new(
        DensitySchedule::new(vec![
            DensityLevel {
                label: "lo".into(),
                weight_density: 0.2,
                relu_density: 0.2,
            },
            DensityLevel {
                label: "hi".into(),
                weight_density: 0.6,
                relu_density: 0.6,
            },
        ])
        .unwrap(),
        4,
        3,
        FreezeMode::RetrainAll,
    );
    let cfg = TrainConfig {
        batch_size: 16,
        seed: 27,
        ..Default::default()
    };
    let (_family, outcome, _) =
        train_adaptive(&mut model, &plan, &train, &test, &cfg, None).unwrap();
    // the last level is trivially stable; the first one typically moves
    assert_eq!(
        outcome.post_stage_digests.last(),
        outcome.final_digests.last()
    );
    assert_ne!(outcome.post_stage_digests[0], outcome.final_digests[0]);
}

#[test]
fn single_level_full_density_equals_plain_training_shape() {
    let (model, train, test) = tiny_setup(29);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 16,
        seed: 29,
        lambda: 0.0,
        mu: 0.0,
        ..Default::default()
    };
    let level = DensityLevel {
        label: "full".into(),
        weight_density: 1.0,
        relu_density: 1.0,
    };
    let (_m, family, metrics) =
        train_single(&model, &level, (2, 2), &train, &test, &cfg, None).unwrap();
    assert_eq!(family.levels.len(), 1);
    // full density keeps every weight and every relu
    for m in family.levels[0].weight.iter().chain(family.levels[0].feature.iter()) {
        assert_eq!(m.ones_count(), m.len());
    }
    assert!(metrics.test_accuracy > 0.4);
}
