//! Gradient and architecture oracles for the reference model.
//!
//! Analytic gradients are checked against central finite differences on the
//! full composed loss; head-variant equivalence is checked by stacking
//! parameters.

use keratitis_core::model::{
    Batch, DropoutMask, Inputs, LossSpec, Model, ModelConfig, NormState, RunMode, Targets,
    TrainLoss, TrunkKind, Variant,
};
use keratitis_core::rng::Rng;

fn random_feature_batch(rng: &mut Rng, n: usize, dim: usize, tasks: usize) -> Batch {
    let data: Vec<f64> = (0..n * dim).map(|_| rng.normal()).collect();
    let targets = match tasks {
        3 => Targets::Infections(
            (0..n)
                .map(|_| {
                    [
                        rng.bernoulli(0.6) as u8 as f64,
                        rng.bernoulli(0.4) as u8 as f64,
                        rng.bernoulli(0.3) as u8 as f64,
                    ]
                })
                .collect(),
        ),
        1 => Targets::Binary((0..n).map(|_| rng.bernoulli(0.5) as u8 as f64).collect()),
        4 => Targets::Age((0..n).map(|_| rng.below(4)).collect()),
        _ => unreachable!(),
    };
    Batch {
        inputs: Inputs::Features { n, dim, data },
        targets,
    }
}

fn random_image_batch(rng: &mut Rng, n: usize, size: usize, tasks: usize) -> Batch {
    let planar: Vec<f64> = (0..n * 3 * size * size).map(|_| rng.next_f64()).collect();
    let mut batch = random_feature_batch(rng, n, 1, tasks);
    batch.inputs = Inputs::Images { n, size, planar };
    batch
}

/// Central finite differences against the analytic gradient at `checks`
/// random coordinates; returns the worst relative error.
fn max_relative_error(
    model: &Model,
    params: &[f64],
    norm: &NormState,
    batch: &Batch,
    loss: &TrainLoss,
    mask: Option<&DropoutMask>,
    checks: usize,
    rng: &mut Rng,
) -> f64 {
    let (_, analytic) = model
        .loss_and_gradient(params, norm, batch, loss, mask, false)
        .expect("gradient");
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut p = params.to_vec();
    for _ in 0..checks {
        let i = rng.below(p.len());
        let saved = p[i];
        p[i] = saved + h;
        let up = model
            .loss(&p, norm, batch, loss, RunMode::Train { dropout: mask })
            .unwrap();
        p[i] = saved - h;
        let down = model
            .loss(&p, norm, batch, loss, RunMode::Train { dropout: mask })
            .unwrap();
        p[i] = saved;
        let fd = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(fd.abs()).max(1e-6);
        worst = worst.max((analytic[i] - fd).abs() / denom);
    }
    worst
}

#[test]
fn gradients_match_finite_differences_all_losses_and_heads() {
    let start = std::time::Instant::now();
    let mut rng = Rng::from_seed(2024);
    let dim = 12;

    // (variant, loss) pairs covering weighted BCE, clinical and CE on both
    // multitask head layouts plus the auxiliary heads
    let cases: Vec<(Variant, TrainLoss, usize)> = vec![
        (
            Variant::MultitaskV1,
            TrainLoss::weighted_bce(vec![2.0, 0.7, 1.3]),
            3,
        ),
        (
            Variant::MultitaskV2,
            TrainLoss::weighted_bce(vec![2.0, 0.7, 1.3]),
            3,
        ),
        (
            Variant::MultitaskV1,
            TrainLoss::clinical(
                LossSpec::new(vec![0.31, 3.2, 4.2], vec![0.13151, 0.59063, 0.27786]).unwrap(),
            ),
            3,
        ),
        (
            Variant::MultitaskV2,
            TrainLoss::clinical(
                LossSpec::new(vec![0.31, 3.2, 4.2], vec![0.13151, 0.59063, 0.27786]).unwrap(),
            ),
            3,
        ),
        (Variant::SexHead, TrainLoss::weighted_bce(vec![1.4]), 1),
        (
            Variant::AgeHead,
            TrainLoss::cross_entropy(vec![9.5, 0.7, 0.6, 1.1]),
            4,
        ),
    ];

    for (variant, loss, tasks) in cases {
        let config = ModelConfig {
            variant,
            trunk: TrunkKind::Linear { in_dim: dim },
            hidden: 10,
            dropout_p: 0.0,
            use_batchnorm: true,
        };
        let model = Model::new(config).unwrap();
        let params = model.init_params(7);
        let norm = model.init_norm();
        let batch = random_feature_batch(&mut rng, 16, dim, tasks);
        let worst = max_relative_error(&model, &params, &norm, &batch, &loss, None, 100, &mut rng);
        assert!(
            worst < 1e-4,
            "{}: worst relative error {worst}",
            variant.name()
        );
    }
    assert!(
        start.elapsed().as_secs_f64() < 10.0,
        "gradient oracle took {:?}",
        start.elapsed()
    );
}

#[test]
fn gradients_match_finite_differences_conv_trunk() {
    let mut rng = Rng::from_seed(55);
    let config = ModelConfig {
        variant: Variant::MultitaskV2,
        trunk: TrunkKind::TinyConv { image_size: 8 },
        hidden: 4,
        dropout_p: 0.0,
        use_batchnorm: true,
    };
    let model = Model::new(config).unwrap();
    let params = model.init_params(3);
    let norm = model.init_norm();
    let batch = random_image_batch(&mut rng, 5, 8, 3);
    let loss = TrainLoss::clinical(
        LossSpec::new(vec![0.5, 2.0, 1.0], vec![0.2, 0.5, 0.3]).unwrap(),
    );
    let worst = max_relative_error(&model, &params, &norm, &batch, &loss, None, 100, &mut rng);
    assert!(worst < 1e-4, "conv trunk worst relative error {worst}");
}

#[test]
fn gradients_respect_fixed_dropout_mask() {
    let mut rng = Rng::from_seed(91);
    let dim = 9;
    let config = ModelConfig {
        variant: Variant::MultitaskV2,
        trunk: TrunkKind::Linear { in_dim: dim },
        hidden: 8,
        dropout_p: 0.3,
        use_batchnorm: true,
    };
    let model = Model::new(config).unwrap();
    let params = model.init_params(1);
    let norm = model.init_norm();
    let batch = random_feature_batch(&mut rng, 12, dim, 3);
    let mask = DropoutMask::sample(&mut rng, 12, model.feature_len(), 0.3);
    let loss = TrainLoss::weighted_bce(vec![1.0, 1.0, 1.0]);
    let worst = max_relative_error(
        &model,
        &params,
        &norm,
        &batch,
        &loss,
        Some(&mask),
        100,
        &mut rng,
    );
    assert!(worst < 1e-4, "dropout-fixed worst relative error {worst}");
}

#[test]
fn gradient_zero_at_perfect_predictions() {
    // all-positive labels with a saturating positive head bias and zero
    // weights elsewhere: predictions are (clamped) perfect and no weight
    // decay applies, so every gradient entry is at epsilon scale
    let dim = 6;
    let config = ModelConfig {
        variant: Variant::MultitaskV2,
        trunk: TrunkKind::Linear { in_dim: dim },
        hidden: 5,
        dropout_p: 0.0,
        use_batchnorm: false,
    };
    let model = Model::new(config).unwrap();
    let mut params = vec![0.0; model.param_len()];
    let b_entry = model.layout().entry("head.b").unwrap().clone();
    for o in 0..3 {
        params[b_entry.offset + o] = 40.0;
    }
    let norm = model.init_norm();
    let batch = Batch {
        inputs: Inputs::Features {
            n: 4,
            dim,
            data: vec![0.3; 4 * dim],
        },
        targets: Targets::Infections(vec![[1.0, 1.0, 1.0]; 4]),
    };
    let loss = TrainLoss::weighted_bce(vec![1.0, 1.0, 1.0]);
    let (value, grads) = model
        .loss_and_gradient(&params, &norm, &batch, &loss, None, false)
        .unwrap();
    assert!(value < 1e-8);
    for g in grads {
        assert!(g.abs() < 1e-8, "gradient entry {g}");
    }
}

#[test]
fn frozen_trunk_gradient_entries_are_exactly_zero() {
    let mut rng = Rng::from_seed(8);
    let dim = 7;
    let config = ModelConfig {
        variant: Variant::MultitaskV1,
        trunk: TrunkKind::Linear { in_dim: dim },
        hidden: 6,
        dropout_p: 0.0,
        use_batchnorm: true,
    };
    let model = Model::new(config).unwrap();
    let params = model.init_params(2);
    let norm = model.init_norm();
    let batch = random_feature_batch(&mut rng, 10, dim, 3);
    let loss = TrainLoss::weighted_bce(vec![1.0, 1.0, 1.0]);
    let (_, grads) = model
        .loss_and_gradient(&params, &norm, &batch, &loss, None, true)
        .unwrap();
    assert!(grads[..model.trunk_len()].iter().all(|&g| g == 0.0));
    assert!(grads[model.trunk_len()..].iter().any(|&g| g != 0.0));
}

/// Copy shared trunk/norm parameters and stack the V2 three-neuron head into
/// V1's three single-neuron heads.
fn v1_params_from_v2(v1: &Model, v2: &Model, v2_params: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v1.param_len()];
    for entry in &v2.layout().entries {
        match entry.name {
            "head.w" => {
                let f = entry.shape[1];
                for (t, head) in ["head_bacteria.w", "head_fungi.w", "head_amoeba.w"]
                    .iter()
                    .enumerate()
                {
                    let dst = v1.layout().entry(head).unwrap();
                    out[dst.offset..dst.offset + f]
                        .copy_from_slice(&v2_params[entry.offset + t * f..entry.offset + (t + 1) * f]);
                }
            }
            "head.b" => {
                for (t, head) in ["head_bacteria.b", "head_fungi.b", "head_amoeba.b"]
                    .iter()
                    .enumerate()
                {
                    let dst = v1.layout().entry(head).unwrap();
                    out[dst.offset] = v2_params[entry.offset + t];
                }
            }
            name => {
                let dst = v1.layout().entry(name).unwrap();
                out[dst.offset..dst.offset + dst.len]
                    .copy_from_slice(&v2_params[entry.offset..entry.offset + entry.len]);
            }
        }
    }
    out
}

#[test]
fn v1_and_v2_agree_with_stacked_parameters() {
    let mut rng = Rng::from_seed(13);
    let dim = 10;
    let mk = |variant| {
        Model::new(ModelConfig {
            variant,
            trunk: TrunkKind::Linear { in_dim: dim },
            hidden: 9,
            dropout_p: 0.0,
            use_batchnorm: true,
        })
        .unwrap()
    };
    let v1 = mk(Variant::MultitaskV1);
    let v2 = mk(Variant::MultitaskV2);
    let norm = v2.init_norm();
    let loss = TrainLoss::clinical(
        LossSpec::new(vec![0.4, 2.0, 3.0], vec![0.13151, 0.59063, 0.27786]).unwrap(),
    );

    for round in 0..100 {
        let v2_params = v2.init_params(round);
        let v1_params = v1_params_from_v2(&v1, &v2, &v2_params);
        let batch = random_feature_batch(&mut rng, 8, dim, 3);
        let p1 = v1
            .forward(&v1_params, &norm, &batch.inputs, RunMode::Eval)
            .unwrap();
        let p2 = v2
            .forward(&v2_params, &norm, &batch.inputs, RunMode::Eval)
            .unwrap();
        for (a, b) in p1.probs.iter().zip(p2.probs.iter()) {
            assert!((a - b).abs() < 1e-12, "round {round}: {a} vs {b}");
        }
        let l1 = loss.compute(&p1.probs, &batch.targets).unwrap();
        let l2 = loss.compute(&p2.probs, &batch.targets).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
    }
}

#[test]
fn zero_parameters_give_half_scores() {
    let model = Model::new(ModelConfig {
        variant: Variant::MultitaskV2,
        trunk: TrunkKind::Linear { in_dim: 4 },
        hidden: 3,
        dropout_p: 0.0,
        use_batchnorm: true,
    })
    .unwrap();
    let params = vec![0.0; model.param_len()];
    let norm = model.init_norm();
    let inputs = Inputs::Features {
        n: 2,
        dim: 4,
        data: vec![0.7; 8],
    };
    let pass = model.forward(&params, &norm, &inputs, RunMode::Eval).unwrap();
    for p in pass.probs {
        assert_eq!(p, 0.5);
    }
}

#[test]
fn age_head_outputs_are_a_simplex() {
    let mut rng = Rng::from_seed(77);
    let model = Model::new(ModelConfig {
        variant: Variant::AgeHead,
        trunk: TrunkKind::Linear { in_dim: 6 },
        hidden: 5,
        dropout_p: 0.0,
        use_batchnorm: true,
    })
    .unwrap();
    for seed in 0..20 {
        let params = model.init_params(seed);
        let norm = model.init_norm();
        let batch = random_feature_batch(&mut rng, 7, 6, 4);
        let pass = model
            .forward(&params, &norm, &batch.inputs, RunMode::Eval)
            .unwrap();
        for row in pass.probs.chunks(4) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }
}

#[test]
fn shape_mismatch_is_an_error() {
    let model = Model::new(ModelConfig {
        variant: Variant::MultitaskV2,
        trunk: TrunkKind::Linear { in_dim: 4 },
        hidden: 3,
        dropout_p: 0.0,
        use_batchnorm: false,
    })
    .unwrap();
    let params = vec![0.0; model.param_len()];
    let norm = model.init_norm();
    let bad = Inputs::Features {
        n: 2,
        dim: 5,
        data: vec![0.0; 10],
    };
    assert!(model.forward(&params, &norm, &bad, RunMode::Eval).is_err());
    let images = Inputs::Images {
        n: 1,
        size: 8,
        planar: vec![0.0; 192],
    };
    assert!(model.forward(&params, &norm, &images, RunMode::Eval).is_err());
}
