//! Training loop with backbone freezing, early stopping and best-model
//! selection, plus batch assembly and prediction.

use alloc::format;
use alloc::vec::Vec;

use crate::data::{Case, DatasetManifest, PredictionRecord, SplitRole};
use crate::error::{Error, Result};
use crate::image::{augment, normalize_zscore, AugmentConfig};
use crate::model::adam::AdamState;
use crate::model::net::{
    Batch, DropoutMask, Inputs, Model, ModelConfig, NormState, RunMode, Targets, TrainLoss,
    TrunkKind, Variant,
};
use crate::rng::{stream, Rng};
use crate::split::FoldAssignment;

/// Optimization schedule.
///
/// The default learning rate suits the small randomly initialized trunks in
/// this crate; [`TrainConfig::paper_schedule`] restores the fine-tuning
/// values used with a large pretrained backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Trunk parameters stay at initialization through this many epochs.
    pub freeze_epochs: usize,
    /// Consecutive non-improving epochs tolerated before stopping.
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 16,
            learning_rate: 1e-3,
            weight_decay: 1e-8,
            freeze_epochs: 10,
            early_stop_patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Schedule for fine-tuning a pretrained backbone: learning rate 1e-6,
    /// weight decay 1e-8, 200 epochs.
    pub fn paper_schedule() -> Self {
        TrainConfig {
            learning_rate: 1e-6,
            ..TrainConfig::default()
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub frozen: bool,
}

/// Result of a training run: best-validation parameters and the log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: Vec<f64>,
    pub norm: NormState,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// A model bound to trained parameters and normalization state.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub model: Model,
    pub params: Vec<f64>,
    pub norm: NormState,
}

impl FittedModel {
    pub fn from_outcome(model: Model, outcome: TrainOutcome) -> Self {
        FittedModel {
            model,
            params: outcome.params,
            norm: outcome.norm,
        }
    }
}

fn target_of(variant: Variant, case: &Case) -> Result<TargetValue> {
    Ok(match variant {
        Variant::MultitaskV1 | Variant::MultitaskV2 => TargetValue::Infections(case.labels.as_targets()),
        Variant::SingleTask(task) => TargetValue::Binary(case.labels.get(task) as u8 as f64),
        Variant::SexHead => TargetValue::Binary(case.sex.as_u8() as f64),
        Variant::AgeHead => TargetValue::Age(case.age_bin.as_index()),
    })
}

enum TargetValue {
    Infections([f64; 3]),
    Binary(f64),
    Age(usize),
}

fn build_targets(variant: Variant, cases: &[&Case]) -> Result<Targets> {
    match variant {
        Variant::MultitaskV1 | Variant::MultitaskV2 => {
            let mut rows = Vec::with_capacity(cases.len());
            for c in cases {
                if let TargetValue::Infections(row) = target_of(variant, c)? {
                    rows.push(row);
                }
            }
            Ok(Targets::Infections(rows))
        }
        Variant::AgeHead => {
            let mut rows = Vec::with_capacity(cases.len());
            for c in cases {
                if let TargetValue::Age(v) = target_of(variant, c)? {
                    rows.push(v);
                }
            }
            Ok(Targets::Age(rows))
        }
        _ => {
            let mut rows = Vec::with_capacity(cases.len());
            for c in cases {
                if let TargetValue::Binary(v) = target_of(variant, c)? {
                    rows.push(v);
                }
            }
            Ok(Targets::Binary(rows))
        }
    }
}

/// Assemble model inputs from cases: feature rows as-is; images augmented
/// (training only), z-score normalized and laid out planar.
fn assemble_inputs(
    trunk: &TrunkKind,
    cases: &[&Case],
    aug: Option<&AugmentConfig>,
    mut rng: Option<&mut Rng>,
) -> Result<Inputs> {
    match trunk {
        TrunkKind::Linear { in_dim } => {
            let mut data = Vec::with_capacity(cases.len() * in_dim);
            for case in cases {
                let feats = case.payload.features().ok_or_else(|| {
                    Error::UnsupportedMode(format!(
                        "case `{}` has an image payload but the trunk expects features",
                        case.case_id
                    ))
                })?;
                if feats.len() != *in_dim {
                    return Err(Error::ShapeMismatch(format!(
                        "case `{}` has {} features, trunk expects {in_dim}",
                        case.case_id,
                        feats.len()
                    )));
                }
                data.extend_from_slice(feats);
            }
            Ok(Inputs::Features {
                n: cases.len(),
                dim: *in_dim,
                data,
            })
        }
        TrunkKind::TinyConv { image_size } => {
            let s = *image_size;
            let mut planar = Vec::with_capacity(cases.len() * 3 * s * s);
            for case in cases {
                let img = case.payload.image().ok_or_else(|| {
                    Error::UnsupportedMode(format!(
                        "case `{}` has a feature payload but the trunk expects images",
                        case.case_id
                    ))
                })?;
                if img.height() != s || img.width() != s {
                    return Err(Error::ShapeMismatch(format!(
                        "case `{}` is {}x{}, trunk expects {s}x{s}",
                        case.case_id,
                        img.height(),
                        img.width()
                    )));
                }
                let prepared = match (aug, rng.as_deref_mut()) {
                    (Some(cfg), Some(r)) => normalize_zscore(&augment(img, r, cfg)),
                    _ => normalize_zscore(img),
                };
                for c in 0..3 {
                    for y in 0..s {
                        for x in 0..s {
                            planar.push(prepared.get(y, x, c));
                        }
                    }
                }
            }
            Ok(Inputs::Images {
                n: cases.len(),
                size: s,
                planar,
            })
        }
    }
}

/// Train one model for one evaluation round.
///
/// Mini-batches run over the round's train role (with augmentation in image
/// mode); the trunk stays frozen for the first `freeze_epochs` epochs; after
/// each epoch the validation loss is computed in inference mode and the
/// best-validation parameters are retained. Training stops early after
/// `early_stop_patience` consecutive epochs without improvement. Fully
/// deterministic under the config seed.
pub fn train(
    manifest: &DatasetManifest,
    assignment: &FoldAssignment,
    round: usize,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    loss: &TrainLoss,
    augment_config: Option<&AugmentConfig>,
) -> Result<TrainOutcome> {
    if round >= assignment.k {
        return Err(Error::Argument(format!(
            "round {round} out of range for k = {}",
            assignment.k
        )));
    }
    let mut train_cases: Vec<&Case> = Vec::new();
    let mut val_cases: Vec<&Case> = Vec::new();
    for case in &manifest.cases {
        match assignment.role_of(round, &case.group_id) {
            Some(SplitRole::Train) => train_cases.push(case),
            Some(SplitRole::Validation) => val_cases.push(case),
            Some(SplitRole::Test) => {}
            None => {
                return Err(Error::Manifest(format!(
                    "group `{}` is not covered by the fold assignment",
                    case.group_id
                )))
            }
        }
    }
    if train_cases.is_empty() {
        return Err(Error::EmptySplit(format!("round {round} has no training cases")));
    }
    if val_cases.is_empty() {
        return Err(Error::EmptySplit(format!("round {round} has no validation cases")));
    }

    let model = Model::new(model_config.clone())?;
    let mut params = model.init_params(train_config.seed);
    let mut norm = model.init_norm();
    let mut adam = AdamState::new(model.param_len());

    let mut loop_rng = Rng::with_stream(train_config.seed, &[stream::TRAIN]);
    let mut aug_rng = Rng::with_stream(train_config.seed, &[stream::AUGMENT]);

    let image_mode = matches!(model_config.trunk, TrunkKind::TinyConv { .. });
    let aug = if image_mode { augment_config } else { None };

    // validation batch is fixed across epochs (no augmentation)
    let val_batch = Batch {
        inputs: assemble_inputs(&model_config.trunk, &val_cases, None, None)?,
        targets: build_targets(model_config.variant, &val_cases)?,
    };

    let mut log = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_params = params.clone();
    let mut best_norm = norm.clone();
    let mut bad_epochs = 0usize;
    let mut stopped_early = false;

    let mut order: Vec<usize> = (0..train_cases.len()).collect();
    for epoch in 1..=train_config.epochs {
        let frozen = epoch <= train_config.freeze_epochs;
        loop_rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        for chunk in order.chunks(train_config.batch_size) {
            let batch_cases: Vec<&Case> = chunk.iter().map(|&i| train_cases[i]).collect();
            let inputs = assemble_inputs(
                &model_config.trunk,
                &batch_cases,
                aug,
                if aug.is_some() { Some(&mut aug_rng) } else { None },
            )?;
            let targets = build_targets(model_config.variant, &batch_cases)?;
            let batch = Batch { inputs, targets };

            let mask = if model_config.dropout_p > 0.0 {
                Some(DropoutMask::sample(
                    &mut loop_rng,
                    batch_cases.len(),
                    model.feature_len(),
                    model_config.dropout_p,
                ))
            } else {
                None
            };

            let (batch_loss, grads, batch_stats) =
                model.loss_gradient_stats(&params, &norm, &batch, loss, mask.as_ref(), frozen)?;
            if let Some((mean, _, unbiased)) = &batch_stats {
                norm.update(mean, unbiased.as_deref());
            }
            let active = if frozen {
                model.trunk_len()..model.param_len()
            } else {
                0..model.param_len()
            };
            adam.apply_range(
                &mut params,
                &grads,
                train_config.learning_rate,
                train_config.weight_decay,
                active,
            );
            loss_sum += batch_loss * batch_cases.len() as f64;
        }
        let train_loss = loss_sum / train_cases.len() as f64;
        let val_loss = model.loss(&params, &norm, &val_batch, loss, RunMode::Eval)?;
        log.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            frozen,
        });

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_params.copy_from_slice(&params);
            best_norm = norm.clone();
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > train_config.early_stop_patience {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        params: best_params,
        norm: best_norm,
        log,
        best_epoch,
        best_val_loss: best_val,
        stopped_early,
    })
}

/// Source of the three infection scores at prediction time.
pub enum InfectionPredictor<'a> {
    /// One multitask model (V1 or V2).
    Multitask(&'a FittedModel),
    /// Three single-task models in (bacteria, fungi, amoeba) order.
    SingleTrio(&'a [FittedModel; 3]),
}

impl InfectionPredictor<'_> {
    fn validate(&self) -> Result<()> {
        match self {
            InfectionPredictor::Multitask(m) => match m.model.config().variant {
                Variant::MultitaskV1 | Variant::MultitaskV2 => Ok(()),
                v => Err(Error::Argument(format!(
                    "multitask predictor needs Mv1/Mv2, got {}",
                    v.name()
                ))),
            },
            InfectionPredictor::SingleTrio(models) => {
                for (i, fitted) in models.iter().enumerate() {
                    match fitted.model.config().variant {
                        Variant::SingleTask(task) if task.index() == i => {}
                        v => {
                            return Err(Error::Argument(format!(
                                "trio slot {i} needs the matching single-task model, got {}",
                                v.name()
                            )))
                        }
                    }
                }
                Ok(())
            }
        }
    }
}

fn eval_probs(fitted: &FittedModel, cases: &[&Case]) -> Result<Vec<f64>> {
    let inputs = assemble_inputs(&fitted.model.config().trunk, cases, None, None)?;
    let pass = fitted
        .model
        .forward(&fitted.params, &fitted.norm, &inputs, RunMode::Eval)?;
    Ok(pass.probs)
}

/// Inference over the cases of one round: one record per case whose role is
/// in `roles`. Deterministic; no dropout; running batch-norm statistics.
pub fn predict(
    infections: &InfectionPredictor<'_>,
    sex_model: Option<&FittedModel>,
    age_model: Option<&FittedModel>,
    manifest: &DatasetManifest,
    assignment: &FoldAssignment,
    round: usize,
    roles: &[SplitRole],
) -> Result<Vec<PredictionRecord>> {
    infections.validate()?;
    if let Some(m) = sex_model {
        if m.model.config().variant != Variant::SexHead {
            return Err(Error::Argument("sex model must use the sex head".into()));
        }
    }
    if let Some(m) = age_model {
        if m.model.config().variant != Variant::AgeHead {
            return Err(Error::Argument("age model must use the age head".into()));
        }
    }

    let mut selected: Vec<(&Case, SplitRole)> = Vec::new();
    for case in &manifest.cases {
        if let Some(role) = assignment.role_of(round, &case.group_id) {
            if roles.contains(&role) {
                selected.push((case, role));
            }
        }
    }
    if selected.is_empty() {
        return Ok(Vec::new());
    }
    let cases: Vec<&Case> = selected.iter().map(|(c, _)| *c).collect();

    let infection_scores: Vec<[f64; 3]> = match infections {
        InfectionPredictor::Multitask(fitted) => {
            let probs = eval_probs(fitted, &cases)?;
            probs.chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
        }
        InfectionPredictor::SingleTrio(models) => {
            let mut cols = Vec::with_capacity(3);
            for fitted in models.iter() {
                cols.push(eval_probs(fitted, &cases)?);
            }
            (0..cases.len())
                .map(|i| [cols[0][i], cols[1][i], cols[2][i]])
                .collect()
        }
    };
    let sex_scores = match sex_model {
        Some(fitted) => Some(eval_probs(fitted, &cases)?),
        None => None,
    };
    let age_probs = match age_model {
        Some(fitted) => Some(eval_probs(fitted, &cases)?),
        None => None,
    };

    let mut records = Vec::with_capacity(cases.len());
    for (i, (case, role)) in selected.iter().enumerate() {
        let record = PredictionRecord {
            case_id: case.case_id.clone(),
            fold: round,
            role: *role,
            scores: infection_scores[i],
            score_sex: sex_scores.as_ref().map(|s| s[i]),
            probs_age: age_probs
                .as_ref()
                .map(|p| [p[i * 4], p[i * 4 + 1], p[i * 4 + 2], p[i * 4 + 3]]),
        };
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}
