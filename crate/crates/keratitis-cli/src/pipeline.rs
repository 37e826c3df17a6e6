//! Pipeline stages: synth -> split -> train -> predict -> eval -> stats ->
//! report. Each stage reads its upstream artifacts from the work directory,
//! writes its own outputs, and fails with a dependency error when something
//! upstream is missing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use keratitis_core::data::{
    Case, DatasetManifest, InfectionTask, Payload, PredictionRecord, SplitRole,
};
use keratitis_core::eval::{
    aggregate_folds, apply_thresholds, joint_confusion, mean_confusion, mean_joint_confusion,
    metrics_bundle_binary, metrics_bundle_multiclass, roc_curve, youden_threshold, Confusion2,
    FoldAggregate, JointConfusion, MetricsBundle, RocCurve,
};
use keratitis_core::image::prepare_image;
use keratitis_core::model::{
    age_class_weights, class_weights, predict, train, FittedModel, InfectionPredictor, Model,
    ModelConfig, TrainLoss, TrunkKind, Variant,
};
use keratitis_core::rng::{stream, Rng};
use keratitis_core::split::{assign_folds, verify_no_leakage, FoldAssignment};
use keratitis_core::stats::{subgroup_analysis, MetricKind, SubgroupAnalysis};
use keratitis_core::synth::{generate, inject_confound};

use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::config::{DataSource, RunConfig};
use crate::error::{CliError, Result};
use crate::formats::{
    fmt_f64, read_assignment, read_manifest, read_predictions, read_thresholds,
    write_assignment, write_manifest, write_predictions, write_roc, write_thresholds,
    write_train_log,
};
use crate::report;

/// Work directory with the pipeline's fixed artifact layout.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_csv(&self) -> PathBuf {
        self.root.join("manifest.csv")
    }

    pub fn assignment_csv(&self) -> PathBuf {
        self.root.join("assignment.csv")
    }

    pub fn checkpoint(&self, round: usize, slot: &str) -> PathBuf {
        if slot.is_empty() {
            self.root.join(format!("models/round{round}.ckpt"))
        } else {
            self.root.join(format!("models/round{round}_{slot}.ckpt"))
        }
    }

    pub fn train_log(&self, round: usize, slot: &str) -> PathBuf {
        if slot.is_empty() {
            self.root.join(format!("logs/train_round{round}.csv"))
        } else {
            self.root.join(format!("logs/train_round{round}_{slot}.csv"))
        }
    }

    pub fn predictions_csv(&self) -> PathBuf {
        self.root.join("predictions.csv")
    }

    pub fn thresholds_csv(&self) -> PathBuf {
        self.root.join("eval/thresholds.csv")
    }

    pub fn metrics_csv(&self) -> PathBuf {
        self.root.join("eval/metrics.csv")
    }

    pub fn metrics_folds_csv(&self) -> PathBuf {
        self.root.join("eval/metrics_folds.csv")
    }

    pub fn confusion_tasks_csv(&self) -> PathBuf {
        self.root.join("eval/confusion_tasks.csv")
    }

    pub fn confusion_joint_csv(&self) -> PathBuf {
        self.root.join("eval/confusion_joint.csv")
    }

    pub fn roc_csv(&self) -> PathBuf {
        self.root.join("eval/roc.csv")
    }

    pub fn stats_csv(&self) -> PathBuf {
        self.root.join("stats/stats.csv")
    }

    pub fn report_txt(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    fn require(&self, stage: &'static str, path: PathBuf) -> Result<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(CliError::Dependency {
                stage,
                missing: path,
            })
        }
    }
}

/// Location of the manifest for this run: synthesized into the workdir, or
/// the externally supplied file.
pub fn manifest_path(config: &RunConfig, ws: &Workspace) -> PathBuf {
    match &config.data {
        DataSource::Synthetic(_) => ws.manifest_csv(),
        DataSource::Manifest(path) => path.clone(),
    }
}

/// Read the run's manifest, resizing image payloads to the configured side
/// length.
fn load_manifest(config: &RunConfig, ws: &Workspace, stage: &'static str) -> Result<DatasetManifest> {
    let path = ws.require(stage, manifest_path(config, ws))?;
    let mut manifest = read_manifest(&path)?;
    let target = config.model.image_size;
    let needs_resize = manifest
        .cases
        .iter()
        .any(|c| matches!(&c.payload, Payload::Image(img) if img.height() != target || img.width() != target));
    if needs_resize {
        for case in manifest.cases.iter_mut() {
            if let Payload::Image(img) = &case.payload {
                case.payload = Payload::Image(prepare_image(img, target)?);
            }
        }
        manifest.meta.image_size = Some(target);
    }
    Ok(manifest)
}

/// Generate the synthetic manifest, apply injected confounds and mirrored
/// expansion, and write it into the workdir.
pub fn stage_synth(config: &RunConfig, ws: &Workspace) -> Result<()> {
    let section = match &config.data {
        DataSource::Synthetic(section) => section,
        DataSource::Manifest(path) => {
            return Err(CliError::Validation(format!(
                "data source is the external manifest `{}`; nothing to synthesize",
                path.display()
            )))
        }
    };
    let synth_config = config.synth_config()?.expect("synthetic source");
    let mut manifest = generate(&synth_config)?;
    for section_confound in &section.inject {
        let confound = section_confound.resolve()?;
        manifest = inject_confound(
            &manifest,
            confound.attribute,
            confound.task,
            confound.strength,
            config.seed,
        )?;
    }
    if section.mirror {
        manifest = manifest.mirror_expand()?;
    }
    write_manifest(&manifest, &ws.manifest_csv())
}

/// Assign folds and verify the leakage invariants.
pub fn stage_split(config: &RunConfig, ws: &Workspace) -> Result<()> {
    let manifest = load_manifest(config, ws, "split")?;
    let assignment = assign_folds(&manifest, &config.split_config())?;
    let report = verify_no_leakage(&manifest, &assignment);
    if !report.is_clean() {
        return Err(CliError::Validation(format!(
            "fold assignment failed leakage verification: {}",
            report.violations[0]
        )));
    }
    write_assignment(&assignment, &ws.assignment_csv())
}

fn load_assignment(config: &RunConfig, ws: &Workspace, stage: &'static str) -> Result<FoldAssignment> {
    let path = ws.require(stage, ws.assignment_csv())?;
    read_assignment(&path, config.split.k)
}

fn trunk_for(config: &RunConfig, manifest: &DatasetManifest) -> Result<TrunkKind> {
    match manifest.cases.first().map(|c| &c.payload) {
        Some(Payload::Features(v)) => Ok(TrunkKind::Linear { in_dim: v.len() }),
        Some(Payload::Image(_)) => Ok(TrunkKind::TinyConv {
            image_size: config.model.image_size,
        }),
        None => Err(CliError::Validation("manifest is empty".into())),
    }
}

fn model_config_for(config: &RunConfig, variant: Variant, trunk: TrunkKind) -> ModelConfig {
    ModelConfig {
        variant,
        trunk,
        hidden: config.model.hidden,
        dropout_p: config.model.dropout,
        use_batchnorm: config.model.batchnorm,
    }
}

/// Slot suffix of a variant's checkpoint and log files.
fn slot_of(variant: Variant) -> &'static str {
    match variant {
        Variant::MultitaskV1 | Variant::MultitaskV2 => "",
        Variant::SingleTask(task) => task.name(),
        Variant::SexHead => "sex",
        Variant::AgeHead => "age",
    }
}

fn train_seed(base: u64, round: usize, slot: usize) -> u64 {
    Rng::with_stream(base, &[stream::TRAIN, round as u64, slot as u64]).next_u64()
}

fn resolve_rounds(config: &RunConfig, rounds: Option<&[usize]>) -> Result<Vec<usize>> {
    let k = config.split.k;
    match rounds {
        None => Ok((0..k).collect()),
        Some(list) => {
            for &r in list {
                if r >= k {
                    return Err(CliError::Validation(format!(
                        "round {r} out of range for k = {k}"
                    )));
                }
            }
            Ok(list.to_vec())
        }
    }
}

fn build_train_loss(config: &RunConfig, variant: Variant, cw3: &[f64; 3]) -> Result<TrainLoss> {
    match variant {
        Variant::MultitaskV1 | Variant::MultitaskV2 => {
            if config.loss.clinical {
                Ok(TrainLoss::clinical(config.loss_spec(cw3.to_vec())?))
            } else {
                Ok(TrainLoss::weighted_bce(cw3.to_vec()))
            }
        }
        Variant::SingleTask(task) => {
            if config.loss.clinical {
                return Err(CliError::Validation(
                    "the clinical loss applies to the multitask variants (Mv1/Mv2), not ST"
                        .into(),
                ));
            }
            Ok(TrainLoss::weighted_bce(vec![cw3[task.index()]]))
        }
        Variant::SexHead => Ok(TrainLoss::weighted_bce(vec![1.0])),
        Variant::AgeHead => Err(CliError::Validation(
            "age model loss is created in stage_train".into(),
        )),
    }
}

/// Train the configured models for the given rounds (all rounds by default).
pub fn stage_train(config: &RunConfig, ws: &Workspace, rounds: Option<&[usize]>) -> Result<()> {
    let manifest = load_manifest(config, ws, "train")?;
    let assignment = load_assignment(config, ws, "train")?;
    let trunk = trunk_for(config, &manifest)?;
    let cw3 = class_weights(&manifest)?;
    let rounds = resolve_rounds(config, rounds)?;
    let augment = config.augment_config();

    let mut jobs: Vec<(Variant, usize)> = config
        .infection_variants()?
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, i))
        .collect();
    if config.model.aux_sex {
        jobs.push((Variant::SexHead, 10));
    }
    if config.model.aux_age {
        jobs.push((Variant::AgeHead, 11));
    }

    for &round in &rounds {
        for &(variant, slot_index) in &jobs {
            let model_config = model_config_for(config, variant, trunk);
            let loss = match variant {
                Variant::AgeHead => {
                    TrainLoss::cross_entropy(age_class_weights(&manifest)?.to_vec())
                }
                v => build_train_loss(config, v, &cw3)?,
            };
            let train_config = config.train_config(train_seed(config.seed, round, slot_index));
            crate::log::info(&format!(
                "training round {round} variant {}",
                variant.name()
            ));
            let outcome = train(
                &manifest,
                &assignment,
                round,
                &model_config,
                &train_config,
                &loss,
                Some(&augment),
            )?;
            let slot = slot_of(variant);
            write_train_log(&outcome.log, &ws.train_log(round, slot))?;
            write_checkpoint(
                &model_config,
                &outcome.params,
                &outcome.norm,
                &ws.checkpoint(round, slot),
            )?;
        }
    }
    Ok(())
}

fn load_fitted(ws: &Workspace, stage: &'static str, round: usize, slot: &str) -> Result<FittedModel> {
    let path = ws.require(stage, ws.checkpoint(round, slot))?;
    let (config, params, norm) = read_checkpoint(&path)?;
    Ok(FittedModel {
        model: Model::new(config).map_err(CliError::from)?,
        params,
        norm,
    })
}

/// Run inference for the given rounds and write one predictions file with
/// validation- and test-role records.
pub fn stage_predict(config: &RunConfig, ws: &Workspace, rounds: Option<&[usize]>) -> Result<()> {
    let manifest = load_manifest(config, ws, "predict")?;
    let assignment = load_assignment(config, ws, "predict")?;
    let rounds = resolve_rounds(config, rounds)?;
    let variants = config.infection_variants()?;

    let mut records: Vec<PredictionRecord> = Vec::new();
    for &round in &rounds {
        let sex_model = if config.model.aux_sex {
            Some(load_fitted(ws, "predict", round, "sex")?)
        } else {
            None
        };
        let age_model = if config.model.aux_age {
            Some(load_fitted(ws, "predict", round, "age")?)
        } else {
            None
        };
        let roles = [SplitRole::Validation, SplitRole::Test];
        let round_records = if variants.len() == 3 {
            let trio = [
                load_fitted(ws, "predict", round, "bacteria")?,
                load_fitted(ws, "predict", round, "fungi")?,
                load_fitted(ws, "predict", round, "amoeba")?,
            ];
            predict(
                &InfectionPredictor::SingleTrio(&trio),
                sex_model.as_ref(),
                age_model.as_ref(),
                &manifest,
                &assignment,
                round,
                &roles,
            )?
        } else {
            let fitted = load_fitted(ws, "predict", round, "")?;
            predict(
                &InfectionPredictor::Multitask(&fitted),
                sex_model.as_ref(),
                age_model.as_ref(),
                &manifest,
                &assignment,
                round,
                &roles,
            )?
        };
        records.extend(round_records);
    }
    records.sort_by(|a, b| (a.fold, &a.case_id).cmp(&(b.fold, &b.case_id)));
    write_predictions(&records, &ws.predictions_csv())
}

/// Everything the evaluation stage computes, kept for the report.
pub struct EvalOutputs {
    pub rounds: Vec<usize>,
    pub thresholds: BTreeMap<usize, [f64; 3]>,
    pub infection_bundles: [Vec<MetricsBundle>; 3],
    pub infection_aggregates: [FoldAggregate; 3],
    pub sex_aggregate: Option<FoldAggregate>,
    pub age_aggregate: Option<FoldAggregate>,
    pub mean_task_confusions: [[[f64; 2]; 2]; 3],
    pub mean_joint: [[f64; 8]; 8],
}

fn records_by_round(
    records: &[PredictionRecord],
    role: SplitRole,
) -> BTreeMap<usize, Vec<&PredictionRecord>> {
    let mut out: BTreeMap<usize, Vec<&PredictionRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.role == role) {
        out.entry(r.fold).or_default().push(r);
    }
    out
}

/// Compute per-round thresholds (fixed or Youden on the validation split)
/// and the full metric/confusion suite on the test split.
pub fn evaluate(
    config: &RunConfig,
    manifest: &DatasetManifest,
    records: &[PredictionRecord],
) -> Result<EvalOutputs> {
    let adaptive = config.adaptive_thresholds()?;
    let case_of: BTreeMap<&str, &Case> = manifest
        .cases
        .iter()
        .map(|c| (c.case_id.as_str(), c))
        .collect();
    for record in records {
        if !case_of.contains_key(record.case_id.as_str()) {
            return Err(CliError::Validation(format!(
                "prediction for unknown case `{}`",
                record.case_id
            )));
        }
    }

    let test_rounds = records_by_round(records, SplitRole::Test);
    if test_rounds.is_empty() {
        return Err(CliError::Validation(
            "no test-role predictions to evaluate".into(),
        ));
    }
    let val_rounds = records_by_round(records, SplitRole::Validation);
    let rounds: Vec<usize> = test_rounds.keys().copied().collect();

    // thresholds per round
    let mut thresholds: BTreeMap<usize, [f64; 3]> = BTreeMap::new();
    for &round in &rounds {
        let mut t = [config.threshold.value; 3];
        if adaptive {
            let val = val_rounds.get(&round).ok_or_else(|| {
                CliError::Validation(format!(
                    "adaptive thresholds need validation-role predictions for round {round}"
                ))
            })?;
            for task in InfectionTask::ALL {
                let scores: Vec<f64> = val.iter().map(|r| r.scores[task.index()]).collect();
                let labels: Vec<bool> = val
                    .iter()
                    .map(|r| case_of[r.case_id.as_str()].labels.get(task))
                    .collect();
                // single-class validation folds keep the fixed default
                if let Ok(curve) = roc_curve(&scores, &labels) {
                    t[task.index()] = youden_threshold(&curve).0;
                }
            }
        }
        thresholds.insert(round, t);
    }

    // per-round metrics and confusions
    let mut infection_bundles: [Vec<MetricsBundle>; 3] = Default::default();
    let mut sex_bundles: Vec<MetricsBundle> = Vec::new();
    let mut age_bundles: Vec<MetricsBundle> = Vec::new();
    let mut task_confusions: [Vec<Confusion2>; 3] = Default::default();
    let mut joints: Vec<JointConfusion> = Vec::new();
    let mut have_sex = true;
    let mut have_age = true;

    for &round in &rounds {
        let test = &test_rounds[&round];
        let owned: Vec<PredictionRecord> = test.iter().map(|&r| r.clone()).collect();
        let predicted = apply_thresholds(&owned, &thresholds[&round]);
        let truth: Vec<_> = test
            .iter()
            .map(|r| case_of[r.case_id.as_str()].labels)
            .collect();
        joints.push(joint_confusion(&predicted, &truth)?);
        for task in InfectionTask::ALL {
            let pred: Vec<bool> = predicted.iter().map(|p| p.get(task)).collect();
            let labels: Vec<bool> = truth.iter().map(|t| t.get(task)).collect();
            let scores: Vec<f64> = test.iter().map(|r| r.scores[task.index()]).collect();
            infection_bundles[task.index()]
                .push(metrics_bundle_binary(&pred, &labels, Some(&scores))?);
            task_confusions[task.index()]
                .push(keratitis_core::eval::confusion(&pred, &labels)?);
        }

        if test.iter().all(|r| r.score_sex.is_some()) {
            let scores: Vec<f64> = test.iter().map(|r| r.score_sex.unwrap()).collect();
            let pred: Vec<bool> = scores.iter().map(|&s| s >= 0.5).collect();
            let labels: Vec<bool> = test
                .iter()
                .map(|r| case_of[r.case_id.as_str()].sex.as_u8() == 1)
                .collect();
            sex_bundles.push(metrics_bundle_binary(&pred, &labels, Some(&scores))?);
        } else {
            have_sex = false;
        }
        if test.iter().all(|r| r.probs_age.is_some()) {
            let probs: Vec<f64> = test.iter().flat_map(|r| r.probs_age.unwrap()).collect();
            let pred: Vec<usize> = test
                .iter()
                .map(|r| {
                    let p = r.probs_age.unwrap();
                    (0..4).max_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap()).unwrap()
                })
                .collect();
            let labels: Vec<usize> = test
                .iter()
                .map(|r| case_of[r.case_id.as_str()].age_bin.as_index())
                .collect();
            age_bundles.push(metrics_bundle_multiclass(&pred, &labels, Some(&probs), 4)?);
        } else {
            have_age = false;
        }
    }

    let infection_aggregates = [
        aggregate_folds(&infection_bundles[0])?,
        aggregate_folds(&infection_bundles[1])?,
        aggregate_folds(&infection_bundles[2])?,
    ];
    let sex_aggregate = if have_sex && sex_bundles.len() >= 2 {
        Some(aggregate_folds(&sex_bundles)?)
    } else {
        None
    };
    let age_aggregate = if have_age && age_bundles.len() >= 2 {
        Some(aggregate_folds(&age_bundles)?)
    } else {
        None
    };

    Ok(EvalOutputs {
        rounds,
        thresholds,
        infection_aggregates,
        infection_bundles,
        sex_aggregate,
        age_aggregate,
        mean_task_confusions: [
            mean_confusion(&task_confusions[0]),
            mean_confusion(&task_confusions[1]),
            mean_confusion(&task_confusions[2]),
        ],
        mean_joint: mean_joint_confusion(&joints),
    })
}

fn aggregate_rows(task: &str, agg: &FoldAggregate, out: &mut String) {
    let mut push = |metric: &str, value: &Option<keratitis_core::eval::MetricAggregate>| {
        if let Some(a) = value {
            let sd = a.sd.map(fmt_f64).unwrap_or_else(|| "-".into());
            let lo = a.ci_low.map(fmt_f64).unwrap_or_else(|| "-".into());
            let hi = a.ci_high.map(fmt_f64).unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "{task},{metric},{},{sd},{lo},{hi},{},{}\n",
                fmt_f64(a.mean),
                a.included,
                a.excluded
            ));
        } else {
            out.push_str(&format!("{task},{metric},-,-,-,-,0,0\n"));
        }
    };
    push("acc", &agg.acc);
    push("balanced_acc", &agg.balanced_acc);
    push("f1", &agg.f1);
    push("precision", &agg.precision);
    push("recall", &agg.recall);
    push("auroc", &agg.auroc);
    push("mae", &agg.mae);
}

/// Evaluate predictions and write the metric, threshold, confusion and ROC
/// exports.
pub fn stage_eval(config: &RunConfig, ws: &Workspace) -> Result<()> {
    let manifest = load_manifest(config, ws, "eval")?;
    let predictions_path = ws.require("eval", ws.predictions_csv())?;
    let records = read_predictions(&predictions_path)?;
    let outputs = evaluate(config, &manifest, &records)?;

    write_thresholds(&outputs.thresholds, &ws.thresholds_csv())?;

    // aggregated metrics
    let mut metrics = String::from("task,metric,mean,sd,ci_low,ci_high,included,excluded\n");
    for task in InfectionTask::ALL {
        aggregate_rows(task.name(), &outputs.infection_aggregates[task.index()], &mut metrics);
    }
    if let Some(agg) = &outputs.sex_aggregate {
        aggregate_rows("sex", agg, &mut metrics);
    }
    if let Some(agg) = &outputs.age_aggregate {
        aggregate_rows("age", agg, &mut metrics);
    }
    std::fs::create_dir_all(ws.metrics_csv().parent().unwrap())
        .map_err(|e| CliError::io(ws.metrics_csv().parent().unwrap(), e))?;
    std::fs::write(ws.metrics_csv(), &metrics).map_err(|e| CliError::io(ws.metrics_csv(), e))?;

    // per-fold metrics
    let mut folds = String::from("round,task,metric,value\n");
    for task in InfectionTask::ALL {
        for (i, bundle) in outputs.infection_bundles[task.index()].iter().enumerate() {
            let round = outputs.rounds[i];
            for metric in MetricKind::ALL {
                let value = metric
                    .extract(bundle)
                    .map(fmt_f64)
                    .unwrap_or_else(|| "-".into());
                folds.push_str(&format!("{round},{},{},{value}\n", task.name(), metric.name()));
            }
        }
    }
    std::fs::write(ws.metrics_folds_csv(), &folds)
        .map_err(|e| CliError::io(ws.metrics_folds_csv(), e))?;

    // mean confusion matrices
    let mut tasks_cf = String::from("task,actual,predicted,mean_count\n");
    for task in InfectionTask::ALL {
        let cf = outputs.mean_task_confusions[task.index()];
        for (ai, actual) in ["negative", "positive"].iter().enumerate() {
            for (pi, predicted) in ["negative", "positive"].iter().enumerate() {
                tasks_cf.push_str(&format!(
                    "{},{actual},{predicted},{}\n",
                    task.name(),
                    fmt_f64(cf[ai][pi])
                ));
            }
        }
    }
    std::fs::write(ws.confusion_tasks_csv(), &tasks_cf)
        .map_err(|e| CliError::io(ws.confusion_tasks_csv(), e))?;

    let names = ["H", "B", "F", "A", "BF", "FA", "BA", "BFA"];
    let mut joint = String::from("label_pred");
    for n in names {
        joint.push(',');
        joint.push_str(n);
    }
    joint.push('\n');
    for (i, row) in outputs.mean_joint.iter().enumerate() {
        joint.push_str(names[i]);
        for v in row {
            joint.push(',');
            joint.push_str(&fmt_f64(*v));
        }
        joint.push('\n');
    }
    std::fs::write(ws.confusion_joint_csv(), &joint)
        .map_err(|e| CliError::io(ws.confusion_joint_csv(), e))?;

    // pooled out-of-fold ROC curves
    let case_of: BTreeMap<&str, &Case> = manifest
        .cases
        .iter()
        .map(|c| (c.case_id.as_str(), c))
        .collect();
    let test: Vec<&PredictionRecord> = records
        .iter()
        .filter(|r| r.role == SplitRole::Test)
        .collect();
    let mut curves: BTreeMap<String, RocCurve> = BTreeMap::new();
    for task in InfectionTask::ALL {
        let scores: Vec<f64> = test.iter().map(|r| r.scores[task.index()]).collect();
        let labels: Vec<bool> = test
            .iter()
            .map(|r| case_of[r.case_id.as_str()].labels.get(task))
            .collect();
        if let Ok(curve) = roc_curve(&scores, &labels) {
            curves.insert(task.name().to_string(), curve);
        }
    }
    if test.iter().all(|r| r.score_sex.is_some()) && !test.is_empty() {
        let scores: Vec<f64> = test.iter().map(|r| r.score_sex.unwrap()).collect();
        let labels: Vec<bool> = test
            .iter()
            .map(|r| case_of[r.case_id.as_str()].sex.as_u8() == 1)
            .collect();
        if let Ok(curve) = roc_curve(&scores, &labels) {
            curves.insert("sex".to_string(), curve);
        }
    }
    write_roc(&curves, &ws.roc_csv())
}

/// Run the demographic subgroup analyses and write the flat statistics
/// export.
pub fn stage_stats(config: &RunConfig, ws: &Workspace) -> Result<()> {
    let manifest = load_manifest(config, ws, "stats")?;
    let predictions_path = ws.require("stats", ws.predictions_csv())?;
    let records = read_predictions(&predictions_path)?;
    let assignment = load_assignment(config, ws, "stats")?;
    let thresholds_path = ws.require("stats", ws.thresholds_csv())?;
    let thresholds = read_thresholds(&thresholds_path)?;
    let flavor = config.t_test_flavor()?;

    let mut out =
        String::from("attribute,task,metric,statistic,df,p_raw,p_corrected,excluded_folds\n");
    for attribute in config.stats_attributes()? {
        let analysis = subgroup_analysis(
            &records,
            &manifest,
            &assignment,
            &thresholds,
            attribute,
            flavor,
        )?;
        append_stats_rows(&analysis, &mut out);
    }
    if let Some(parent) = ws.stats_csv().parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(ws.stats_csv(), &out).map_err(|e| CliError::io(ws.stats_csv(), e))
}

fn append_stats_rows(analysis: &SubgroupAnalysis, out: &mut String) {
    for cell in &analysis.cells {
        match &cell.test {
            Some(test) => {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    analysis.attribute.name(),
                    cell.task.name(),
                    cell.metric.name(),
                    fmt_f64(test.statistic),
                    test.df,
                    fmt_f64(test.p_raw),
                    test.p_corrected.map(fmt_f64).unwrap_or_else(|| "-".into()),
                    cell.excluded_folds
                ));
            }
            None => {
                out.push_str(&format!(
                    "{},{},{},-,-,-,-,{}\n",
                    analysis.attribute.name(),
                    cell.task.name(),
                    cell.metric.name(),
                    cell.excluded_folds
                ));
            }
        }
    }
}

/// Collate the evaluation and statistics artifacts into the report document.
pub fn stage_report(config: &RunConfig, ws: &Workspace) -> Result<()> {
    for path in [ws.metrics_csv(), ws.confusion_tasks_csv(), ws.confusion_joint_csv(), ws.thresholds_csv()] {
        ws.require("report", path)?;
    }
    if !config.stats.attributes.is_empty() {
        ws.require("report", ws.stats_csv())?;
    }
    let text = report::render(config, ws)?;
    std::fs::write(ws.report_txt(), text).map_err(|e| CliError::io(ws.report_txt(), e))
}

/// Run every stage in order.
pub fn run_all(config: &RunConfig, ws: &Workspace) -> Result<()> {
    if matches!(config.data, DataSource::Synthetic(_)) {
        stage_synth(config, ws)?;
    }
    stage_split(config, ws)?;
    stage_train(config, ws, None)?;
    stage_predict(config, ws, None)?;
    stage_eval(config, ws)?;
    if !config.stats.attributes.is_empty() {
        stage_stats(config, ws)?;
    }
    stage_report(config, ws)
}
