//! Demographic-subgroup performance analysis.
//!
//! For each (task, metric), the per-fold metric values of every attribute
//! subgroup form a sample series; a t-test (sex) or one-way ANOVA (age)
//! compares the series, and Holm-Bonferroni corrects each task's family of
//! metrics. Folds where a subgroup's metric is undefined are excluded from
//! that series and counted.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{
    Attribute, Case, DatasetManifest, InfectionTask, PredictionRecord, SplitRole,
};
use crate::error::{Error, Result};
use crate::eval::{apply_thresholds, metrics_bundle_binary, MetricsBundle};
use crate::split::FoldAssignment;
use crate::stats::hypothesis::{
    anova_oneway, holm_bonferroni, t_test, DegreesOfFreedom, TTestFlavor, TestResult,
};

/// The six reported metrics, in table row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    F1,
    Recall,
    Precision,
    BalancedAcc,
    Acc,
    Auroc,
}

impl MetricKind {
    pub const ALL: [MetricKind; 6] = [
        MetricKind::F1,
        MetricKind::Recall,
        MetricKind::Precision,
        MetricKind::BalancedAcc,
        MetricKind::Acc,
        MetricKind::Auroc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::F1 => "f1",
            MetricKind::Recall => "recall",
            MetricKind::Precision => "precision",
            MetricKind::BalancedAcc => "balanced_acc",
            MetricKind::Acc => "acc",
            MetricKind::Auroc => "auroc",
        }
    }

    /// Row label in the report tables.
    pub fn display(self) -> &'static str {
        match self {
            MetricKind::F1 => "F1-score",
            MetricKind::Recall => "Recall",
            MetricKind::Precision => "Precision",
            MetricKind::BalancedAcc => "BA",
            MetricKind::Acc => "ACC",
            MetricKind::Auroc => "AUROC",
        }
    }

    pub fn extract(self, bundle: &MetricsBundle) -> Option<f64> {
        match self {
            MetricKind::F1 => bundle.f1,
            MetricKind::Recall => bundle.recall,
            MetricKind::Precision => bundle.precision,
            MetricKind::BalancedAcc => bundle.balanced_acc,
            MetricKind::Acc => bundle.acc,
            MetricKind::Auroc => bundle.auroc,
        }
    }
}

/// One subgroup's per-fold metric series.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgroupSeries {
    pub value: u8,
    pub label: &'static str,
    /// Distinct test cases in the subgroup across all rounds.
    pub n_cases: usize,
    /// One entry per analyzed round; `None` where undefined.
    pub per_fold: Vec<Option<f64>>,
}

/// One (task, metric) comparison across subgroups.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgroupCell {
    pub task: InfectionTask,
    pub metric: MetricKind,
    pub series: Vec<SubgroupSeries>,
    /// Total (subgroup, round) slots whose metric was undefined.
    pub excluded_folds: usize,
    /// `None` when the comparison could not be run (insufficient data);
    /// rendered as "-" in reports.
    pub test: Option<TestResult>,
}

/// Full Table-shaped analysis for one attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgroupAnalysis {
    pub attribute: Attribute,
    pub rounds: Vec<usize>,
    /// Cells in task-major, metric-minor order (3 x 6).
    pub cells: Vec<SubgroupCell>,
}

impl SubgroupAnalysis {
    pub fn cell(&self, task: InfectionTask, metric: MetricKind) -> &SubgroupCell {
        let m = MetricKind::ALL.iter().position(|&x| x == metric).unwrap();
        &self.cells[task.index() * MetricKind::ALL.len() + m]
    }
}

/// Compare per-fold subgroup metrics with the appropriate test and apply the
/// Holm-Bonferroni correction within each task's family of metrics.
///
/// `thresholds` maps each analyzed round to its per-task decision
/// thresholds. Only test-role records participate.
pub fn subgroup_analysis(
    records: &[PredictionRecord],
    manifest: &DatasetManifest,
    assignment: &FoldAssignment,
    thresholds: &BTreeMap<usize, [f64; 3]>,
    attribute: Attribute,
    flavor: TTestFlavor,
) -> Result<SubgroupAnalysis> {
    let cases: BTreeMap<&str, &Case> = manifest
        .cases
        .iter()
        .map(|c| (c.case_id.as_str(), c))
        .collect();

    let mut by_round: BTreeMap<usize, Vec<&PredictionRecord>> = BTreeMap::new();
    for record in records.iter().filter(|r| r.role == SplitRole::Test) {
        if record.fold >= assignment.k {
            return Err(Error::Argument(format!(
                "record fold {} out of range for k = {}",
                record.fold, assignment.k
            )));
        }
        if !cases.contains_key(record.case_id.as_str()) {
            return Err(Error::Manifest(format!(
                "prediction for unknown case `{}`",
                record.case_id
            )));
        }
        by_round.entry(record.fold).or_default().push(record);
    }
    if by_round.is_empty() {
        return Err(Error::Argument("no test-role records to analyze".into()));
    }
    let rounds: Vec<usize> = by_round.keys().copied().collect();
    let values = attribute.values();

    // per (value, round): metric bundle per task
    let mut bundles: BTreeMap<(u8, usize), [Option<MetricsBundle>; 3]> = BTreeMap::new();
    let mut n_cases: BTreeMap<u8, usize> = BTreeMap::new();
    for (&round, round_records) in &by_round {
        let thr = thresholds.get(&round).ok_or_else(|| {
            Error::Argument(format!("no thresholds supplied for round {round}"))
        })?;
        for &value in values {
            let subset: Vec<&PredictionRecord> = round_records
                .iter()
                .copied()
                .filter(|r| attribute.value_of(cases[r.case_id.as_str()]) == value)
                .collect();
            *n_cases.entry(value).or_insert(0) += subset.len();
            let mut per_task: [Option<MetricsBundle>; 3] = [None, None, None];
            if !subset.is_empty() {
                let owned: Vec<PredictionRecord> = subset.iter().map(|&r| (*r).clone()).collect();
                let preds = apply_thresholds(&owned, thr);
                for task in InfectionTask::ALL {
                    let pred: Vec<bool> = preds.iter().map(|p| p.get(task)).collect();
                    let truth: Vec<bool> = subset
                        .iter()
                        .map(|r| cases[r.case_id.as_str()].labels.get(task))
                        .collect();
                    let scores: Vec<f64> =
                        subset.iter().map(|r| r.scores[task.index()]).collect();
                    per_task[task.index()] =
                        metrics_bundle_binary(&pred, &truth, Some(&scores)).ok();
                }
            }
            bundles.insert((value, round), per_task);
        }
    }

    let mut cells = Vec::with_capacity(3 * MetricKind::ALL.len());
    for task in InfectionTask::ALL {
        let mut task_cells: Vec<SubgroupCell> = Vec::new();
        for metric in MetricKind::ALL {
            let mut series = Vec::with_capacity(values.len());
            let mut excluded = 0usize;
            for &value in values {
                let per_fold: Vec<Option<f64>> = rounds
                    .iter()
                    .map(|&round| {
                        bundles[&(value, round)][task.index()]
                            .as_ref()
                            .and_then(|b| metric.extract(b))
                    })
                    .collect();
                excluded += per_fold.iter().filter(|v| v.is_none()).count();
                series.push(SubgroupSeries {
                    value,
                    label: attribute.value_label(value),
                    n_cases: n_cases[&value],
                    per_fold,
                });
            }
            let test = run_comparison(&series, attribute, flavor);
            task_cells.push(SubgroupCell {
                task,
                metric,
                series,
                excluded_folds: excluded,
                test,
            });
        }

        // Holm family: this task's metrics under the analyzed attribute
        let family = format!("{}/{}", task.name(), attribute.name());
        let ps: Vec<f64> = task_cells
            .iter()
            .filter_map(|c| c.test.as_ref().map(|t| t.p_raw))
            .collect();
        if !ps.is_empty() {
            let corrected = holm_bonferroni(&ps)?;
            let mut it = corrected.into_iter();
            for cell in task_cells.iter_mut() {
                if let Some(t) = cell.test.as_mut() {
                    t.p_corrected = it.next();
                    t.family = family.clone();
                }
            }
        }
        cells.extend(task_cells);
    }

    Ok(SubgroupAnalysis {
        attribute,
        rounds,
        cells,
    })
}

/// Run the subgroup comparison for one cell; `None` when any subgroup lacks
/// two defined fold values or the variance structure defeats the test.
fn run_comparison(
    series: &[SubgroupSeries],
    attribute: Attribute,
    flavor: TTestFlavor,
) -> Option<TestResult> {
    let groups: Vec<Vec<f64>> = series
        .iter()
        .map(|s| s.per_fold.iter().flatten().copied().collect())
        .collect();
    if groups.iter().any(|g| g.len() < 2) {
        return None;
    }
    let outcome = match attribute {
        Attribute::Sex => t_test(&groups[0], &groups[1], flavor),
        Attribute::AgeBin => anova_oneway(&groups),
    };
    match outcome {
        Ok(result) => Some(result),
        Err(Error::DegenerateVariance(_)) => {
            // constant identical series mean no detectable difference
            let means: Vec<f64> = groups
                .iter()
                .map(|g| g.iter().sum::<f64>() / g.len() as f64)
                .collect();
            let spread = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - means.iter().cloned().fold(f64::INFINITY, f64::min);
            if spread.abs() < 1e-12 {
                let df = match attribute {
                    Attribute::Sex => DegreesOfFreedom::T((groups[0].len() + groups[1].len()) as f64 - 2.0),
                    Attribute::AgeBin => {
                        let n: usize = groups.iter().map(|g| g.len()).sum();
                        DegreesOfFreedom::F(groups.len() as f64 - 1.0, (n - groups.len()) as f64)
                    }
                };
                Some(TestResult {
                    statistic: 0.0,
                    df,
                    p_raw: 1.0,
                    p_corrected: None,
                    family: String::new(),
                })
            } else {
                None
            }
        }
        Err(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AgeBin, LabelVector, ManifestMeta, Payload, Sex};
    use crate::split::{assign_folds, SplitConfig};
    use alloc::vec;

    fn small_world(seed: u64) -> (DatasetManifest, FoldAssignment, Vec<PredictionRecord>) {
        // 40 groups, alternating labels and demographics
        let mut cases = Vec::new();
        for i in 0..40 {
            cases.push(Case {
                case_id: format!("c{i}"),
                group_id: format!("g{i}"),
                payload: Payload::Features(vec![0.0]),
                labels: if i % 3 == 0 {
                    LabelVector::new(true, false, true)
                } else {
                    LabelVector::new(true, true, false)
                },
                sex: if i % 2 == 0 { Sex::Male } else { Sex::Female },
                age_bin: AgeBin::new((i % 4) as u8).unwrap(),
                mirrored: false,
            });
        }
        let manifest = DatasetManifest::new(cases, ManifestMeta::external()).unwrap();
        let assignment = assign_folds(&manifest, &SplitConfig::new(4, seed)).unwrap();
        let mut rng = crate::rng::Rng::from_seed(seed);
        let mut records = Vec::new();
        for round in 0..4 {
            for case in &manifest.cases {
                if assignment.role_of(round, &case.group_id) == Some(SplitRole::Test) {
                    records.push(PredictionRecord {
                        case_id: case.case_id.clone(),
                        fold: round,
                        role: SplitRole::Test,
                        scores: [rng.next_f64(), rng.next_f64(), rng.next_f64()],
                        score_sex: None,
                        probs_age: None,
                    });
                }
            }
        }
        (manifest, assignment, records)
    }

    fn default_thresholds(k: usize) -> BTreeMap<usize, [f64; 3]> {
        (0..k).map(|r| (r, [0.5, 0.5, 0.5])).collect()
    }

    #[test]
    fn shape_is_three_tasks_by_six_metrics() {
        let (manifest, assignment, records) = small_world(3);
        let analysis = subgroup_analysis(
            &records,
            &manifest,
            &assignment,
            &default_thresholds(4),
            Attribute::Sex,
            TTestFlavor::Welch,
        )
        .unwrap();
        assert_eq!(analysis.cells.len(), 18);
        assert_eq!(analysis.rounds, vec![0, 1, 2, 3]);
        for task in InfectionTask::ALL {
            for metric in MetricKind::ALL {
                let cell = analysis.cell(task, metric);
                assert_eq!(cell.task, task);
                assert_eq!(cell.metric, metric);
                assert_eq!(cell.series.len(), 2);
            }
        }
    }

    #[test]
    fn constant_identical_metrics_give_corrected_p_one() {
        let (manifest, assignment, mut records) = small_world(5);
        // scores exactly the labels: every subgroup fold metric is constant 1
        for record in records.iter_mut() {
            let case = manifest.case(&record.case_id).unwrap();
            record.scores = [
                case.labels.bacteria as u8 as f64,
                case.labels.fungi as u8 as f64,
                case.labels.amoeba as u8 as f64,
            ];
        }
        let analysis = subgroup_analysis(
            &records,
            &manifest,
            &assignment,
            &default_thresholds(4),
            Attribute::Sex,
            TTestFlavor::Welch,
        )
        .unwrap();
        // accuracy is constant 1.0 everywhere: p = 1 after correction
        let cell = analysis.cell(InfectionTask::Bacteria, MetricKind::Acc);
        let test = cell.test.as_ref().expect("test should run");
        assert_eq!(test.p_corrected, Some(1.0));
    }

    #[test]
    fn age_analysis_uses_anova_and_marks_sparse_cells_undefined() {
        let (manifest, assignment, records) = small_world(7);
        let analysis = subgroup_analysis(
            &records,
            &manifest,
            &assignment,
            &default_thresholds(4),
            Attribute::AgeBin,
            TTestFlavor::Welch,
        )
        .unwrap();
        for cell in &analysis.cells {
            assert_eq!(cell.series.len(), 4);
            if let Some(test) = &cell.test {
                assert!(matches!(test.df, DegreesOfFreedom::F(_, _)));
                assert!(test.p_corrected.is_some());
            }
        }
        // bacteria is always positive here, so subgroup AUROC is undefined
        // everywhere and the cell must be marked "-"
        let cell = analysis.cell(InfectionTask::Bacteria, MetricKind::Auroc);
        assert!(cell.test.is_none());
        assert!(cell.excluded_folds > 0);
    }

    #[test]
    fn corrected_dominates_raw_within_families() {
        let (manifest, assignment, records) = small_world(11);
        let analysis = subgroup_analysis(
            &records,
            &manifest,
            &assignment,
            &default_thresholds(4),
            Attribute::Sex,
            TTestFlavor::Welch,
        )
        .unwrap();
        for cell in &analysis.cells {
            if let Some(test) = &cell.test {
                let corrected = test.p_corrected.unwrap();
                assert!(corrected >= test.p_raw - 1e-12);
                assert!(corrected <= 1.0);
                assert!(!test.family.is_empty());
            }
        }
    }

    #[test]
    fn missing_thresholds_error() {
        let (manifest, assignment, records) = small_world(13);
        let mut thresholds = default_thresholds(4);
        thresholds.remove(&2);
        assert!(subgroup_analysis(
            &records,
            &manifest,
            &assignment,
            &thresholds,
            Attribute::Sex,
            TTestFlavor::Welch,
        )
        .is_err());
    }

    #[test]
    fn null_model_rarely_significant() {
        // random scores carry no subgroup signal: a fixed cell's corrected
        // p-value should clear 0.05 in at most a small fraction of seeds
        let mut hits = 0;
        let n_seeds = 100;
        for seed in 0..n_seeds {
            let (manifest, assignment, records) = small_world(100 + seed);
            let analysis = subgroup_analysis(
                &records,
                &manifest,
                &assignment,
                &default_thresholds(4),
                Attribute::Sex,
                TTestFlavor::Welch,
            )
            .unwrap();
            let cell = analysis.cell(InfectionTask::Fungi, MetricKind::Recall);
            if let Some(test) = &cell.test {
                if test.p_corrected.unwrap_or(1.0) < 0.05 {
                    hits += 1;
                }
            }
        }
        assert!(hits <= n_seeds / 10, "null rejections: {hits}/{n_seeds}");
    }
}
