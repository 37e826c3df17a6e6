//! Metric bundles for binary and multiclass tasks.
//!
//! Ratios with a zero denominator are flagged undefined (`None`) rather than
//! coerced to zero; fold aggregation later excludes and counts them.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::eval::confusion::{confusion, Confusion2};
use crate::eval::roc::auroc;

/// Per-class ratios of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub class_index: usize,
    pub support: usize,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

/// The full metric bundle of one task on one split.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsBundle {
    pub acc: Option<f64>,
    pub balanced_acc: Option<f64>,
    pub f1: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub auroc: Option<f64>,
    /// Mean absolute bin error; multiclass (age) only.
    pub mae: Option<f64>,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

fn f1_of(precision: Option<f64>, recall: Option<f64>) -> Option<f64> {
    match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    }
}

/// Metrics of a binary task. Headline precision/recall/F1 describe the
/// positive class; `per_class` carries both classes in (negative, positive)
/// order. AUROC is computed when raw scores are supplied and both classes
/// occur.
pub fn metrics_bundle_binary(
    pred: &[bool],
    truth: &[bool],
    scores: Option<&[f64]>,
) -> Result<MetricsBundle> {
    if pred.is_empty() {
        return Err(Error::Argument("empty prediction set".into()));
    }
    let cf: Confusion2 = confusion(pred, truth)?;
    let n = cf.total();

    let recall_pos = ratio(cf.true_pos, cf.true_pos + cf.false_neg);
    let recall_neg = ratio(cf.true_neg, cf.true_neg + cf.false_pos);
    let precision_pos = ratio(cf.true_pos, cf.true_pos + cf.false_pos);
    let precision_neg = ratio(cf.true_neg, cf.true_neg + cf.false_neg);

    let balanced_acc = match (recall_pos, recall_neg) {
        (Some(a), Some(b)) => Some((a + b) / 2.0),
        _ => None,
    };
    let auroc_value = match scores {
        Some(s) => auroc(s, truth).ok(),
        None => None,
    };

    Ok(MetricsBundle {
        acc: Some((cf.true_pos + cf.true_neg) as f64 / n as f64),
        balanced_acc,
        f1: f1_of(precision_pos, recall_pos),
        precision: precision_pos,
        recall: recall_pos,
        auroc: auroc_value,
        mae: None,
        per_class: alloc::vec![
            ClassMetrics {
                class_index: 0,
                support: (cf.true_neg + cf.false_pos) as usize,
                recall: recall_neg,
                precision: precision_neg,
                f1: f1_of(precision_neg, recall_neg),
            },
            ClassMetrics {
                class_index: 1,
                support: (cf.true_pos + cf.false_neg) as usize,
                recall: recall_pos,
                precision: precision_pos,
                f1: f1_of(precision_pos, recall_pos),
            },
        ],
    })
}

/// Metrics of a multiclass task (the age head). Headline precision/recall/F1
/// are macro averages, defined only when every class's ratio is defined;
/// AUROC is the macro one-vs-rest average under the same rule. MAE is the
/// mean absolute difference of bin indices.
pub fn metrics_bundle_multiclass(
    pred: &[usize],
    truth: &[usize],
    probs: Option<&[f64]>,
    classes: usize,
) -> Result<MetricsBundle> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch(alloc::format!(
            "{} predictions vs {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Argument("empty prediction set".into()));
    }
    if let Some(p) = probs {
        if p.len() != truth.len() * classes {
            return Err(Error::ShapeMismatch(alloc::format!(
                "probs length {} != n * classes",
                p.len()
            )));
        }
    }
    if pred.iter().chain(truth.iter()).any(|&v| v >= classes) {
        return Err(Error::Argument("class index out of range".into()));
    }

    let n = truth.len();
    let mut correct = 0usize;
    let mut abs_err = 0.0;
    for (&p, &t) in pred.iter().zip(truth.iter()) {
        if p == t {
            correct += 1;
        }
        abs_err += (p as f64 - t as f64).abs();
    }

    let mut per_class = Vec::with_capacity(classes);
    for c in 0..classes {
        let tp = pred
            .iter()
            .zip(truth.iter())
            .filter(|&(&p, &t)| p == c && t == c)
            .count() as u64;
        let support = truth.iter().filter(|&&t| t == c).count();
        let predicted = pred.iter().filter(|&&p| p == c).count() as u64;
        let recall = ratio(tp, support as u64);
        let precision = ratio(tp, predicted);
        per_class.push(ClassMetrics {
            class_index: c,
            support,
            recall,
            precision,
            f1: f1_of(precision, recall),
        });
    }

    let macro_of = |take: &dyn Fn(&ClassMetrics) -> Option<f64>| -> Option<f64> {
        let mut sum = 0.0;
        for cm in &per_class {
            sum += take(cm)?;
        }
        Some(sum / classes as f64)
    };
    let balanced_acc = macro_of(&|cm| cm.recall);
    let macro_recall = balanced_acc;
    let macro_precision = macro_of(&|cm| cm.precision);
    let macro_f1 = macro_of(&|cm| cm.f1);

    // macro one-vs-rest AUROC; undefined if any class lacks both outcomes
    let auroc_value = probs.and_then(|p| {
        let mut sum = 0.0;
        for c in 0..classes {
            let col: Vec<f64> = (0..n).map(|i| p[i * classes + c]).collect();
            let bin: Vec<bool> = truth.iter().map(|&t| t == c).collect();
            match auroc(&col, &bin) {
                Ok(a) => sum += a,
                Err(_) => return None,
            }
        }
        Some(sum / classes as f64)
    });

    Ok(MetricsBundle {
        acc: Some(correct as f64 / n as f64),
        balanced_acc,
        f1: macro_f1,
        precision: macro_precision,
        recall: macro_recall,
        auroc: auroc_value,
        mae: Some(abs_err / n as f64),
        per_class,
    })
}
