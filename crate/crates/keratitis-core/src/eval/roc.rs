//! ROC curves, AUROC, and Youden's-J adaptive thresholds.
//!
//! The classification rule is `score >= threshold` everywhere, boundary
//! inclusive.

use alloc::vec::Vec;

use crate::data::{LabelVector, PredictionRecord};
use crate::error::{Error, Result};

/// One operating point of a ROC curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// Operating points at every unique score, descending by threshold, with
/// sentinels at +/- infinity mapping to (0,0) and (1,1).
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    /// Points with finite thresholds (the unique scores).
    pub fn finite_points(&self) -> &[RocPoint] {
        &self.points[1..self.points.len() - 1]
    }
}

/// Build the ROC curve of binary scores. Both classes must be present.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(alloc::format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedCurve(alloc::format!(
            "need both classes, got {pos} positive / {neg} negative"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));

    let mut points = Vec::with_capacity(scores.len() + 2);
    points.push(RocPoint {
        threshold: f64::INFINITY,
        tpr: 0.0,
        fpr: 0.0,
    });
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        // absorb all samples tied at this score: they flip together under
        // the inclusive rule
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            tpr: tp as f64 / pos as f64,
            fpr: fp as f64 / neg as f64,
        });
    }
    points.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        tpr: 1.0,
        fpr: 1.0,
    });
    Ok(RocCurve { points })
}

/// Trapezoidal area under the ROC curve.
///
/// Equals the Mann-Whitney pair statistic with ties counted one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let curve = roc_curve(scores, labels)?;
    Ok(auroc_from_curve(&curve))
}

/// Trapezoidal area of an already-built curve.
pub fn auroc_from_curve(curve: &RocCurve) -> f64 {
    let mut area = 0.0;
    for pair in curve.points.windows(2) {
        area += (pair[1].fpr - pair[0].fpr) * (pair[0].tpr + pair[1].tpr) / 2.0;
    }
    area
}

/// Threshold maximizing Youden's J = TPR - FPR over the curve's finite
/// points. Ties prefer the higher TPR, then the lower threshold.
pub fn youden_threshold(curve: &RocCurve) -> (f64, f64) {
    let mut best = curve.finite_points()[0];
    let mut best_j = best.tpr - best.fpr;
    for &p in curve.finite_points().iter().skip(1) {
        let j = p.tpr - p.fpr;
        let better = j > best_j
            || (j == best_j && p.tpr > best.tpr)
            || (j == best_j && p.tpr == best.tpr && p.threshold < best.threshold);
        if better {
            best = p;
            best_j = j;
        }
    }
    (best.threshold, best_j)
}

/// Predicted label vectors under per-task thresholds (score >= t), aligned
/// with the record order.
pub fn apply_thresholds(records: &[PredictionRecord], thresholds: &[f64; 3]) -> Vec<LabelVector> {
    records
        .iter()
        .map(|r| {
            LabelVector::new(
                r.scores[0] >= thresholds[0],
                r.scores[1] >= thresholds[1],
                r.scores[2] >= thresholds[2],
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SplitRole;
    use alloc::string::ToString;

    fn contains_fpr_tpr(curve: &RocCurve, fpr: f64, tpr: f64) -> bool {
        curve
            .points
            .iter()
            .any(|p| (p.fpr - fpr).abs() < 1e-12 && (p.tpr - tpr).abs() < 1e-12)
    }

    #[test]
    fn perfect_separation_passes_through_top_left() {
        let curve = roc_curve(&[0.9, 0.8, 0.3, 0.2], &[true, true, false, false]).unwrap();
        assert!(contains_fpr_tpr(&curve, 0.0, 1.0));
        assert_eq!(curve.points.first().unwrap().threshold, f64::INFINITY);
        assert_eq!(curve.points.last().unwrap().threshold, f64::NEG_INFINITY);
    }

    #[test]
    fn all_equal_scores_degenerate_curve() {
        let curve = roc_curve(&[0.5, 0.5, 0.5, 0.5], &[true, false, true, false]).unwrap();
        // sentinels plus the single all-positive step at (1,1)
        assert_eq!(curve.points.len(), 3);
        assert!(contains_fpr_tpr(&curve, 1.0, 1.0));
        assert!((auroc_from_curve(&curve) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn enumerated_curve_points() {
        // exhaustive threshold enumeration oracle for (0.9,0.4,0.6,0.2)
        let curve = roc_curve(&[0.9, 0.4, 0.6, 0.2], &[true, true, false, false]).unwrap();
        for (fpr, tpr) in [(0.0, 0.5), (0.5, 0.5), (0.5, 1.0), (1.0, 1.0)] {
            assert!(contains_fpr_tpr(&curve, fpr, tpr), "missing ({fpr},{tpr})");
        }
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(
            roc_curve(&[0.2, 0.8], &[true, true]),
            Err(Error::UndefinedCurve(_))
        ));
        assert!(auroc(&[0.2, 0.8], &[false, false]).is_err());
    }

    #[test]
    fn auroc_values() {
        assert!((auroc(&[0.9, 0.8, 0.3, 0.2], &[true, true, false, false]).unwrap() - 1.0).abs() < 1e-12);
        // pair counting: pos {0.9, 0.4}, neg {0.6, 0.2} -> 3 of 4 pairs
        let a = auroc(&[0.9, 0.4, 0.6, 0.2], &[true, true, false, false]).unwrap();
        assert!((a - 0.75).abs() < 1e-12);
    }

    #[test]
    fn youden_perfect_separation() {
        let curve = roc_curve(&[0.9, 0.8, 0.3, 0.2], &[true, true, false, false]).unwrap();
        let (t, j) = youden_threshold(&curve);
        assert_eq!(t, 0.8);
        assert!((j - 1.0).abs() < 1e-12);
    }

    #[test]
    fn youden_tie_prefers_higher_tpr() {
        // J = 0.5 at t = 0.9 (TPR .5) and t = 0.4 (TPR 1); the tie rule
        // picks the sensitive side
        let curve = roc_curve(&[0.9, 0.4, 0.6, 0.2], &[true, true, false, false]).unwrap();
        let (t, j) = youden_threshold(&curve);
        assert_eq!(t, 0.4);
        assert!((j - 0.5).abs() < 1e-12);
    }

    #[test]
    fn apply_thresholds_boundary_inclusive() {
        let rec = PredictionRecord {
            case_id: "c".to_string(),
            fold: 0,
            role: SplitRole::Test,
            scores: [0.6, 0.4, 0.5],
            score_sex: None,
            probs_age: None,
        };
        let pred = apply_thresholds(core::slice::from_ref(&rec), &[0.5, 0.5, 0.5]);
        assert_eq!(pred[0], LabelVector::new(true, false, true));
        let all = apply_thresholds(&[rec], &[0.0, 0.0, 0.0]);
        assert_eq!(all[0], LabelVector::new(true, true, true));
    }

    #[test]
    fn youden_j_stays_in_range() {
        let mut rng = crate::rng::Rng::from_seed(3);
        for _ in 0..200 {
            let n = 2 + rng.below(30);
            let scores: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.5)).collect();
            labels[0] = true;
            labels[n - 1] = false;
            let curve = roc_curve(&scores, &labels).unwrap();
            let (_, j) = youden_threshold(&curve);
            assert!((-1.0..=1.0).contains(&j));
        }
    }

    #[test]
    fn curve_monotone_as_threshold_decreases() {
        let mut rng = crate::rng::Rng::from_seed(5);
        for _ in 0..100 {
            let n = 2 + rng.below(40);
            let scores: Vec<f64> = (0..n).map(|_| (rng.below(7) as f64) / 6.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.4)).collect();
            labels[0] = true;
            labels[n - 1] = false;
            let curve = roc_curve(&scores, &labels).unwrap();
            for pair in curve.points.windows(2) {
                assert!(pair[1].tpr >= pair[0].tpr);
                assert!(pair[1].fpr >= pair[0].fpr);
                assert!(pair[1].threshold <= pair[0].threshold);
            }
        }
    }
}
