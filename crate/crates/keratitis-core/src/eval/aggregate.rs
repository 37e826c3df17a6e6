//! K-fold aggregation with 95% normal confidence intervals.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::eval::confusion::{Confusion2, JointConfusion};
use crate::eval::metrics::MetricsBundle;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959964;

/// Mean, spread and confidence interval of one metric across folds.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricAggregate {
    pub mean: f64,
    /// Sample standard deviation; requires at least two defined folds.
    pub sd: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    /// Folds contributing a defined value.
    pub included: usize,
    /// Folds excluded because the metric was undefined there.
    pub excluded: usize,
}

/// Aggregate one metric series; `None` when no fold defines it.
pub fn aggregate_metric(values: &[Option<f64>]) -> Option<MetricAggregate> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        return None;
    }
    let n = defined.len();
    let mean = defined.iter().sum::<f64>() / n as f64;
    let (sd, ci_low, ci_high) = if n >= 2 {
        let var = defined.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
        let sd = libm::sqrt(var);
        let half = Z_95 * sd / libm::sqrt(n as f64);
        (Some(sd), Some(mean - half), Some(mean + half))
    } else {
        (None, None, None)
    };
    Some(MetricAggregate {
        mean,
        sd,
        ci_low,
        ci_high,
        included: n,
        excluded: values.len() - n,
    })
}

/// Aggregates of a full metric bundle across folds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FoldAggregate {
    pub k: usize,
    pub acc: Option<MetricAggregate>,
    pub balanced_acc: Option<MetricAggregate>,
    pub f1: Option<MetricAggregate>,
    pub precision: Option<MetricAggregate>,
    pub recall: Option<MetricAggregate>,
    pub auroc: Option<MetricAggregate>,
    pub mae: Option<MetricAggregate>,
}

/// Aggregate per-fold bundles. At least two folds are required for the
/// confidence intervals to exist.
pub fn aggregate_folds(bundles: &[MetricsBundle]) -> Result<FoldAggregate> {
    if bundles.len() < 2 {
        return Err(Error::Argument(
            "confidence intervals need at least 2 folds".into(),
        ));
    }
    let collect = |take: &dyn Fn(&MetricsBundle) -> Option<f64>| -> Vec<Option<f64>> {
        bundles.iter().map(take).collect()
    };
    Ok(FoldAggregate {
        k: bundles.len(),
        acc: aggregate_metric(&collect(&|b| b.acc)),
        balanced_acc: aggregate_metric(&collect(&|b| b.balanced_acc)),
        f1: aggregate_metric(&collect(&|b| b.f1)),
        precision: aggregate_metric(&collect(&|b| b.precision)),
        recall: aggregate_metric(&collect(&|b| b.recall)),
        auroc: aggregate_metric(&collect(&|b| b.auroc)),
        mae: aggregate_metric(&collect(&|b| b.mae)),
    })
}

/// Element-wise mean of 2x2 confusion matrices (rows actual, columns
/// predicted, negative first). Entries are fractional by design.
pub fn mean_confusion(matrices: &[Confusion2]) -> [[f64; 2]; 2] {
    let n = matrices.len().max(1) as f64;
    let mut out = [[0.0; 2]; 2];
    for m in matrices {
        let grid = m.as_matrix();
        for (r, row) in grid.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                out[r][c] += v as f64 / n;
            }
        }
    }
    out
}

/// Element-wise mean of 8x8 joint confusion matrices in table order.
pub fn mean_joint_confusion(matrices: &[JointConfusion]) -> [[f64; 8]; 8] {
    let n = matrices.len().max(1) as f64;
    let mut out = [[0.0; 8]; 8];
    for m in matrices {
        for (r, row) in m.counts.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                out[r][c] += v as f64 / n;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn identical_folds_have_zero_width_ci() {
        let agg = aggregate_metric(&[Some(0.8); 10]).unwrap();
        assert!((agg.mean - 0.8).abs() < 1e-12);
        assert!(agg.sd.unwrap() < 1e-12);
        assert!((agg.ci_high.unwrap() - agg.ci_low.unwrap()).abs() < 1e-12);
        assert!((agg.ci_low.unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(agg.excluded, 0);
    }

    #[test]
    fn two_fold_ci_matches_direct_formula() {
        let agg = aggregate_metric(&[Some(0.7), Some(0.9)]).unwrap();
        assert!((agg.mean - 0.8).abs() < 1e-12);
        assert!((agg.sd.unwrap() - 0.141421).abs() < 1e-6);
        assert!((agg.ci_low.unwrap() - 0.6040).abs() < 1e-4);
        assert!((agg.ci_high.unwrap() - 0.9960).abs() < 1e-4);
    }

    #[test]
    fn exclusions_are_counted() {
        let agg = aggregate_metric(&[Some(0.5), None, Some(0.7), None]).unwrap();
        assert_eq!(agg.included, 2);
        assert_eq!(agg.excluded, 2);
        assert!(aggregate_metric(&[None, None]).is_none());
    }

    #[test]
    fn ci_symmetric_about_mean() {
        let agg = aggregate_metric(&[Some(0.2), Some(0.5), Some(0.9), Some(0.4)]).unwrap();
        let lo = agg.ci_low.unwrap();
        let hi = agg.ci_high.unwrap();
        assert!(lo <= agg.mean && agg.mean <= hi);
        assert!(((agg.mean - lo) - (hi - agg.mean)).abs() < 1e-12);
    }

    #[test]
    fn fewer_than_two_folds_is_an_error() {
        let one = vec![MetricsBundle::default()];
        assert!(aggregate_folds(&one).is_err());
    }

    #[test]
    fn fractional_mean_confusion_entries() {
        let a = Confusion2 {
            true_neg: 318,
            false_pos: 15,
            false_neg: 20,
            true_pos: 60,
        };
        let b = Confusion2 {
            true_neg: 319,
            false_pos: 14,
            false_neg: 19,
            true_pos: 59,
        };
        let mean = mean_confusion(&[a, b]);
        assert!((mean[0][0] - 318.5).abs() < 1e-12);
        assert!((mean[1][1] - 59.5).abs() < 1e-12);
    }
}
