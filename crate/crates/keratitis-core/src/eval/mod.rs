//! Evaluation suite: ROC analysis, adaptive thresholds, confusion matrices,
//! metric bundles and k-fold aggregation.

mod aggregate;
mod confusion;
mod metrics;
mod roc;

pub use aggregate::{
    aggregate_folds, aggregate_metric, mean_confusion, mean_joint_confusion, FoldAggregate,
    MetricAggregate, Z_95,
};
pub use confusion::{confusion, joint_confusion, Confusion2, JointConfusion};
pub use metrics::{metrics_bundle_binary, metrics_bundle_multiclass, ClassMetrics, MetricsBundle};
pub use roc::{apply_thresholds, auroc, auroc_from_curve, roc_curve, youden_threshold, RocCurve, RocPoint};
