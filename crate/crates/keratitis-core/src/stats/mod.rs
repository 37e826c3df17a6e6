//! Statistical analysis: hypothesis tests, multiple-testing correction,
//! subgroup bias tables, correlation and kernel density estimation.

mod corr;
mod dist;
mod kde;
mod hypothesis;
mod subgroup;

pub use corr::{feature_label_correlation, CorrelationMatrix, CORR_COLUMNS};
pub use dist::{f_upper_tail, reg_inc_beta, student_t_two_sided};
pub use kde::{kde_density, silverman_bandwidth};
pub use subgroup::{
    subgroup_analysis, MetricKind, SubgroupAnalysis, SubgroupCell, SubgroupSeries,
};
pub use hypothesis::{
    anova_oneway, holm_bonferroni, t_test, DegreesOfFreedom, TTestFlavor, TestResult,
};
