//! Two-sample t-test, one-way ANOVA and the Holm-Bonferroni correction.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::stats::dist::{f_upper_tail, student_t_two_sided};

/// Which two-sample t-test to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TTestFlavor {
    /// Welch's unequal-variance test.
    #[default]
    Welch,
    /// Student's pooled-variance test.
    Student,
}

impl TTestFlavor {
    pub fn name(self) -> &'static str {
        match self {
            TTestFlavor::Welch => "welch",
            TTestFlavor::Student => "student",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "welch" => Some(TTestFlavor::Welch),
            "student" => Some(TTestFlavor::Student),
            _ => None,
        }
    }
}

/// Degrees of freedom of a test statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DegreesOfFreedom {
    T(f64),
    F(f64, f64),
}

impl core::fmt::Display for DegreesOfFreedom {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            DegreesOfFreedom::T(df) => write!(f, "{df}"),
            DegreesOfFreedom::F(d1, d2) => write!(f, "{d1};{d2}"),
        }
    }
}

/// One hypothesis-test outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub df: DegreesOfFreedom,
    pub p_raw: f64,
    /// Filled once a multiple-testing family has been corrected.
    pub p_corrected: Option<f64>,
    pub family: String,
}

fn mean_and_var(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::UndefinedTest(format!(
            "need at least 2 values per group, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("non-finite sample value".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, var))
}

/// Two-sided two-sample t-test.
pub fn t_test(group_a: &[f64], group_b: &[f64], flavor: TTestFlavor) -> Result<TestResult> {
    let (ma, va) = mean_and_var(group_a)?;
    let (mb, vb) = mean_and_var(group_b)?;
    let (na, nb) = (group_a.len() as f64, group_b.len() as f64);

    let (se, df) = match flavor {
        TTestFlavor::Student => {
            let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0);
            (
                libm::sqrt(pooled * (1.0 / na + 1.0 / nb)),
                na + nb - 2.0,
            )
        }
        TTestFlavor::Welch => {
            let sa = va / na;
            let sb = vb / nb;
            let se = libm::sqrt(sa + sb);
            let df = (sa + sb) * (sa + sb)
                / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
            (se, df)
        }
    };
    if se == 0.0 || !se.is_finite() || !df.is_finite() {
        return Err(Error::DegenerateVariance(
            "both groups have zero variance".into(),
        ));
    }
    let t = (ma - mb) / se;
    Ok(TestResult {
        statistic: t,
        df: DegreesOfFreedom::T(df),
        p_raw: student_t_two_sided(t, df),
        p_corrected: None,
        family: String::new(),
    })
}

/// One-way ANOVA over two or more groups.
pub fn anova_oneway(groups: &[Vec<f64>]) -> Result<TestResult> {
    if groups.len() < 2 {
        return Err(Error::UndefinedTest(format!(
            "need at least 2 groups, got {}",
            groups.len()
        )));
    }
    let mut means = Vec::with_capacity(groups.len());
    for g in groups {
        means.push(mean_and_var(g)?.0);
    }
    let total_n: usize = groups.iter().map(|g| g.len()).sum();
    let grand = groups.iter().flatten().sum::<f64>() / total_n as f64;

    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for (g, &m) in groups.iter().zip(means.iter()) {
        ss_between += g.len() as f64 * (m - grand) * (m - grand);
        for v in g {
            ss_within += (v - m) * (v - m);
        }
    }
    let df1 = groups.len() as f64 - 1.0;
    let df2 = total_n as f64 - groups.len() as f64;
    if ss_within == 0.0 {
        if ss_between == 0.0 {
            return Err(Error::DegenerateVariance(
                "all groups constant and equal".into(),
            ));
        }
        return Err(Error::DegenerateVariance(
            "zero within-group variance".into(),
        ));
    }
    let f = (ss_between / df1) / (ss_within / df2);
    Ok(TestResult {
        statistic: f,
        df: DegreesOfFreedom::F(df1, df2),
        p_raw: f_upper_tail(f, df1, df2),
        p_corrected: None,
        family: String::new(),
    })
}

/// Holm-Bonferroni step-down correction, returned in input order.
///
/// The i-th smallest p-value (1-based) is multiplied by `m - i + 1`, a
/// running maximum is enforced over the sorted sequence, values cap at 1.
pub fn holm_bonferroni(p_values: &[f64]) -> Result<Vec<f64>> {
    for &p in p_values {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Argument(format!("p-value {p} outside [0,1]")));
        }
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].partial_cmp(&p_values[b]).unwrap().then(a.cmp(&b)));
    let mut out = vec![0.0; m];
    let mut running = 0.0f64;
    for (rank, &idx) in order.iter().enumerate() {
        let scaled = p_values[idx] * (m - rank) as f64;
        running = running.max(scaled).min(1.0);
        out[idx] = running;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_groups_give_p_one() {
        let r = t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], TTestFlavor::Welch).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_raw - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_is_degenerate() {
        assert!(matches!(
            t_test(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0], TTestFlavor::Welch),
            Err(Error::DegenerateVariance(_))
        ));
        assert!(matches!(
            t_test(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0], TTestFlavor::Student),
            Err(Error::DegenerateVariance(_))
        ));
    }

    #[test]
    fn student_t_reference_value() {
        // pooled-variance oracle: (1,2,3,4) vs (3,4,5,6)
        let r = t_test(
            &[1.0, 2.0, 3.0, 4.0],
            &[3.0, 4.0, 5.0, 6.0],
            TTestFlavor::Student,
        )
        .unwrap();
        assert!((r.statistic - (-2.1909)).abs() < 1e-4, "t = {}", r.statistic);
        assert!((r.p_raw - 0.0711).abs() < 1e-3, "p = {}", r.p_raw);
        match r.df {
            DegreesOfFreedom::T(df) => assert!((df - 6.0).abs() < 1e-12),
            _ => panic!("wrong df kind"),
        }
    }

    #[test]
    fn too_small_groups_are_undefined() {
        assert!(matches!(
            t_test(&[1.0], &[1.0, 2.0], TTestFlavor::Welch),
            Err(Error::UndefinedTest(_))
        ));
        assert!(anova_oneway(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn anova_identical_means_f_zero() {
        let r = anova_oneway(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_raw - 1.0).abs() < 1e-12);
    }

    #[test]
    fn anova_hand_decomposition() {
        // SSB = 54, SSW = 6 -> F = (54/2) / (6/6) = 27, p = 0.001
        let r = anova_oneway(&[
            vec![1.0, 2.0, 3.0],
            vec![4.0, 5.0, 6.0],
            vec![7.0, 8.0, 9.0],
        ])
        .unwrap();
        assert!((r.statistic - 27.0).abs() < 1e-12);
        assert!((r.p_raw - 0.001).abs() < 2e-3);
        match r.df {
            DegreesOfFreedom::F(d1, d2) => {
                assert_eq!(d1, 2.0);
                assert_eq!(d2, 6.0);
            }
            _ => panic!("wrong df kind"),
        }
    }

    #[test]
    fn anova_two_groups_equals_t_squared() {
        let mut rng = crate::rng::Rng::from_seed(31);
        for _ in 0..200 {
            let na = 2 + rng.below(8);
            let nb = 2 + rng.below(8);
            let a: Vec<f64> = (0..na).map(|_| rng.normal()).collect();
            let b: Vec<f64> = (0..nb).map(|_| rng.normal() + 0.3).collect();
            let t = t_test(&a, &b, TTestFlavor::Student).unwrap();
            let f = anova_oneway(&[a, b]).unwrap();
            let t2 = t.statistic * t.statistic;
            assert!(
                (f.statistic - t2).abs() <= 1e-9 * t2.max(1.0),
                "F {} vs t^2 {t2}",
                f.statistic
            );
        }
    }

    #[test]
    fn holm_stepwise_hand_example() {
        let out = holm_bonferroni(&[0.01, 0.04, 0.03]).unwrap();
        assert!((out[0] - 0.03).abs() < 1e-12);
        assert!((out[1] - 0.06).abs() < 1e-12);
        assert!((out[2] - 0.06).abs() < 1e-12);
    }

    #[test]
    fn holm_degenerate_cases() {
        assert_eq!(holm_bonferroni(&[0.2]).unwrap(), vec![0.2]);
        assert_eq!(holm_bonferroni(&[1.0, 1.0, 1.0]).unwrap(), vec![1.0; 3]);
        assert!(holm_bonferroni(&[0.5, 1.2]).is_err());
        assert!(holm_bonferroni(&[]).unwrap().is_empty());
    }

    #[test]
    fn holm_dominates_input_and_is_bounded_by_bonferroni() {
        let mut rng = crate::rng::Rng::from_seed(12);
        for _ in 0..200 {
            let m = 1 + rng.below(12);
            let ps: Vec<f64> = (0..m).map(|_| rng.next_f64()).collect();
            let out = holm_bonferroni(&ps).unwrap();
            for i in 0..m {
                assert!(out[i] >= ps[i]);
                assert!(out[i] <= (ps[i] * m as f64).min(1.0) + 1e-12);
                assert!(out[i] <= 1.0);
            }
        }
    }
}
