//! Pairwise correlation between labels and demographic attributes.

use crate::data::DatasetManifest;

/// Columns of the correlation analysis, in order.
pub const CORR_COLUMNS: [&str; 5] = ["bacteria", "fungi", "amoeba", "sex", "age_bin"];

/// Pearson correlations among the numeric encodings of the three infection
/// labels, sex and age bin. Binary pairs reduce to point-biserial / phi
/// coefficients. Zero-variance columns leave their cells undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub names: [&'static str; 5],
    pub values: [[Option<f64>; 5]; 5],
}

/// Correlation analysis over all cases of a manifest.
pub fn feature_label_correlation(manifest: &DatasetManifest) -> CorrelationMatrix {
    let n = manifest.len() as f64;
    let mut columns: [alloc::vec::Vec<f64>; 5] = Default::default();
    for case in &manifest.cases {
        columns[0].push(case.labels.bacteria as u8 as f64);
        columns[1].push(case.labels.fungi as u8 as f64);
        columns[2].push(case.labels.amoeba as u8 as f64);
        columns[3].push(case.sex.as_u8() as f64);
        columns[4].push(case.age_bin.as_u8() as f64);
    }
    let means: alloc::vec::Vec<f64> = columns.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let mut values = [[None; 5]; 5];
    for i in 0..5 {
        for j in 0..5 {
            let mut sxy = 0.0;
            let mut sxx = 0.0;
            let mut syy = 0.0;
            for k in 0..columns[i].len() {
                let dx = columns[i][k] - means[i];
                let dy = columns[j][k] - means[j];
                sxy += dx * dy;
                sxx += dx * dx;
                syy += dy * dy;
            }
            values[i][j] = if sxx > 0.0 && syy > 0.0 {
                Some(sxy / libm::sqrt(sxx * syy))
            } else {
                None
            };
        }
    }
    CorrelationMatrix {
        names: CORR_COLUMNS,
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    #[test]
    fn diagonal_is_one_and_matrix_symmetric() {
        let m = generate(&SynthConfig {
            n_groups: 400,
            seed: 2,
            ..SynthConfig::default()
        })
        .unwrap();
        let corr = feature_label_correlation(&m);
        for i in 0..5 {
            if let Some(v) = corr.values[i][i] {
                assert!((v - 1.0).abs() < 1e-12);
            }
            for j in 0..5 {
                match (corr.values[i][j], corr.values[j][i]) {
                    (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
                    (None, None) => {}
                    _ => panic!("asymmetric definedness"),
                }
            }
        }
    }

    #[test]
    fn complementary_columns_correlate_minus_one() {
        use crate::data::{AgeBin, Case, DatasetManifest, LabelVector, ManifestMeta, Payload, Sex};
        // fungi is exactly the complement of bacteria
        let mut cases = alloc::vec::Vec::new();
        for i in 0..20 {
            let b = i % 2 == 0;
            cases.push(Case {
                case_id: alloc::format!("c{i}"),
                group_id: alloc::format!("g{i}"),
                payload: Payload::Features(alloc::vec![0.0]),
                labels: LabelVector::new(b, !b, false),
                sex: if i % 3 == 0 { Sex::Female } else { Sex::Male },
                age_bin: AgeBin::new((i % 4) as u8).unwrap(),
                mirrored: false,
            });
        }
        let m = DatasetManifest::new(cases, ManifestMeta::external()).unwrap();
        let corr = feature_label_correlation(&m);
        assert!((corr.values[0][1].unwrap() + 1.0).abs() < 1e-12);
        // amoeba never occurs: zero variance, undefined cells
        assert!(corr.values[2][2].is_none());
        assert!(corr.values[0][2].is_none());
    }

    #[test]
    fn observed_mix_gives_negative_bacteria_fungi_correlation() {
        // under the observed combination frequencies, bacteria and fungi
        // co-occur less often than independence would predict
        let m = generate(&SynthConfig {
            n_groups: 10_000,
            seed: 8,
            ..SynthConfig::default()
        })
        .unwrap();
        let corr = feature_label_correlation(&m);
        assert!(corr.values[0][1].unwrap() < 0.0);
    }
}
