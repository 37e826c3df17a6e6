//! Manifest-level properties over randomly generated datasets.

use proptest::prelude::*;

use keratitis_core::synth::{generate, SynthConfig};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn mirror_expand_doubles_and_preserves(seed in 0u64..10_000, n in 5usize..120) {
        let manifest = generate(&SynthConfig {
            n_groups: n,
            feature_dim: 6,
            separability: 1.0,
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        let doubled = manifest.mirror_expand().unwrap();
        prop_assert_eq!(doubled.len(), 2 * manifest.len());
        for case in &manifest.cases {
            let twin = doubled
                .case(&format!("{}__mirror", case.case_id))
                .expect("twin present");
            prop_assert!(twin.mirrored);
            prop_assert_eq!(&twin.group_id, &case.group_id);
            prop_assert_eq!(twin.labels, case.labels);
            prop_assert_eq!(twin.sex, case.sex);
            prop_assert_eq!(twin.age_bin, case.age_bin);
            prop_assert_eq!(&twin.payload, &case.payload);
        }
        // expansion is one-shot
        prop_assert!(doubled.mirror_expand().is_err());
    }

    #[test]
    fn generated_manifests_validate(seed in 0u64..10_000, n in 1usize..80) {
        let manifest = generate(&SynthConfig {
            n_groups: n,
            feature_dim: 5,
            separability: 0.5,
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        prop_assert!(manifest.validate().is_ok());
        prop_assert!(manifest.cases.iter().all(|c| c.labels.any_infection()));
    }
}
