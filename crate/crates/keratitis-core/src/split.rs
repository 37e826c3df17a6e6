//! Grouped, stratified k-fold assignment with leakage verification.
//!
//! Folds are assigned to groups, never to cases: every record sharing a
//! `group_id` (an original exam and its mirrored twin) lands in the same
//! fold, so no twin can sit on both sides of a split. Stratification uses
//! the 8-state joint label index of each group; within a label combination,
//! groups are shuffled by a seeded generator and dealt round-robin, which
//! keeps every per-fold combination count within one of the ideal share.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{DatasetManifest, SplitRole};
use crate::error::{Error, Result};
use crate::rng::{stream, Rng};

/// Split parameters. The validation fold is always the fold cyclically
/// following the test fold, so the realized fractions are
/// `((k-2)/k, 1/k, 1/k)`; the stored fractions document the intent and must
/// sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    pub k: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            k: 10,
            train_fraction: 0.8,
            val_fraction: 0.1,
            test_fraction: 0.1,
            seed: 0,
        }
    }
}

impl SplitConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        SplitConfig {
            k,
            train_fraction: (k as f64 - 2.0) / k as f64,
            val_fraction: 1.0 / k as f64,
            test_fraction: 1.0 / k as f64,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Argument(format!("k must be >= 2, got {}", self.k)));
        }
        let sum = self.train_fraction + self.val_fraction + self.test_fraction;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!(
                "train/val/test fractions must sum to 1, got {sum}"
            )));
        }
        // k = 2 leaves no train fold under the cyclic scheme, which is a
        // valid (if degenerate) assignment; training later reports the
        // empty split
        if self.train_fraction < 0.0 || self.val_fraction <= 0.0 || self.test_fraction <= 0.0 {
            return Err(Error::Argument(
                "validation/test fractions must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Group sets of one evaluation round.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoundSplit {
    pub test: BTreeSet<String>,
    pub validation: BTreeSet<String>,
    pub train: BTreeSet<String>,
}

impl RoundSplit {
    pub fn role_of(&self, group_id: &str) -> Option<SplitRole> {
        if self.test.contains(group_id) {
            Some(SplitRole::Test)
        } else if self.validation.contains(group_id) {
            Some(SplitRole::Validation)
        } else if self.train.contains(group_id) {
            Some(SplitRole::Train)
        } else {
            None
        }
    }
}

/// Mapping of groups to folds and of folds to per-round roles.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldAssignment {
    pub k: usize,
    pub rounds: Vec<RoundSplit>,
}

impl FoldAssignment {
    /// Build the cyclic round structure from a group -> fold map: round `r`
    /// tests fold `r`, validates on fold `(r+1) % k` and trains on the rest.
    pub fn from_group_folds(k: usize, folds: &BTreeMap<String, usize>) -> FoldAssignment {
        let mut rounds = Vec::with_capacity(k);
        for r in 0..k {
            let mut split = RoundSplit::default();
            let val_fold = (r + 1) % k;
            for (g, &f) in folds {
                if f == r {
                    split.test.insert(g.clone());
                } else if f == val_fold {
                    split.validation.insert(g.clone());
                } else {
                    split.train.insert(g.clone());
                }
            }
            rounds.push(split);
        }
        FoldAssignment { k, rounds }
    }

    /// Fold of a group, derived from the round where it is under test.
    pub fn fold_of(&self, group_id: &str) -> Option<usize> {
        self.rounds.iter().position(|r| r.test.contains(group_id))
    }

    /// Group -> fold view (each group's test round), sorted by group id.
    pub fn group_folds(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for (r, split) in self.rounds.iter().enumerate() {
            for g in &split.test {
                out.entry(g.clone()).or_insert(r);
            }
        }
        out
    }

    pub fn role_of(&self, round: usize, group_id: &str) -> Option<SplitRole> {
        self.rounds.get(round).and_then(|s| s.role_of(group_id))
    }
}

/// Assign groups to folds, stratified on the joint label combination.
///
/// Only non-mirrored cases define the groups; mirrored twins inherit their
/// source's fold through the shared `group_id`.
pub fn assign_folds(manifest: &DatasetManifest, config: &SplitConfig) -> Result<FoldAssignment> {
    config.validate()?;
    let groups = manifest.groups();
    if groups.len() < config.k {
        return Err(Error::Argument(format!(
            "need at least k={} groups, manifest has {}",
            config.k,
            groups.len()
        )));
    }

    // label combination -> group ids, in first-appearance order
    let mut by_combo: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (group_id, labels) in groups {
        by_combo.entry(labels.joint_index()).or_default().push(group_id);
    }

    let mut rng = Rng::with_stream(config.seed, &[stream::SPLIT]);
    let mut folds: BTreeMap<String, usize> = BTreeMap::new();
    // deal each combination round-robin, continuing around the fold circle
    // so overall fold sizes stay balanced too
    let mut cursor = 0usize;
    for (_, mut members) in by_combo {
        rng.shuffle(&mut members);
        for group_id in members {
            folds.insert(group_id, cursor % config.k);
            cursor += 1;
        }
    }

    Ok(FoldAssignment::from_group_folds(config.k, &folds))
}

/// One detected leakage or partition defect.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// A group appears in more than one role within a round.
    GroupSpansRoles { round: usize, group_id: String },
    /// A manifest group is missing from a round's partition.
    MissingGroup { round: usize, group_id: String },
    /// The assignment references a group absent from the manifest.
    UnknownGroup { round: usize, group_id: String },
    /// A group is under test in no round, or in more than one.
    TestCoverage { group_id: String, times: usize },
}

impl core::fmt::Display for Violation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Violation::GroupSpansRoles { round, group_id } => {
                write!(f, "round {round}: group `{group_id}` appears in multiple roles")
            }
            Violation::MissingGroup { round, group_id } => {
                write!(f, "round {round}: group `{group_id}` missing from the partition")
            }
            Violation::UnknownGroup { round, group_id } => {
                write!(f, "round {round}: group `{group_id}` not present in the manifest")
            }
            Violation::TestCoverage { group_id, times } => {
                write!(f, "group `{group_id}` is a test group {times} times (expected once)")
            }
        }
    }
}

/// Leakage/partition verification result; empty means clean.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LeakageReport {
    pub violations: Vec<Violation>,
}

impl LeakageReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Verify the partition and co-location invariants of an assignment.
///
/// Violations are data, not errors: the report lists each defect found.
pub fn verify_no_leakage(manifest: &DatasetManifest, assignment: &FoldAssignment) -> LeakageReport {
    let mut report = LeakageReport::default();
    let manifest_groups: BTreeSet<&str> = manifest.cases.iter().map(|c| c.group_id.as_str()).collect();

    let mut test_times: BTreeMap<&str, usize> = BTreeMap::new();
    for (round, split) in assignment.rounds.iter().enumerate() {
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for set in [&split.test, &split.validation, &split.train] {
            for g in set {
                *seen.entry(g.as_str()).or_insert(0) += 1;
            }
        }
        for (g, n) in &seen {
            if *n > 1 {
                report.violations.push(Violation::GroupSpansRoles {
                    round,
                    group_id: String::from(*g),
                });
            }
            if !manifest_groups.contains(g) {
                report.violations.push(Violation::UnknownGroup {
                    round,
                    group_id: String::from(*g),
                });
            }
        }
        for g in &manifest_groups {
            if !seen.contains_key(g) {
                report.violations.push(Violation::MissingGroup {
                    round,
                    group_id: String::from(*g),
                });
            }
        }
        for g in &split.test {
            *test_times.entry(g.as_str()).or_insert(0) += 1;
        }
    }

    for g in &manifest_groups {
        let times = test_times.get(g).copied().unwrap_or(0);
        if times != 1 {
            report.violations.push(Violation::TestCoverage {
                group_id: String::from(*g),
                times,
            });
        }
    }

    report
}
