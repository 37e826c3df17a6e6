//! Domain data model: cases, labels, manifests and prediction records.
//!
//! A [`Case`] is one eye-exam record. Records derived from the same original
//! exam (the exam itself plus its mirrored twin) share a `group_id`; the
//! splitter assigns groups, never individual cases, so twins can never leak
//! across split roles.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{mirror_horizontal, ImageTensor};

/// Number of joint infection states (three binary labels).
pub const JOINT_STATE_COUNT: usize = 8;

/// Joint indices in display order `H, B, F, A, BF, FA, BA, BFA`.
///
/// The joint index packs the bits as `bacteria + 2*fungi + 4*amoeba`; reports
/// list states in the clinical order above. The permutation is an involution,
/// so it maps both ways.
pub const JOINT_TABLE_ORDER: [usize; JOINT_STATE_COUNT] = [0, 1, 2, 4, 3, 6, 5, 7];

/// Display names for the joint states, in table order.
pub const JOINT_STATE_NAMES: [&str; JOINT_STATE_COUNT] =
    ["H", "B", "F", "A", "B,F", "F,A", "B,A", "B,F,A"];

/// Table position of a joint index (inverse of [`JOINT_TABLE_ORDER`]).
#[inline]
pub fn joint_table_pos(joint_index: usize) -> usize {
    JOINT_TABLE_ORDER[joint_index]
}

/// The three infection classification tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InfectionTask {
    Bacteria,
    Fungi,
    Amoeba,
}

impl InfectionTask {
    pub const ALL: [InfectionTask; 3] = [
        InfectionTask::Bacteria,
        InfectionTask::Fungi,
        InfectionTask::Amoeba,
    ];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            InfectionTask::Bacteria => 0,
            InfectionTask::Fungi => 1,
            InfectionTask::Amoeba => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InfectionTask::Bacteria => "bacteria",
            InfectionTask::Fungi => "fungi",
            InfectionTask::Amoeba => "amoeba",
        }
    }

    pub fn from_name(name: &str) -> Option<InfectionTask> {
        match name {
            "bacteria" => Some(InfectionTask::Bacteria),
            "fungi" => Some(InfectionTask::Fungi),
            "amoeba" => Some(InfectionTask::Amoeba),
            _ => None,
        }
    }
}

/// Ordered triple of binary infection states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabelVector {
    pub bacteria: bool,
    pub fungi: bool,
    pub amoeba: bool,
}

impl LabelVector {
    pub fn new(bacteria: bool, fungi: bool, amoeba: bool) -> Self {
        LabelVector {
            bacteria,
            fungi,
            amoeba,
        }
    }

    /// Joint state index: `bacteria + 2*fungi + 4*amoeba`.
    #[inline]
    pub fn joint_index(&self) -> usize {
        self.bacteria as usize + 2 * self.fungi as usize + 4 * self.amoeba as usize
    }

    pub fn from_joint_index(index: usize) -> Self {
        debug_assert!(index < JOINT_STATE_COUNT);
        LabelVector {
            bacteria: index & 1 != 0,
            fungi: index & 2 != 0,
            amoeba: index & 4 != 0,
        }
    }

    /// True when at least one infection is present.
    #[inline]
    pub fn any_infection(&self) -> bool {
        self.bacteria || self.fungi || self.amoeba
    }

    #[inline]
    pub fn get(&self, task: InfectionTask) -> bool {
        match task {
            InfectionTask::Bacteria => self.bacteria,
            InfectionTask::Fungi => self.fungi,
            InfectionTask::Amoeba => self.amoeba,
        }
    }

    /// Labels as 0/1 reals in task order, for loss targets.
    pub fn as_targets(&self) -> [f64; 3] {
        [
            self.bacteria as u8 as f64,
            self.fungi as u8 as f64,
            self.amoeba as u8 as f64,
        ]
    }
}

/// Patient sex, encoded 0 = male, 1 = female.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub fn from_u8(v: u8) -> Result<Sex> {
        match v {
            0 => Ok(Sex::Male),
            1 => Ok(Sex::Female),
            other => Err(Error::Argument(format!("sex must be 0 or 1, got {other}"))),
        }
    }

    #[inline]
    pub fn as_u8(self) -> u8 {
        match self {
            Sex::Male => 0,
            Sex::Female => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
        }
    }
}

/// Age bin: 0 is 0-17 years, 1 is 18-39, 2 is 40-64, 3 is 65 and above.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgeBin(u8);

impl AgeBin {
    pub const COUNT: usize = 4;

    pub fn new(bin: u8) -> Result<AgeBin> {
        if bin < 4 {
            Ok(AgeBin(bin))
        } else {
            Err(Error::Argument(format!("age_bin must be 0..=3, got {bin}")))
        }
    }

    /// Bin an age in years.
    pub fn from_age(years: u32) -> AgeBin {
        AgeBin(match years {
            0..=17 => 0,
            18..=39 => 1,
            40..=64 => 2,
            _ => 3,
        })
    }

    #[inline]
    pub fn as_u8(self) -> u8 {
        self.0
    }

    #[inline]
    pub fn as_index(self) -> usize {
        self.0 as usize
    }

    pub fn label(self) -> &'static str {
        match self.0 {
            0 => "0-17",
            1 => "18-39",
            2 => "40-64",
            _ => "65+",
        }
    }
}

/// Demographic attribute used for confounds and subgroup analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Attribute {
    Sex,
    AgeBin,
}

impl Attribute {
    pub fn name(self) -> &'static str {
        match self {
            Attribute::Sex => "sex",
            Attribute::AgeBin => "age_bin",
        }
    }

    pub fn from_name(name: &str) -> Option<Attribute> {
        match name {
            "sex" => Some(Attribute::Sex),
            "age_bin" => Some(Attribute::AgeBin),
            _ => None,
        }
    }

    /// Distinct attribute values, in reporting order.
    pub fn values(self) -> &'static [u8] {
        match self {
            Attribute::Sex => &[0, 1],
            Attribute::AgeBin => &[0, 1, 2, 3],
        }
    }

    /// Raw attribute value of a case.
    pub fn value_of(self, case: &Case) -> u8 {
        match self {
            Attribute::Sex => case.sex.as_u8(),
            Attribute::AgeBin => case.age_bin.as_u8(),
        }
    }

    /// Confound indicator: 1 when the attribute value equals 1.
    pub fn indicator(self, case: &Case) -> bool {
        self.value_of(case) == 1
    }

    pub fn value_label(self, value: u8) -> &'static str {
        match self {
            Attribute::Sex => {
                if value == 0 {
                    "male"
                } else {
                    "female"
                }
            }
            Attribute::AgeBin => match value {
                0 => "0-17",
                1 => "18-39",
                2 => "40-64",
                _ => "65+",
            },
        }
    }
}

/// Case input payload: either a resolved image or a feature vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Image(ImageTensor),
    Features(Vec<f64>),
}

/// Which payload family a case (or model trunk) works with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadMode {
    Image,
    Features,
}

impl PayloadMode {
    pub fn name(self) -> &'static str {
        match self {
            PayloadMode::Image => "image",
            PayloadMode::Features => "features",
        }
    }
}

impl Payload {
    pub fn mode(&self) -> PayloadMode {
        match self {
            Payload::Image(_) => PayloadMode::Image,
            Payload::Features(_) => PayloadMode::Features,
        }
    }

    pub fn features(&self) -> Option<&[f64]> {
        match self {
            Payload::Features(v) => Some(v),
            Payload::Image(_) => None,
        }
    }

    pub fn image(&self) -> Option<&ImageTensor> {
        match self {
            Payload::Image(img) => Some(img),
            Payload::Features(_) => None,
        }
    }
}

/// One eye-exam record.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub case_id: String,
    pub group_id: String,
    pub payload: Payload,
    pub labels: LabelVector,
    pub sex: Sex,
    pub age_bin: AgeBin,
    pub mirrored: bool,
}

impl Case {
    /// Check the per-case invariants (infection presence).
    pub fn validate(&self) -> Result<()> {
        if !self.labels.any_infection() {
            return Err(Error::Validation {
                case_id: self.case_id.clone(),
                field: "labels",
                message: "no infection: at least one of bacteria/fungi/amoeba must be 1"
                    .to_string(),
            });
        }
        Ok(())
    }
}

/// Where a manifest came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifestSource {
    Synthetic,
    External,
}

impl ManifestSource {
    pub fn name(self) -> &'static str {
        match self {
            ManifestSource::Synthetic => "synthetic",
            ManifestSource::External => "external",
        }
    }
}

/// Manifest-level metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestMeta {
    pub source: ManifestSource,
    pub seed: Option<u64>,
    pub feature_dim: Option<usize>,
    pub image_size: Option<usize>,
}

impl ManifestMeta {
    pub fn external() -> Self {
        ManifestMeta {
            source: ManifestSource::External,
            seed: None,
            feature_dim: None,
            image_size: None,
        }
    }
}

/// A validated collection of cases.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub cases: Vec<Case>,
    pub meta: ManifestMeta,
}

impl DatasetManifest {
    /// Build a manifest and run the full invariant check.
    pub fn new(cases: Vec<Case>, meta: ManifestMeta) -> Result<Self> {
        let m = DatasetManifest { cases, meta };
        m.validate()?;
        Ok(m)
    }

    /// Manifest-wide invariants: per-case checks, unique ids, and group
    /// consistency (cases sharing a group share labels and demographics).
    pub fn validate(&self) -> Result<()> {
        let mut seen_ids: BTreeMap<&str, ()> = BTreeMap::new();
        let mut group_ref: BTreeMap<&str, (&Case, usize)> = BTreeMap::new();
        let mut mode: Option<PayloadMode> = None;
        for case in &self.cases {
            case.validate()?;
            if seen_ids.insert(case.case_id.as_str(), ()).is_some() {
                return Err(Error::Manifest(format!(
                    "duplicate case_id `{}`",
                    case.case_id
                )));
            }
            match mode {
                None => mode = Some(case.payload.mode()),
                Some(m) if m != case.payload.mode() => {
                    return Err(Error::Manifest(format!(
                        "mixed payload modes: case `{}` is {} but earlier cases are {}",
                        case.case_id,
                        case.payload.mode().name(),
                        m.name()
                    )))
                }
                _ => {}
            }
            if let Payload::Features(v) = &case.payload {
                if let Some(d) = self.meta.feature_dim {
                    if v.len() != d {
                        return Err(Error::Validation {
                            case_id: case.case_id.clone(),
                            field: "payload",
                            message: format!("feature length {} differs from manifest dim {d}", v.len()),
                        });
                    }
                }
            }
            match group_ref.get(case.group_id.as_str()) {
                None => {
                    group_ref.insert(case.group_id.as_str(), (case, 1));
                }
                Some(&(first, n)) => {
                    if first.labels != case.labels
                        || first.sex != case.sex
                        || first.age_bin != case.age_bin
                    {
                        return Err(Error::Manifest(format!(
                            "group `{}` mixes labels or demographics (cases `{}` and `{}`)",
                            case.group_id, first.case_id, case.case_id
                        )));
                    }
                    group_ref.insert(case.group_id.as_str(), (first, n + 1));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn case(&self, case_id: &str) -> Option<&Case> {
        self.cases.iter().find(|c| c.case_id == case_id)
    }

    /// Shared payload mode of the manifest, if any case exists.
    pub fn payload_mode(&self) -> Option<PayloadMode> {
        self.cases.first().map(|c| c.payload.mode())
    }

    /// Group ids of non-mirrored cases with their (shared) label vectors, in
    /// first-appearance order.
    pub fn groups(&self) -> Vec<(String, LabelVector)> {
        let mut seen: BTreeMap<&str, ()> = BTreeMap::new();
        let mut out = Vec::new();
        for case in self.cases.iter().filter(|c| !c.mirrored) {
            if seen.insert(case.group_id.as_str(), ()).is_none() {
                out.push((case.group_id.clone(), case.labels));
            }
        }
        out
    }

    /// Double the manifest with mirrored twins.
    ///
    /// Each new case is the horizontal (y-axis) mirror of its source, keeps
    /// the source's group, labels and demographics, and is flagged
    /// `mirrored`. Feature payloads are copied unchanged since mirroring is
    /// an image-space concept. Fails if the input already contains mirrored
    /// cases, so the expansion cannot be applied twice.
    pub fn mirror_expand(&self) -> Result<DatasetManifest> {
        if let Some(c) = self.cases.iter().find(|c| c.mirrored) {
            return Err(Error::Argument(format!(
                "manifest already contains mirrored cases (e.g. `{}`); refusing double expansion",
                c.case_id
            )));
        }
        let mut cases = Vec::with_capacity(self.cases.len() * 2);
        for case in &self.cases {
            cases.push(case.clone());
            let payload = match &case.payload {
                Payload::Image(img) => Payload::Image(mirror_horizontal(img)),
                Payload::Features(v) => Payload::Features(v.clone()),
            };
            cases.push(Case {
                case_id: format!("{}__mirror", case.case_id),
                group_id: case.group_id.clone(),
                payload,
                labels: case.labels,
                sex: case.sex,
                age_bin: case.age_bin,
                mirrored: true,
            });
        }
        DatasetManifest::new(cases, self.meta.clone())
    }
}

/// Convenience free function mirroring [`DatasetManifest::mirror_expand`].
pub fn mirror_expand(manifest: &DatasetManifest) -> Result<DatasetManifest> {
    manifest.mirror_expand()
}

/// Role of a case within one evaluation round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SplitRole {
    Train,
    Validation,
    Test,
}

impl SplitRole {
    pub fn name(self) -> &'static str {
        match self {
            SplitRole::Train => "train",
            SplitRole::Validation => "validation",
            SplitRole::Test => "test",
        }
    }

    pub fn from_name(name: &str) -> Option<SplitRole> {
        match name {
            "train" => Some(SplitRole::Train),
            "validation" => Some(SplitRole::Validation),
            "test" => Some(SplitRole::Test),
            _ => None,
        }
    }
}

/// Per-case raw scores produced by a model for one evaluation round.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub case_id: String,
    pub fold: usize,
    pub role: SplitRole,
    /// Infection scores in task order (bacteria, fungi, amoeba).
    pub scores: [f64; 3],
    pub score_sex: Option<f64>,
    pub probs_age: Option<[f64; 4]>,
}

impl PredictionRecord {
    const SIMPLEX_TOL: f64 = 1e-9;

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.scores.iter().enumerate() {
            if !(0.0..=1.0).contains(s) {
                return Err(Error::Validation {
                    case_id: self.case_id.clone(),
                    field: "scores",
                    message: format!(
                        "score_{} = {s} outside [0,1]",
                        InfectionTask::ALL[i].name()
                    ),
                });
            }
        }
        if let Some(s) = self.score_sex {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Validation {
                    case_id: self.case_id.clone(),
                    field: "score_sex",
                    message: format!("score_sex = {s} outside [0,1]"),
                });
            }
        }
        if let Some(p) = &self.probs_age {
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > Self::SIMPLEX_TOL || p.iter().any(|&x| x < 0.0) {
                return Err(Error::Validation {
                    case_id: self.case_id.clone(),
                    field: "probs_age",
                    message: format!("probs_age must be a simplex (sum {sum})"),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn feature_case(id: &str, group: &str, labels: LabelVector) -> Case {
        Case {
            case_id: id.to_string(),
            group_id: group.to_string(),
            payload: Payload::Features(vec![0.0, 1.0]),
            labels,
            sex: Sex::Male,
            age_bin: AgeBin::new(1).unwrap(),
            mirrored: false,
        }
    }

    #[test]
    fn joint_index_packing() {
        let lv = LabelVector::new(true, true, false);
        assert_eq!(lv.joint_index(), 3);
        assert_eq!(LabelVector::from_joint_index(3), lv);
        for i in 0..8 {
            assert_eq!(LabelVector::from_joint_index(i).joint_index(), i);
        }
    }

    #[test]
    fn joint_table_order_is_involution() {
        for i in 0..8 {
            assert_eq!(joint_table_pos(joint_table_pos(i)), i);
        }
        // H,B,F,A,BF,FA,BA,BFA positions
        assert_eq!(joint_table_pos(LabelVector::new(false, true, true).joint_index()), 5);
        assert_eq!(joint_table_pos(LabelVector::new(true, false, true).joint_index()), 6);
    }

    #[test]
    fn age_binning_matches_conversion_table() {
        assert_eq!(AgeBin::from_age(0).as_u8(), 0);
        assert_eq!(AgeBin::from_age(17).as_u8(), 0);
        assert_eq!(AgeBin::from_age(18).as_u8(), 1);
        assert_eq!(AgeBin::from_age(39).as_u8(), 1);
        assert_eq!(AgeBin::from_age(40).as_u8(), 2);
        assert_eq!(AgeBin::from_age(64).as_u8(), 2);
        assert_eq!(AgeBin::from_age(65).as_u8(), 3);
        assert_eq!(AgeBin::from_age(90).as_u8(), 3);
    }

    #[test]
    fn no_infection_case_rejected() {
        let case = feature_case("c1", "g1", LabelVector::new(false, false, false));
        let err = case.validate().unwrap_err();
        match err {
            Error::Validation { case_id, message, .. } => {
                assert_eq!(case_id, "c1");
                assert!(message.contains("no infection"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let meta = ManifestMeta::external();
        let cases = vec![
            feature_case("c1", "g1", LabelVector::new(true, false, false)),
            feature_case("c1", "g2", LabelVector::new(true, false, false)),
        ];
        assert!(matches!(
            DatasetManifest::new(cases, meta),
            Err(Error::Manifest(_))
        ));
    }

    #[test]
    fn group_label_consistency_enforced() {
        let meta = ManifestMeta::external();
        let cases = vec![
            feature_case("c1", "g1", LabelVector::new(true, false, false)),
            feature_case("c2", "g1", LabelVector::new(false, true, false)),
        ];
        assert!(matches!(
            DatasetManifest::new(cases, meta),
            Err(Error::Manifest(_))
        ));
    }

    #[test]
    fn mirror_expand_doubles_and_flags() {
        let meta = ManifestMeta::external();
        let cases = vec![
            feature_case("c1", "g1", LabelVector::new(true, false, false)),
            feature_case("c2", "g2", LabelVector::new(false, true, true)),
        ];
        let m = DatasetManifest::new(cases, meta).unwrap();
        let doubled = m.mirror_expand().unwrap();
        assert_eq!(doubled.len(), 4);
        let twin = doubled.case("c2__mirror").unwrap();
        assert!(twin.mirrored);
        assert_eq!(twin.group_id, "g2");
        assert_eq!(twin.labels, LabelVector::new(false, true, true));
        assert_eq!(twin.payload, Payload::Features(vec![0.0, 1.0]));
        // expanding twice is forbidden
        assert!(matches!(doubled.mirror_expand(), Err(Error::Argument(_))));
    }

    #[test]
    fn prediction_record_validation() {
        let mut rec = PredictionRecord {
            case_id: "c1".to_string(),
            fold: 0,
            role: SplitRole::Test,
            scores: [0.2, 0.5, 0.9],
            score_sex: None,
            probs_age: None,
        };
        rec.validate().unwrap();
        rec.scores[1] = 1.2;
        assert!(rec.validate().is_err());
        rec.scores[1] = 0.5;
        rec.probs_age = Some([0.25, 0.25, 0.25, 0.2]);
        assert!(rec.validate().is_err());
        rec.probs_age = Some([0.25, 0.25, 0.25, 0.25]);
        rec.validate().unwrap();
    }
}
