//! Run configuration: one JSON file drives the whole pipeline, with a few
//! command-line overrides layered on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use keratitis_core::data::{Attribute, InfectionTask};
use keratitis_core::image::AugmentConfig;
use keratitis_core::model::{LossSpec, TrainConfig, Variant, DEFAULT_PRICES};
use keratitis_core::split::SplitConfig;
use keratitis_core::stats::TTestFlavor;
use keratitis_core::synth::{Confound, SynthConfig};

use crate::error::{CliError, Result};

/// Exactly one data source per run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Generate a synthetic manifest.
    Synthetic(SynthSection),
    /// Load an existing manifest CSV.
    Manifest(PathBuf),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    pub n_groups: usize,
    pub combo_weights: [f64; 5],
    pub sex_p_female: f64,
    pub age_bin_probs: [f64; 4],
    pub feature_dim: usize,
    pub separability: f64,
    /// Generative attribute-task couplings.
    pub confounds: Vec<ConfoundSection>,
    /// Post-hoc feature shifts injected after generation.
    pub inject: Vec<ConfoundSection>,
    /// Add mirrored twins after generation.
    pub mirror: bool,
}

impl Default for SynthSection {
    fn default() -> Self {
        let base = SynthConfig::default();
        SynthSection {
            n_groups: base.n_groups,
            combo_weights: base.combo_weights,
            sex_p_female: base.sex_p_female,
            age_bin_probs: base.age_bin_probs,
            feature_dim: base.feature_dim,
            separability: base.separability,
            confounds: Vec::new(),
            inject: Vec::new(),
            mirror: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfoundSection {
    pub attribute: String,
    pub task: String,
    pub strength: f64,
}

impl ConfoundSection {
    pub fn resolve(&self) -> Result<Confound> {
        let attribute = Attribute::from_name(&self.attribute).ok_or_else(|| {
            CliError::Validation(format!("unknown attribute `{}`", self.attribute))
        })?;
        let task = InfectionTask::from_name(&self.task)
            .ok_or_else(|| CliError::Validation(format!("unknown task `{}`", self.task)))?;
        Ok(Confound {
            attribute,
            task,
            strength: self.strength,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSection {
    pub k: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { k: 10 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    /// Infection model family: `ST`, `Mv1` or `Mv2`.
    pub variant: String,
    pub hidden: usize,
    pub dropout: f64,
    pub batchnorm: bool,
    /// Resize images to this side length at load (image manifests only).
    pub image_size: usize,
    /// Train auxiliary sex / age prediction models alongside.
    pub aux_sex: bool,
    pub aux_age: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            variant: "Mv2".to_string(),
            hidden: 32,
            dropout: 0.3,
            batchnorm: true,
            image_size: 224,
            aux_sex: false,
            aux_age: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub freeze_epochs: usize,
    pub early_stop_patience: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let base = TrainConfig::default();
        TrainSection {
            epochs: base.epochs,
            batch_size: base.batch_size,
            learning_rate: base.learning_rate,
            weight_decay: base.weight_decay,
            freeze_epochs: base.freeze_epochs,
            early_stop_patience: base.early_stop_patience,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LossSection {
    pub clinical: bool,
    pub prices: [f64; 3],
    pub flasks: [u32; 3],
    pub months: [f64; 3],
    pub mix: (f64, f64),
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            clinical: false,
            prices: DEFAULT_PRICES,
            flasks: [1, 1, 1],
            months: [1.0, 1.0, 1.0],
            mix: (0.8, 0.2),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdSection {
    /// `fixed` or `youden`.
    pub mode: String,
    /// Decision threshold in fixed mode.
    pub value: f64,
}

impl Default for ThresholdSection {
    fn default() -> Self {
        ThresholdSection {
            mode: "fixed".to_string(),
            value: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsSection {
    pub attributes: Vec<String>,
    pub t_test: String,
}

impl Default for StatsSection {
    fn default() -> Self {
        StatsSection {
            attributes: vec!["sex".to_string(), "age_bin".to_string()],
            t_test: "welch".to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct AugmentSection {
    pub rotation_degrees: Option<f64>,
    pub vertical_flip_prob: Option<f64>,
    pub blur_prob: Option<f64>,
    pub blur_sigma: Option<(f64, f64)>,
    pub brightness: Option<f64>,
    pub contrast: Option<f64>,
    pub saturation: Option<f64>,
    pub hue: Option<f64>,
}

/// The run configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataSource,
    #[serde(default)]
    pub workdir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub threshold: ThresholdSection,
    #[serde(default)]
    pub stats: StatsSection,
    #[serde(default)]
    pub augment: AugmentSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Validation(format!("config serialization: {e}")))?;
        std::fs::write(path, format!("{text}\n")).map_err(|e| CliError::io(path, e))
    }

    pub fn synth_config(&self) -> Result<Option<SynthConfig>> {
        match &self.data {
            DataSource::Manifest(_) => Ok(None),
            DataSource::Synthetic(section) => {
                let mut confounds = Vec::new();
                for c in &section.confounds {
                    confounds.push(c.resolve()?);
                }
                Ok(Some(SynthConfig {
                    n_groups: section.n_groups,
                    combo_weights: section.combo_weights,
                    sex_p_female: section.sex_p_female,
                    age_bin_probs: section.age_bin_probs,
                    feature_dim: section.feature_dim,
                    separability: section.separability,
                    confounds,
                    seed: self.seed,
                }))
            }
        }
    }

    pub fn split_config(&self) -> SplitConfig {
        SplitConfig::new(self.split.k, self.seed)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            weight_decay: self.train.weight_decay,
            freeze_epochs: self.train.freeze_epochs,
            early_stop_patience: self.train.early_stop_patience,
            seed,
        }
    }

    pub fn infection_variants(&self) -> Result<Vec<Variant>> {
        match self.model.variant.as_str() {
            "Mv1" => Ok(vec![Variant::MultitaskV1]),
            "Mv2" => Ok(vec![Variant::MultitaskV2]),
            "ST" => Ok(vec![
                Variant::SingleTask(InfectionTask::Bacteria),
                Variant::SingleTask(InfectionTask::Fungi),
                Variant::SingleTask(InfectionTask::Amoeba),
            ]),
            other => Err(CliError::Validation(format!(
                "unknown model variant `{other}` (expected ST, Mv1 or Mv2)"
            ))),
        }
    }

    pub fn adaptive_thresholds(&self) -> Result<bool> {
        match self.threshold.mode.as_str() {
            "fixed" => Ok(false),
            "youden" => Ok(true),
            other => Err(CliError::Validation(format!(
                "unknown threshold mode `{other}` (expected fixed or youden)"
            ))),
        }
    }

    pub fn t_test_flavor(&self) -> Result<TTestFlavor> {
        TTestFlavor::from_name(&self.stats.t_test).ok_or_else(|| {
            CliError::Validation(format!(
                "unknown t-test flavor `{}` (expected welch or student)",
                self.stats.t_test
            ))
        })
    }

    pub fn stats_attributes(&self) -> Result<Vec<Attribute>> {
        self.stats
            .attributes
            .iter()
            .map(|name| {
                Attribute::from_name(name)
                    .ok_or_else(|| CliError::Validation(format!("unknown attribute `{name}`")))
            })
            .collect()
    }

    pub fn loss_spec(&self, class_weights: Vec<f64>) -> Result<LossSpec> {
        let hw = keratitis_core::model::hospital_weights(
            &self.loss.prices,
            &self.loss.flasks,
            &self.loss.months,
        )?;
        let mut spec = LossSpec::new(class_weights, hw.to_vec())?;
        spec.mix = self.loss.mix;
        Ok(spec)
    }

    pub fn augment_config(&self) -> AugmentConfig {
        let mut cfg = AugmentConfig::default();
        let section = &self.augment;
        if let Some(v) = section.rotation_degrees {
            cfg.rotation_degrees = v;
        }
        if let Some(v) = section.vertical_flip_prob {
            cfg.vertical_flip_prob = v;
        }
        if let Some(v) = section.blur_prob {
            cfg.blur_prob = v;
        }
        if let Some(v) = section.blur_sigma {
            cfg.blur_sigma = v;
        }
        if let Some(v) = section.brightness {
            cfg.brightness = v;
        }
        if let Some(v) = section.contrast {
            cfg.contrast = v;
        }
        if let Some(v) = section.saturation {
            cfg.saturation = v;
        }
        if let Some(v) = section.hue {
            cfg.hue = v;
        }
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let json = r#"{ "data": { "synthetic": { "n_groups": 100 } } }"#;
        let cfg: RunConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.split.k, 10);
        assert_eq!(cfg.model.variant, "Mv2");
        assert!(!cfg.loss.clinical);
        let synth = cfg.synth_config().unwrap().unwrap();
        assert_eq!(synth.n_groups, 100);
        assert_eq!(synth.feature_dim, 16);
        assert!(!cfg.adaptive_thresholds().unwrap());
    }

    #[test]
    fn manifest_source_with_youden() {
        let json = r#"{
            "data": { "manifest": "data/manifest.csv" },
            "threshold": { "mode": "youden" },
            "model": { "variant": "ST" }
        }"#;
        let cfg: RunConfig = serde_json::from_str(json).unwrap();
        assert!(cfg.synth_config().unwrap().is_none());
        assert!(cfg.adaptive_thresholds().unwrap());
        assert_eq!(cfg.infection_variants().unwrap().len(), 3);
    }

    #[test]
    fn bad_variant_and_threshold_mode_rejected() {
        let json = r#"{
            "data": { "synthetic": {} },
            "model": { "variant": "Mv3" },
            "threshold": { "mode": "magic" }
        }"#;
        let cfg: RunConfig = serde_json::from_str(json).unwrap();
        assert!(cfg.infection_variants().is_err());
        assert!(cfg.adaptive_thresholds().is_err());
    }

    #[test]
    fn config_round_trip() {
        let json = r#"{
            "data": { "synthetic": { "n_groups": 50, "separability": 2.5,
                "inject": [{ "attribute": "sex", "task": "amoeba", "strength": 0.8 }] } },
            "seed": 7,
            "loss": { "clinical": true }
        }"#;
        let cfg: RunConfig = serde_json::from_str(json).unwrap();
        let tmp = tempfile::TempDir::new().unwrap();
        let path = tmp.path().join("config.json");
        cfg.save(&path).unwrap();
        let back = RunConfig::load(&path).unwrap();
        assert_eq!(back.seed, 7);
        assert!(back.loss.clinical);
        match &back.data {
            DataSource::Synthetic(s) => {
                assert_eq!(s.n_groups, 50);
                assert_eq!(s.inject.len(), 1);
            }
            _ => panic!("wrong source"),
        }
    }
}
