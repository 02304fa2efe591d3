//! Run configuration: one TOML file covering dataset paths, class mode,
//! split parameters, both training stages, metric and saliency knobs, the
//! output directory and the global seed.
//!
//! Validation collects every violation instead of stopping at the first.
//! The fully-defaulted effective config is echoed into the output directory
//! so a run can be reproduced from its own artifacts. `CXR_TRIAGE_OUT_DIR`
//! overrides `output_dir` at load time.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::ClassMode;
use crate::error::{Error, Result};
use crate::model::{BackboneKind, ClassifierSpec, WeightsInit};
use crate::saliency::MaskSpec;
use crate::seeding;
use crate::trainer::{OptimizerParams, StageConfig};

/// Environment override for the output directory.
pub const OUT_DIR_ENV: &str = "CXR_TRIAGE_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub class_mode: ClassMode,
    /// Positional per class, minority last. Accepts a list (`[5, 5, 5, 1]`)
    /// or the colon form (`"5:5:5:1"`).
    #[serde(deserialize_with = "deserialize_ratio")]
    pub sampling_ratio: Option<Vec<u32>>,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub stage1: StageFileConfig,
    pub stage2: StageFileConfig,
    pub metrics: MetricsConfig,
    pub saliency: SaliencyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            class_mode: ClassMode::FourClass,
            sampling_ratio: None,
            output_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            split: SplitConfig::default(),
            model: ModelConfig::default(),
            stage1: StageFileConfig::stage1_default(),
            stage2: StageFileConfig::stage2_default(),
            metrics: MetricsConfig::default(),
            saliency: SaliencyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub covid_image_dir: PathBuf,
    pub covid_metadata: PathBuf,
    pub pneumonia_dir: PathBuf,
    /// Manifest location; defaults to `<output_dir>/manifest.tsv`.
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub val_count: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_fraction: 0.2,
            val_count: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// `densenet121` or `tiny`.
    pub backbone: String,
    pub pretrained_weights: Option<PathBuf>,
    pub pretrained_sha256: Option<String>,
    pub target_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: "densenet121".into(),
            pretrained_weights: None,
            pretrained_sha256: None,
            target_size: 224,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageFileConfig {
    /// Must be a positive multiple of the sampling ratio sum; defaults to
    /// the smallest one.
    pub batch_size: Option<usize>,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Off by default; left configurable for regularization studies.
    pub weight_decay: f64,
    pub grad_clip_norm: Option<f64>,
    pub augment: bool,
}

impl StageFileConfig {
    fn stage_default(max_epochs: usize) -> Self {
        StageFileConfig {
            batch_size: None,
            max_epochs,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.0,
            grad_clip_norm: None,
            augment: true,
        }
    }

    pub fn stage1_default() -> Self {
        Self::stage_default(30)
    }

    pub fn stage2_default() -> Self {
        Self::stage_default(10)
    }
}

impl Default for StageFileConfig {
    fn default() -> Self {
        Self::stage1_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub bootstrap_resamples: usize,
    pub bootstrap_resample_size: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            bootstrap_resamples: 100,
            bootstrap_resample_size: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaliencyConfig {
    pub num_masks: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub keep_probability: f64,
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        SaliencyConfig {
            num_masks: 1000,
            grid_h: 7,
            grid_w: 7,
            keep_probability: 0.5,
        }
    }
}

fn deserialize_ratio<'de, D>(deserializer: D) -> std::result::Result<Option<Vec<u32>>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    use serde::de::Error as DeError;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum RatioForm {
        Text(String),
        List(Vec<u32>),
    }

    Option::<RatioForm>::deserialize(deserializer)?
        .map(|form| match form {
            RatioForm::List(v) => Ok(v),
            RatioForm::Text(s) => s
                .split(':')
                .map(|part| {
                    part.trim().parse::<u32>().map_err(|_| {
                        DeError::custom(format!(
                            "sampling_ratio: {part:?} is not an integer in {s:?}"
                        ))
                    })
                })
                .collect(),
        })
        .transpose()
}

/// Which referenced paths a command needs to exist right now.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathsFor {
    /// Source datasets must be readable.
    PrepareData,
    /// A manifest must already exist.
    Training,
    /// Nothing beyond the config itself.
    NoneRequired,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(vec![format!("{}: {e}", path.display())]))?;
        if let Ok(out) = std::env::var(OUT_DIR_ENV) {
            if !out.is_empty() {
                cfg.output_dir = PathBuf::from(out);
            }
        }
        Ok(cfg)
    }

    pub fn class_names(&self) -> Vec<String> {
        self.class_mode.class_names()
    }

    pub fn sampling_ratio(&self) -> Vec<u32> {
        self.sampling_ratio
            .clone()
            .unwrap_or_else(|| self.class_mode.default_sampling_ratio())
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.data
            .manifest
            .clone()
            .unwrap_or_else(|| self.output_dir.join("manifest.tsv"))
    }

    fn ratio_sum(&self) -> usize {
        self.sampling_ratio().iter().map(|&r| r as usize).sum()
    }

    pub fn stage_batch_size(&self, stage: &StageFileConfig) -> usize {
        stage.batch_size.unwrap_or_else(|| self.ratio_sum())
    }

    pub fn stage_config(&self, stage: u8) -> StageConfig {
        let file_cfg = if stage == 1 { &self.stage1 } else { &self.stage2 };
        StageConfig {
            stage,
            backbone_trainable: stage == 2,
            optimizer: OptimizerParams {
                learning_rate: file_cfg.learning_rate,
                beta1: file_cfg.beta1,
                beta2: file_cfg.beta2,
                weight_decay: file_cfg.weight_decay,
                grad_clip_norm: file_cfg.grad_clip_norm,
            },
            batch_size: self.stage_batch_size(file_cfg),
            max_epochs: file_cfg.max_epochs,
            seed: seeding::derive_seed(self.seed, if stage == 1 { "stage1" } else { "stage2" }),
            augment: file_cfg.augment,
        }
    }

    pub fn classifier_spec(&self) -> Result<ClassifierSpec> {
        let backbone = BackboneKind::parse(&self.model.backbone).ok_or_else(|| {
            Error::InvalidConfig(vec![format!(
                "model.backbone {:?} is not densenet121 or tiny",
                self.model.backbone
            )])
        })?;
        let init = match &self.model.pretrained_weights {
            Some(path) => WeightsInit::Pretrained {
                path: path.clone(),
                sha256: self.model.pretrained_sha256.clone(),
            },
            None => WeightsInit::Random,
        };
        Ok(ClassifierSpec {
            num_classes: self.class_mode.num_classes(),
            backbone,
            init,
            seed: seeding::derive_seed(self.seed, "init"),
        })
    }

    pub fn mask_spec(&self) -> MaskSpec {
        MaskSpec {
            num_masks: self.saliency.num_masks,
            grid_h: self.saliency.grid_h,
            grid_w: self.saliency.grid_w,
            keep_probability: self.saliency.keep_probability,
            seed: seeding::derive_seed(self.seed, "masks"),
        }
    }

    pub fn split_seed(&self) -> u64 {
        seeding::derive_seed(self.seed, "split")
    }

    pub fn bootstrap_seed(&self) -> u64 {
        seeding::derive_seed(self.seed, "bootstrap")
    }

    /// Collects every violation; `paths` selects which referenced files
    /// must exist for the command at hand.
    pub fn validate(&self, paths: PathsFor) -> Result<()> {
        let mut problems = Vec::new();

        let num_classes = self.class_mode.num_classes();
        let ratio = self.sampling_ratio();
        if ratio.len() != num_classes {
            problems.push(format!(
                "sampling_ratio has {} entries but the class mode has {num_classes} classes",
                ratio.len()
            ));
        }
        if ratio.contains(&0) {
            problems.push("sampling_ratio entries must be >= 1".into());
        }
        let ratio_sum: usize = ratio.iter().map(|&r| r as usize).sum();
        for (name, stage) in [("stage1", &self.stage1), ("stage2", &self.stage2)] {
            let batch = self.stage_batch_size(stage);
            if ratio_sum > 0 && !batch.is_multiple_of(ratio_sum) {
                problems.push(format!(
                    "{name}.batch_size {batch} is not a multiple of the sampling ratio sum {ratio_sum}"
                ));
            }
            if stage.max_epochs == 0 {
                problems.push(format!("{name}.max_epochs must be >= 1"));
            }
            if !stage.learning_rate.is_finite() || stage.learning_rate <= 0.0 {
                problems.push(format!("{name}.learning_rate must be > 0"));
            }
            for (beta_name, beta) in [("beta1", stage.beta1), ("beta2", stage.beta2)] {
                if !beta.is_finite() || beta <= 0.0 || beta >= 1.0 {
                    problems.push(format!("{name}.{beta_name} must be in (0,1), got {beta}"));
                }
            }
            if !stage.weight_decay.is_finite() || stage.weight_decay < 0.0 {
                problems.push(format!("{name}.weight_decay must be >= 0"));
            }
            if let Some(clip) = stage.grad_clip_norm {
                if !clip.is_finite() || clip <= 0.0 {
                    problems.push(format!("{name}.grad_clip_norm must be > 0, got {clip}"));
                }
            }
        }
        let fraction = self.split.test_fraction;
        if !fraction.is_finite() || fraction <= 0.0 || fraction >= 1.0 {
            problems.push(format!("split.test_fraction must be in (0,1), got {fraction}"));
        }
        if self.model.target_size == 0 {
            problems.push("model.target_size must be > 0".into());
        }
        if BackboneKind::parse(&self.model.backbone).is_none() {
            problems.push(format!(
                "model.backbone {:?} is not densenet121 or tiny",
                self.model.backbone
            ));
        }
        if self.metrics.bootstrap_resamples == 0 {
            problems.push("metrics.bootstrap_resamples must be >= 1".into());
        }
        if self.metrics.bootstrap_resample_size == 0 {
            problems.push("metrics.bootstrap_resample_size must be >= 1".into());
        }
        if self.saliency.num_masks == 0 {
            problems.push("saliency.num_masks must be >= 1".into());
        }
        let keep = self.saliency.keep_probability;
        if !keep.is_finite() || keep <= 0.0 || keep > 1.0 {
            problems.push(format!("saliency.keep_probability must be in (0,1], got {keep}"));
        }

        match paths {
            PathsFor::PrepareData => {
                if !self.data.covid_image_dir.is_dir() {
                    problems.push(format!(
                        "data.covid_image_dir {} is not a directory",
                        self.data.covid_image_dir.display()
                    ));
                }
                if !self.data.covid_metadata.is_file() {
                    problems.push(format!(
                        "data.covid_metadata {} is not a file",
                        self.data.covid_metadata.display()
                    ));
                }
                if !self.data.pneumonia_dir.is_dir() {
                    problems.push(format!(
                        "data.pneumonia_dir {} is not a directory",
                        self.data.pneumonia_dir.display()
                    ));
                }
            }
            PathsFor::Training => {
                if !self.manifest_path().is_file() {
                    problems.push(format!(
                        "manifest {} does not exist; run prepare-data first",
                        self.manifest_path().display()
                    ));
                }
                if let Some(w) = &self.model.pretrained_weights {
                    if !w.is_file() {
                        problems.push(format!(
                            "model.pretrained_weights {} does not exist",
                            w.display()
                        ));
                    }
                }
            }
            PathsFor::NoneRequired => {}
        }

        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }

    /// Echo the fully-defaulted effective configuration.
    pub fn write_effective(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::InvalidConfig(vec![format!("cannot encode config: {e}")]))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
