//! The classifier: a densely connected backbone with a C-way sigmoid head.
//!
//! The head produces independent per-class scores in (0,1); rows are not
//! normalized to sum to one. Stored parameters produce logits and the
//! sigmoid is applied inside [`CxrModel::forward`]. When the backbone is
//! frozen its features are detached, so gradient steps can only move head
//! parameters.

mod builder;
pub mod checkpoint;
mod densenet;
mod store;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use densenet::{DenseNetConfig, StemKind};
pub use store::{ParamInit, ParamStore};

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Module, Tensor, Var};
use candle_nn::Linear;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

use builder::{ParamBuilder, ParamSource};
use densenet::DenseNetBackbone;

/// Backbone selection. `DenseNet121` is the real configuration;
/// `Tiny` is the random-init escape hatch for desk-scale tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackboneKind {
    #[serde(rename = "densenet121")]
    DenseNet121,
    #[serde(rename = "tiny")]
    Tiny,
}

impl BackboneKind {
    pub fn config(&self) -> DenseNetConfig {
        match self {
            BackboneKind::DenseNet121 => DenseNetConfig::densenet121(),
            BackboneKind::Tiny => DenseNetConfig::tiny(),
        }
    }

    pub fn parse(s: &str) -> Option<BackboneKind> {
        match s.trim().to_ascii_lowercase().as_str() {
            "densenet121" => Some(BackboneKind::DenseNet121),
            "tiny" => Some(BackboneKind::Tiny),
            _ => None,
        }
    }
}

/// Where initial weights come from.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightsInit {
    /// Seeded random initialization everywhere.
    Random,
    /// Backbone from a pretrained safetensors file (content hash optionally
    /// enforced); the head is always freshly initialized.
    Pretrained {
        path: PathBuf,
        sha256: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierSpec {
    pub num_classes: usize,
    pub backbone: BackboneKind,
    pub init: WeightsInit,
    pub seed: u64,
}

pub struct CxrModel {
    store: ParamStore,
    backbone: DenseNetBackbone,
    head: Linear,
    backbone_trainable: bool,
    num_classes: usize,
    kind: BackboneKind,
}

impl std::fmt::Debug for CxrModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CxrModel")
            .field("backbone", &self.kind)
            .field("num_classes", &self.num_classes)
            .field("backbone_trainable", &self.backbone_trainable)
            .field("parameters", &self.store.len())
            .finish()
    }
}

impl CxrModel {
    pub fn build(spec: &ClassifierSpec, dtype: DType) -> Result<Self> {
        if spec.num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {}",
                spec.num_classes
            )));
        }
        let source = match &spec.init {
            WeightsInit::Random => ParamSource::Random,
            WeightsInit::Pretrained { path, sha256 } => {
                if !path.is_file() {
                    return Err(Error::PretrainedWeightsMissing { path: path.clone() });
                }
                if let Some(expected) = sha256 {
                    verify_sha256(path, expected)?;
                }
                let tensors = candle_core::safetensors::load(path, &Device::Cpu)?;
                ParamSource::PretrainedBackbone(tensors)
            }
        };
        Self::assemble(spec.backbone, spec.num_classes, dtype, source, spec.seed)
    }

    /// Strict reconstruction from named tensors (checkpoint loading).
    pub(crate) fn from_named_tensors(
        kind: BackboneKind,
        num_classes: usize,
        dtype: DType,
        tensors: HashMap<String, Tensor>,
    ) -> Result<Self> {
        Self::assemble(kind, num_classes, dtype, ParamSource::Checkpoint(tensors), 0)
    }

    fn assemble(
        kind: BackboneKind,
        num_classes: usize,
        dtype: DType,
        source: ParamSource,
        seed: u64,
    ) -> Result<Self> {
        let mut store = ParamStore::new(Device::Cpu, dtype);
        let mut rng = seeding::component_rng(seed, "init");
        let mut b = ParamBuilder::new(&mut store, source, &mut rng);

        let config = kind.config();
        let features = config.feature_width();
        let backbone = DenseNetBackbone::build(&mut b, config)?;
        let head_weight = b.param(
            "head.weight",
            &[num_classes, features],
            ParamInit::KaimingUniform { fan_in: features },
        )?;
        let head_bias = b.param(
            "head.bias",
            &[num_classes],
            ParamInit::UniformBound {
                bound: 1.0 / (features as f64).sqrt(),
            },
        )?;
        b.finish()?;

        Ok(CxrModel {
            store,
            backbone,
            head: Linear::new(head_weight, Some(head_bias)),
            backbone_trainable: false,
            num_classes,
            kind,
        })
    }

    /// Per-class sigmoid scores, `(B, C)`, each independently in (0,1).
    pub fn forward(&self, images: &Tensor, train: bool) -> Result<Tensor> {
        let (_, channels, _, _) = images.dims4()?;
        if channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "expected 3-channel input, got {channels}"
            )));
        }
        let feats = self.backbone.forward(images, train)?;
        let feats = if self.backbone_trainable {
            feats
        } else {
            feats.detach()
        };
        let logits = self.head.forward(&feats)?;
        Ok(candle_nn::ops::sigmoid(&logits)?)
    }

    pub fn set_backbone_trainable(&mut self, trainable: bool) {
        self.backbone_trainable = trainable;
    }

    pub fn backbone_trainable(&self) -> bool {
        self.backbone_trainable
    }

    /// Vars for the optimizer under the current freeze state.
    pub fn trainable_vars(&self) -> Vec<Var> {
        self.store.optimizable_vars(self.backbone_trainable)
    }

    /// Current values of every parameter and running statistic.
    pub fn named_parameters(&self) -> BTreeMap<String, Tensor> {
        self.store.named_values()
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn backbone_kind(&self) -> BackboneKind {
        self.kind
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn feature_width(&self) -> usize {
        self.backbone.config().feature_width()
    }

    /// `C * F + C` scalar parameters in the head.
    pub fn head_param_count(&self) -> usize {
        self.num_classes * self.feature_width() + self.num_classes
    }
}

fn verify_sha256(path: &Path, expected: &str) -> Result<()> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    let actual = digest.iter().map(|b| format!("{b:02x}")).collect::<String>();
    if actual.eq_ignore_ascii_case(expected.trim()) {
        Ok(())
    } else {
        Err(Error::WeightsHashMismatch {
            path: path.to_path_buf(),
            expected: expected.to_string(),
            actual,
        })
    }
}
