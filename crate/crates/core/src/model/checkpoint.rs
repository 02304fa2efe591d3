//! Checkpoint persistence: one safetensors archive holding every parameter
//! blob under its canonical name plus a JSON metadata record (epoch, stage,
//! validation loss, class configuration, backbone kind).
//!
//! `load(save(m))` reproduces forward outputs bit-exactly: tensors round-trip
//! through raw little-endian bytes and the model is reassembled strictly.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::ClassConfig;
use crate::model::{BackboneKind, CxrModel};

const META_KEY: &str = "cxr.meta";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub stage: u8,
    pub val_loss: f64,
    pub class_config: ClassConfig,
    pub backbone: BackboneKind,
    /// Square input size the model was trained with.
    pub target_size: usize,
}

impl CheckpointMeta {
    fn validate(&self) -> Result<()> {
        if !self.val_loss.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint val_loss must be finite, got {}",
                self.val_loss
            )));
        }
        self.class_config.validate()
    }
}

pub fn save_checkpoint(model: &CxrModel, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    meta.validate()?;
    if meta.class_config.num_classes() != model.num_classes() {
        return Err(Error::ClassCountMismatch {
            expected: model.num_classes(),
            found: meta.class_config.num_classes(),
        });
    }
    let meta_json = serde_json::to_string(meta).map_err(|e| Error::CheckpointFormat {
        path: path.to_path_buf(),
        reason: format!("cannot encode metadata: {e}"),
    })?;
    let mut info = HashMap::new();
    info.insert(META_KEY.to_string(), meta_json);
    safetensors::serialize_to_file(&model.named_parameters(), Some(info), path).map_err(|e| {
        Error::CheckpointFormat {
            path: path.to_path_buf(),
            reason: e.to_string(),
        }
    })
}

/// Read the metadata record without materializing any tensors.
pub fn read_checkpoint_meta(path: &Path) -> Result<CheckpointMeta> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_meta(path, &bytes)
}

fn parse_meta(path: &Path, bytes: &[u8]) -> Result<CheckpointMeta> {
    let (_, header) =
        safetensors::SafeTensors::read_metadata(bytes).map_err(|e| Error::CheckpointFormat {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    let info = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| Error::CheckpointFormat {
            path: path.to_path_buf(),
            reason: format!("missing {META_KEY} metadata record"),
        })?;
    let meta: CheckpointMeta =
        serde_json::from_str(info).map_err(|e| Error::CheckpointFormat {
            path: path.to_path_buf(),
            reason: format!("malformed metadata record: {e}"),
        })?;
    meta.validate()?;
    Ok(meta)
}

/// Load a checkpoint into a freshly assembled model.
///
/// `expect_classes`, when given, guards against loading a checkpoint whose
/// label space differs from the caller's configuration.
pub fn load_checkpoint(
    path: &Path,
    expect_classes: Option<&[String]>,
) -> Result<(CxrModel, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let meta = parse_meta(path, &bytes)?;
    if let Some(expected) = expect_classes {
        if expected.len() != meta.class_config.num_classes()
            || expected != meta.class_config.classes.as_slice()
        {
            return Err(Error::ClassCountMismatch {
                expected: expected.len(),
                found: meta.class_config.num_classes(),
            });
        }
    }
    let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?;
    let dtype = tensors
        .get("head.weight")
        .map(Tensor::dtype)
        .unwrap_or(DType::F32);
    let model = CxrModel::from_named_tensors(
        meta.backbone,
        meta.class_config.num_classes(),
        dtype,
        tensors,
    )?;
    Ok((model, meta))
}
