//! Image loading and deterministic preprocessing.
//!
//! X-rays are decoded to grayscale, resized to a square target, replicated to
//! three channels and normalized with the backbone's pretraining statistics.
//! Eval-mode output is a pure function of the file bytes; train mode may
//! additionally apply the configured stochastic augmentations.

use std::path::Path;

use image::imageops::FilterType;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-channel normalization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

/// Channel statistics the pretrained backbone was trained with.
pub const BACKBONE_CHANNEL_STATS: ChannelStats = ChannelStats {
    mean: [0.485, 0.456, 0.406],
    std: [0.229, 0.224, 0.225],
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Augmentation {
    HorizontalFlip { probability: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub target_size: usize,
    pub normalization: ChannelStats,
    /// Applied in order, train mode only.
    pub train_augmentations: Vec<Augmentation>,
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        PreprocessSpec {
            target_size: 224,
            normalization: BACKBONE_CHANNEL_STATS,
            train_augmentations: vec![Augmentation::HorizontalFlip { probability: 0.5 }],
        }
    }
}

impl PreprocessSpec {
    pub fn with_target_size(size: usize) -> Self {
        PreprocessSpec {
            target_size: size,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_size == 0 {
            return Err(Error::InvalidArgument("target_size must be > 0".into()));
        }
        for a in &self.train_augmentations {
            let Augmentation::HorizontalFlip { probability } = a;
            if !(0.0..=1.0).contains(probability) {
                return Err(Error::InvalidArgument(format!(
                    "flip probability {probability} outside [0,1]"
                )));
            }
        }
        Ok(())
    }
}

/// A normalized 3x S x S image in CHW order.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub data: Vec<f32>,
    pub size: usize,
}

/// Eval mode is deterministic; train mode draws augmentation decisions from
/// the supplied RNG.
pub enum PrepMode<'r> {
    Eval,
    Train { rng: &'r mut dyn RngCore },
}

/// Decode an image to a grayscale `size x size` grid of `[0,1]` intensities
/// (row-major). This is the raw space in which saliency masks multiply.
pub fn load_raw_gray(path: &Path, size: usize) -> Result<Vec<f32>> {
    let img = image::open(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        source: e,
    })?;
    let gray = image::imageops::resize(
        &img.to_luma8(),
        size as u32,
        size as u32,
        FilterType::Triangle,
    );
    Ok(gray.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect())
}

/// Replicate a raw grayscale grid to three channels and normalize.
pub fn raw_gray_to_tensor(gray: &[f32], spec: &PreprocessSpec) -> ImageTensor {
    let s = spec.target_size;
    debug_assert_eq!(gray.len(), s * s);
    let mut data = Vec::with_capacity(3 * s * s);
    for ch in 0..3 {
        let mean = spec.normalization.mean[ch];
        let std = spec.normalization.std[ch];
        data.extend(gray.iter().map(|&v| (v - mean) / std));
    }
    ImageTensor { data, size: s }
}

/// Load one record's image as a normalized `3 x S x S` tensor.
pub fn load_and_preprocess(path: &Path, spec: &PreprocessSpec, mode: PrepMode) -> Result<ImageTensor> {
    spec.validate()?;
    let mut gray = load_raw_gray(path, spec.target_size)?;
    if let PrepMode::Train { rng } = mode {
        for aug in &spec.train_augmentations {
            let Augmentation::HorizontalFlip { probability } = aug;
            let draw: f64 = rng.random();
            if draw < *probability {
                flip_horizontal(&mut gray, spec.target_size);
            }
        }
    }
    Ok(raw_gray_to_tensor(&gray, spec))
}

fn flip_horizontal(gray: &mut [f32], size: usize) {
    for row in gray.chunks_mut(size) {
        row.reverse();
    }
}
