//! Synthetic separable datasets.
//!
//! Desk-scale stand-ins for the real X-ray sources: each class gets a
//! distinct bright horizontal band plus pixel noise, written as real PNG
//! files with a manifest, so the whole pipeline (decode, preprocess, sample,
//! train, evaluate, explain) can run without the external datasets or
//! pretrained weights.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, DatasetManifest, ImageRecord, Split};
use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: Vec<ClassLabel>,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub image_size: u32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: vec![ClassLabel::Normal, ClassLabel::Covid19],
            train_per_class: 20,
            val_per_class: 2,
            test_per_class: 4,
            image_size: 32,
            seed: 0,
        }
    }
}

/// Write the images under `dir` and return the manifest. Every image is its
/// own patient, so patient-wise invariants hold trivially.
pub fn generate(dir: &Path, spec: &SyntheticSpec) -> Result<DatasetManifest> {
    if spec.classes.is_empty() || spec.train_per_class == 0 {
        return Err(Error::InvalidArgument(
            "synthetic spec needs classes and a nonzero train count".into(),
        ));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = seeding::component_rng(spec.seed, "synthetic");
    let mut records = Vec::new();
    let sections = [
        (Split::Train, spec.train_per_class),
        (Split::Val, spec.val_per_class),
        (Split::Test, spec.test_per_class),
    ];
    for (class_idx, class) in spec.classes.iter().enumerate() {
        for (split, count) in sections {
            for k in 0..count {
                let name = format!("{class}_{split}_{k}.png");
                let path = dir.join(&name);
                write_image(&path, spec, class_idx, &mut rng)?;
                records.push(ImageRecord {
                    image_path: path,
                    patient_id: format!("syn:{class}:{split}:{k}"),
                    label: *class,
                    split,
                });
            }
        }
    }
    DatasetManifest::new(records)
}

fn write_image(
    path: &Path,
    spec: &SyntheticSpec,
    class_idx: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    let s = spec.image_size;
    let bands = spec.classes.len() as u32;
    let band_h = (s / bands).max(1);
    let band_top = class_idx as u32 * band_h;
    let band_bot = if class_idx + 1 == spec.classes.len() {
        s
    } else {
        band_top + band_h
    };
    let mut img = image::GrayImage::new(s, s);
    for y in 0..s {
        for x in 0..s {
            let base: i32 = if y >= band_top && y < band_bot { 205 } else { 40 };
            let noise: i32 = rng.random_range(-25..=25);
            img.put_pixel(x, y, image::Luma([(base + noise).clamp(0, 255) as u8]));
        }
    }
    img.save(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        source: e,
    })
}
