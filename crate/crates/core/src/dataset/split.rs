//! Patient-wise splitting.
//!
//! Split assignments are a function of patient id, never of individual
//! images. Within each class, patients are ordered by descending image count
//! (patient id breaks ties) and assigned greedily to the test split until the
//! class's image-count target is met; validation patients are then taken from
//! the remaining pool smallest-first, which keeps the tiny validation targets
//! close to their mark. The procedure is fully order-deterministic; the seed
//! is accepted and recorded but cannot change the outcome.

use std::collections::BTreeMap;

use crate::dataset::{ClassLabel, DatasetManifest, ImageRecord, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct SplitParams {
    /// Fraction of each class's images targeted for the test split.
    pub test_fraction: f64,
    /// Total validation image target, spread as evenly as possible across
    /// classes (earlier classes take the remainder).
    pub val_count: usize,
    pub seed: u64,
}

struct Patient {
    id: String,
    images: usize,
}

pub fn split_by_patient(manifest: &DatasetManifest, params: &SplitParams) -> Result<DatasetManifest> {
    let fraction = params.test_fraction;
    if !fraction.is_finite() || fraction <= 0.0 || fraction >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must be in (0,1), got {fraction}"
        )));
    }
    let _ = params.seed; // recorded by callers; the greedy order is deterministic

    // Group images by patient; a patient's class is the majority class of its
    // images (canonical label order breaks ties).
    let mut by_patient: BTreeMap<&str, BTreeMap<ClassLabel, usize>> = BTreeMap::new();
    for r in manifest.records() {
        *by_patient
            .entry(r.patient_id.as_str())
            .or_default()
            .entry(r.label)
            .or_default() += 1;
    }
    let mut per_class: BTreeMap<ClassLabel, Vec<Patient>> = BTreeMap::new();
    for (id, classes) in &by_patient {
        let images: usize = classes.values().sum();
        let class = *classes
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(c, _)| c)
            .expect("patient has at least one image");
        per_class.entry(class).or_default().push(Patient {
            id: (*id).to_string(),
            images,
        });
    }

    let classes: Vec<ClassLabel> = per_class.keys().copied().collect();
    let num_classes = classes.len();
    let mut assignment: BTreeMap<String, Split> = BTreeMap::new();

    for (class_idx, class) in classes.iter().enumerate() {
        let patients = per_class.get_mut(class).expect("class present");
        // Descending image count, patient id lexicographic tie-break.
        patients.sort_by(|a, b| b.images.cmp(&a.images).then(a.id.cmp(&b.id)));

        let class_images: usize = patients.iter().map(|p| p.images).sum();
        let test_target = (params.test_fraction * class_images as f64).round() as usize;
        let val_target = params.val_count / num_classes
            + usize::from(class_idx < params.val_count % num_classes);

        let buckets_needed = 1 + usize::from(test_target > 0) + usize::from(val_target > 0);
        if patients.len() < buckets_needed {
            return Err(Error::SplitInfeasible {
                class: class.as_str().to_string(),
                patients: patients.len(),
                required: buckets_needed,
            });
        }

        let mut test_images = 0usize;
        let mut remaining: Vec<&Patient> = Vec::new();
        for p in patients.iter() {
            if test_target > 0 && test_images < test_target {
                assignment.insert(p.id.clone(), Split::Test);
                test_images += p.images;
            } else {
                remaining.push(p);
            }
        }

        // Smallest patients first for the validation set, keeping at least
        // one patient in train.
        remaining.sort_by(|a, b| a.images.cmp(&b.images).then(a.id.cmp(&b.id)));
        let mut val_images = 0usize;
        let mut train_patients = 0usize;
        let n_remaining = remaining.len();
        for (i, p) in remaining.iter().enumerate() {
            let need_train = train_patients == 0 && i + 1 == n_remaining;
            if val_target > 0 && val_images < val_target && !need_train {
                assignment.insert(p.id.clone(), Split::Val);
                val_images += p.images;
            } else {
                assignment.insert(p.id.clone(), Split::Train);
                train_patients += 1;
            }
        }
        if train_patients == 0 {
            return Err(Error::SplitInfeasible {
                class: class.as_str().to_string(),
                patients: patients.len(),
                required: buckets_needed,
            });
        }
    }

    let records: Vec<ImageRecord> = manifest
        .records()
        .iter()
        .map(|r| ImageRecord {
            split: assignment[r.patient_id.as_str()],
            ..r.clone()
        })
        .collect();
    DatasetManifest::new(records)
}
