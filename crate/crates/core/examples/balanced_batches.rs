//! Fixed-ratio batch composition: every batch carries the classes in an
//! exact 5:5:5:1 ratio, the minority class is covered exactly once per
//! epoch, and majority classes are freshly subsampled each epoch.
//!
//!     cargo run --example balanced_batches

use std::path::PathBuf;

use cxr_triage::dataset::{ClassLabel, ImageRecord, Split};
use cxr_triage::loss::ClassConfig;
use cxr_triage::sampler::{BatchPlan, EpochSampler};

fn main() -> cxr_triage::Result<()> {
    // a training pool with the familiar imbalance: plenty of everything
    // except the last class
    let pool = [
        (ClassLabel::Normal, 60),
        (ClassLabel::BacterialPneumonia, 60),
        (ClassLabel::ViralPneumonia, 60),
        (ClassLabel::Covid19, 8),
    ];
    let records: Vec<ImageRecord> = pool
        .iter()
        .flat_map(|&(label, n)| {
            (0..n).map(move |i| ImageRecord {
                image_path: PathBuf::from(format!("{label}_{i}.png")),
                patient_id: format!("{label}_{i}"),
                label,
                split: Split::Train,
            })
        })
        .collect();
    let train: Vec<&ImageRecord> = records.iter().collect();

    let ratio = vec![5u32, 5, 5, 1];
    let class_cfg = ClassConfig::from_train_counts(
        pool.iter().map(|(c, _)| c.as_str().to_string()).collect(),
        &pool.map(|(_, n)| n),
        ratio.clone(),
    )?;
    let plan = BatchPlan::for_batch_size(&ratio, 16)?;
    let sampler = EpochSampler::new(&train, &class_cfg, plan, 42)?;
    println!(
        "train pool: {} images, minority COVID19 {} -> {} batches per epoch\n",
        train.len(),
        pool[3].1,
        sampler.batches_per_epoch()
    );

    for epoch in 0..2 {
        println!("epoch {epoch}:");
        let mut covid_seen = Vec::new();
        let mut normals_seen = Vec::new();
        for (i, batch) in sampler.epoch(epoch).iter().enumerate() {
            println!("  batch {i}: histogram {:?}", batch.histogram(4));
            for &(idx, class) in &batch.items {
                match class {
                    0 => normals_seen.push(idx),
                    3 => covid_seen.push(idx),
                    _ => {}
                }
            }
        }
        covid_seen.sort_unstable();
        println!("  covid indices this epoch (each exactly once): {covid_seen:?}");
        println!(
            "  normals drawn: {} of 60, a fresh subset each epoch\n",
            normals_seen.len()
        );
    }
    Ok(())
}
