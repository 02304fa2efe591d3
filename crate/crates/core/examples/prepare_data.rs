//! Manifest construction and patient-wise splitting on a miniature pair of
//! sources laid out like the real ones: a COVID image folder with a
//! metadata CSV (patient id, finding, view, filename) and a class-named
//! pneumonia directory tree.
//!
//!     cargo run --example prepare_data

use std::fs;
use std::path::Path;

use cxr_triage::dataset::{build_manifest, split_by_patient, ClassMode, CovidSource, SplitParams};

fn png(path: &Path, value: u8) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    image::GrayImage::from_pixel(24, 24, image::Luma([value]))
        .save(path)
        .unwrap();
}

fn main() -> cxr_triage::Result<()> {
    let dir = std::env::temp_dir().join("cxr-triage-example-prepare");
    let _ = fs::remove_dir_all(&dir);

    // COVID source: 6 patients, some with several images, one lateral view
    // that must be excluded.
    let covid_dir = dir.join("covid/images");
    let mut metadata = String::from("patientid,finding,view,filename\n");
    let mut value = 90u8;
    for patient in 1..=6 {
        for shot in 0..=(patient % 3) {
            let file = format!("p{patient}_{shot}.png");
            metadata.push_str(&format!("P{patient},COVID-19,PA,{file}\n"));
            png(&covid_dir.join(&file), value);
            value = value.wrapping_add(13);
        }
    }
    metadata.push_str("P1,COVID-19,L,lateral.png\n");
    png(&covid_dir.join("lateral.png"), 30);
    let metadata_csv = dir.join("covid/metadata.csv");
    fs::write(&metadata_csv, metadata).unwrap();

    // Pneumonia source: NORMAL plus a PNEUMONIA folder with tagged
    // file names, as shipped by the source dataset.
    let pneu = dir.join("pneumonia");
    for patient in 1..=8 {
        png(
            &pneu.join(format!("train/NORMAL/IM-{patient:04}-0001.png")),
            200,
        );
        png(
            &pneu.join(format!("train/PNEUMONIA/person{patient}_bacteria_1.png")),
            120,
        );
        png(
            &pneu.join(format!("train/PNEUMONIA/person{patient}_virus_1.png")),
            60,
        );
    }

    let covid = CovidSource {
        image_dir: covid_dir,
        metadata_csv,
    };
    let (raw, rejects) = build_manifest(&covid, &pneu, ClassMode::FourClass)?;
    println!("ingested {} records, {} rejects:", raw.len(), rejects.len());
    for (path, reason) in rejects.entries() {
        println!("  reject {}: {reason}", path.file_name().unwrap().to_string_lossy());
    }

    let manifest = split_by_patient(
        &raw,
        &SplitParams {
            test_fraction: 0.25,
            val_count: 4,
            seed: 0,
        },
    )?;
    manifest.validate()?;
    println!("\npatient-wise split:\n{}", manifest.summary_table());

    let out = dir.join("manifest.tsv");
    manifest.write_tsv(&out)?;
    println!("manifest written to {}", out.display());
    Ok(())
}
