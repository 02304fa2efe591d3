//! Manifest construction from the two source datasets.
//!
//! The COVID source is a flat image directory plus a metadata table with
//! patient id, view/projection and finding columns; only frontal views with a
//! COVID-19 finding are accepted. The pneumonia source is a class-named
//! directory tree (`NORMAL`, `BACTERIA`, `VIRUS`, or a `PNEUMONIA` folder
//! whose file names carry the bacteria/virus tag).

use std::path::{Path, PathBuf};

use crate::dataset::{ClassLabel, ClassMode, DatasetManifest, ImageRecord, Split};
use crate::error::{Error, Result};

/// COVID-19 image source: a directory of images and a metadata table.
#[derive(Debug, Clone)]
pub struct CovidSource {
    pub image_dir: PathBuf,
    pub metadata_csv: PathBuf,
}

/// Record-level ingestion problems; these never abort the build.
#[derive(Debug, Default, Clone)]
pub struct RejectsReport {
    entries: Vec<(PathBuf, String)>,
}

impl RejectsReport {
    fn push(&mut self, path: impl Into<PathBuf>, reason: impl Into<String>) {
        self.entries.push((path.into(), reason.into()));
    }

    pub fn entries(&self) -> &[(PathBuf, String)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// One `path<TAB>reason` line per reject.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut body = String::new();
        for (p, reason) in &self.entries {
            body.push_str(&format!("{}\t{}\n", p.display(), reason));
        }
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }
}

const IMAGE_EXTENSIONS: &[&str] = &["jpg", "jpeg", "png"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Frontal views are PA/AP and their qualified variants; everything else
/// (lateral `L`, axial, ...) is excluded.
fn is_frontal_view(view: &str) -> bool {
    let v = view.trim().to_ascii_uppercase();
    v.starts_with("PA") || v.starts_with("AP")
}

/// Build one manifest from both sources. Split assignments coming out of
/// here are provisional (the pneumonia tree's own train/test/val folders,
/// train for everything else); [`split_by_patient`](crate::dataset::split_by_patient)
/// re-splits the whole manifest patient-wise.
pub fn build_manifest(
    covid: &CovidSource,
    pneumonia_root: &Path,
    mode: ClassMode,
) -> Result<(DatasetManifest, RejectsReport)> {
    let mut records = Vec::new();
    let mut rejects = RejectsReport::default();
    ingest_covid(covid, &mut records, &mut rejects)?;
    ingest_pneumonia(pneumonia_root, mode, &mut records, &mut rejects)?;
    let manifest = DatasetManifest::new(records)?;
    Ok((manifest, rejects))
}

fn ingest_covid(
    source: &CovidSource,
    records: &mut Vec<ImageRecord>,
    rejects: &mut RejectsReport,
) -> Result<()> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(&source.metadata_csv)
        .map_err(|e| metadata_error(&source.metadata_csv, e))?;
    let headers = rdr
        .headers()
        .map_err(|e| metadata_error(&source.metadata_csv, e))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Metadata {
                path: source.metadata_csv.clone(),
                reason: format!("missing column {name:?}"),
            })
    };
    let c_patient = col("patientid")?;
    let c_finding = col("finding")?;
    let c_view = col("view")?;
    let c_filename = col("filename")?;
    // Optional: some metadata tables carry a folder column.
    let c_folder = headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case("folder"));

    for row in rdr.records() {
        let row = row.map_err(|e| metadata_error(&source.metadata_csv, e))?;
        let get = |i: usize| row.get(i).unwrap_or("").trim().to_string();
        let filename = get(c_filename);
        if filename.is_empty() {
            continue;
        }
        let mut path = source.image_dir.clone();
        if let Some(cf) = c_folder {
            let folder = get(cf);
            if !folder.is_empty() {
                path.push(folder);
            }
        }
        path.push(&filename);

        let finding = get(c_finding);
        if !finding.to_ascii_uppercase().contains("COVID-19") {
            rejects.push(&path, format!("finding {finding:?} is not COVID-19"));
            continue;
        }
        let view = get(c_view);
        if !is_frontal_view(&view) {
            rejects.push(&path, format!("non-frontal view {view:?}"));
            continue;
        }
        let patient = get(c_patient);
        if patient.is_empty() {
            rejects.push(&path, "missing patient id");
            continue;
        }
        if !path.is_file() {
            rejects.push(&path, "image file missing");
            continue;
        }
        records.push(ImageRecord {
            image_path: path,
            patient_id: format!("covid:{patient}"),
            label: ClassLabel::Covid19,
            split: Split::Train,
        });
    }
    Ok(())
}

fn metadata_error(path: &Path, e: csv::Error) -> Error {
    Error::Metadata {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn ingest_pneumonia(
    root: &Path,
    mode: ClassMode,
    records: &mut Vec<ImageRecord>,
    rejects: &mut RejectsReport,
) -> Result<()> {
    if !root.is_dir() {
        return Err(Error::Metadata {
            path: root.to_path_buf(),
            reason: "pneumonia source is not a directory".into(),
        });
    }
    let mut files = Vec::new();
    collect_images(root, &mut files)?;
    files.sort();
    for path in files {
        match classify_pneumonia_path(root, &path) {
            Ok((label, split)) => {
                let label = mode.fold(label);
                records.push(ImageRecord {
                    patient_id: format!("pneu:{}", pneumonia_patient_id(&path)),
                    image_path: path,
                    label,
                    split,
                });
            }
            Err(reason) => rejects.push(&path, reason),
        }
    }
    Ok(())
}

fn collect_images(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_images(&path, out)?;
        } else if is_image(&path) {
            out.push(path);
        }
    }
    Ok(())
}

/// Label from the directory components, split candidate from any
/// train/test/val component. `PNEUMONIA` folders fall back to the
/// bacteria/virus tag in the file name.
fn classify_pneumonia_path(
    root: &Path,
    path: &Path,
) -> std::result::Result<(ClassLabel, Split), String> {
    let rel = path.strip_prefix(root).unwrap_or(path);
    let mut label = None;
    let mut split = Split::Train;
    for comp in rel.components() {
        let name = comp.as_os_str().to_string_lossy().to_ascii_uppercase();
        if let Some(s) = Split::parse(&name) {
            split = s;
            continue;
        }
        label = match name.as_str() {
            "NORMAL" => Some(ClassLabel::Normal),
            n if n.starts_with("BACTERIA") => Some(ClassLabel::BacterialPneumonia),
            n if n.starts_with("VIRUS") || n.starts_with("VIRAL") => {
                Some(ClassLabel::ViralPneumonia)
            }
            "PNEUMONIA" => {
                let file = path
                    .file_name()
                    .map(|f| f.to_string_lossy().to_ascii_lowercase())
                    .unwrap_or_default();
                if file.contains("bacteria") {
                    Some(ClassLabel::BacterialPneumonia)
                } else if file.contains("virus") {
                    Some(ClassLabel::ViralPneumonia)
                } else {
                    return Err("PNEUMONIA folder but file name tags neither bacteria nor virus"
                        .to_string());
                }
            }
            _ => label,
        };
    }
    match label {
        Some(l) => Ok((l, split)),
        None => Err("no class-named ancestor directory".to_string()),
    }
}

/// `person63_bacteria_306.jpeg` style names share the `person63` patient;
/// anything else is treated as a single-image patient keyed by file stem.
fn pneumonia_patient_id(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_default();
    let lower = stem.to_ascii_lowercase();
    if let Some(rest) = lower.strip_prefix("person") {
        let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
        if !digits.is_empty() {
            return format!("person{digits}");
        }
    }
    stem
}
