//! Image manifests, patient-wise splitting and deterministic preprocessing.
//!
//! A [`DatasetManifest`] is the unit handed between pipeline stages: one row
//! per accepted image with its patient id, class label and split assignment.
//! All of a patient's images always share one split so no patient leaks
//! information across train/val/test.

mod ingest;
mod preprocess;
mod split;

pub use ingest::{build_manifest, CovidSource, RejectsReport};
pub use preprocess::{
    load_and_preprocess, load_raw_gray, raw_gray_to_tensor, Augmentation, ChannelStats,
    ImageTensor, PrepMode, PreprocessSpec, BACKBONE_CHANNEL_STATS,
};
pub use split::{split_by_patient, SplitParams};

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which of the three disjoint subsets a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Some(Split::Train),
            "val" | "valid" | "validation" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Class labels across both configurations. `Pneumonia` only occurs in the
/// three-class mode where bacterial and viral pneumonia are clubbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    Normal,
    BacterialPneumonia,
    ViralPneumonia,
    #[serde(rename = "COVID19")]
    Covid19,
    Pneumonia,
}

impl ClassLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            ClassLabel::Normal => "Normal",
            ClassLabel::BacterialPneumonia => "BacterialPneumonia",
            ClassLabel::ViralPneumonia => "ViralPneumonia",
            ClassLabel::Covid19 => "COVID19",
            ClassLabel::Pneumonia => "Pneumonia",
        }
    }

    pub fn parse(s: &str) -> Option<ClassLabel> {
        match s.trim() {
            "Normal" => Some(ClassLabel::Normal),
            "BacterialPneumonia" => Some(ClassLabel::BacterialPneumonia),
            "ViralPneumonia" => Some(ClassLabel::ViralPneumonia),
            "COVID19" => Some(ClassLabel::Covid19),
            "Pneumonia" => Some(ClassLabel::Pneumonia),
            _ => None,
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The two classifier configurations. Class order matters: the sampling
/// ratio is positional and the minority class sits last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassMode {
    FourClass,
    ThreeClass,
}

impl ClassMode {
    pub fn classes(&self) -> &'static [ClassLabel] {
        match self {
            ClassMode::FourClass => &[
                ClassLabel::Normal,
                ClassLabel::BacterialPneumonia,
                ClassLabel::ViralPneumonia,
                ClassLabel::Covid19,
            ],
            ClassMode::ThreeClass => &[
                ClassLabel::Normal,
                ClassLabel::Pneumonia,
                ClassLabel::Covid19,
            ],
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes().iter().map(|c| c.as_str().to_string()).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.classes().len()
    }

    /// Per-class batch composition ratio: 5:5:5:1 four-class, 7:7:1 three-class.
    pub fn default_sampling_ratio(&self) -> Vec<u32> {
        match self {
            ClassMode::FourClass => vec![5, 5, 5, 1],
            ClassMode::ThreeClass => vec![7, 7, 1],
        }
    }

    /// Fold a raw four-class label into this mode's label space.
    pub fn fold(&self, label: ClassLabel) -> ClassLabel {
        match (self, label) {
            (ClassMode::ThreeClass, ClassLabel::BacterialPneumonia)
            | (ClassMode::ThreeClass, ClassLabel::ViralPneumonia) => ClassLabel::Pneumonia,
            (_, l) => l,
        }
    }

    pub fn class_index(&self, label: ClassLabel) -> Option<usize> {
        self.classes().iter().position(|c| *c == label)
    }
}

/// One X-ray sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_path: PathBuf,
    pub patient_id: String,
    pub label: ClassLabel,
    pub split: Split,
}

/// Per-class (train, val, test) image counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    fn bump(&mut self, split: Split) {
        match split {
            Split::Train => self.train += 1,
            Split::Val => self.val += 1,
            Split::Test => self.test += 1,
        }
    }

    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

/// The full record set plus per-class split counts.
///
/// Construction validates the two structural invariants: every patient's
/// records carry a single split value, and the stored counts equal counts
/// recomputed from the records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    records: Vec<ImageRecord>,
    class_counts: BTreeMap<ClassLabel, SplitCounts>,
}

impl DatasetManifest {
    pub fn new(records: Vec<ImageRecord>) -> Result<Self> {
        let class_counts = recount(&records);
        let manifest = DatasetManifest {
            records,
            class_counts,
        };
        manifest.check_patient_integrity()?;
        Ok(manifest)
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn class_counts(&self) -> &BTreeMap<ClassLabel, SplitCounts> {
        &self.class_counts
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// Records belonging to one split, in manifest order.
    pub fn split_records(&self, split: Split) -> Vec<&ImageRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    /// Classes present, in canonical label order.
    pub fn classes(&self) -> Vec<ClassLabel> {
        self.class_counts.keys().copied().collect()
    }

    fn check_patient_integrity(&self) -> Result<()> {
        let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
        for r in &self.records {
            if r.patient_id.is_empty() {
                return Err(Error::InvalidManifest(format!(
                    "record {} has an empty patient id",
                    r.image_path.display()
                )));
            }
            match seen.get(r.patient_id.as_str()) {
                Some(s) if *s != r.split => {
                    return Err(Error::InvalidManifest(format!(
                        "patient {} straddles splits {} and {}",
                        r.patient_id, s, r.split
                    )));
                }
                Some(_) => {}
                None => {
                    seen.insert(&r.patient_id, r.split);
                }
            }
        }
        Ok(())
    }

    /// Recount from records and compare with the stored counts.
    pub fn validate(&self) -> Result<()> {
        self.check_patient_integrity()?;
        let fresh = recount(&self.records);
        if fresh != self.class_counts {
            return Err(Error::InvalidManifest(
                "stored class counts disagree with records".into(),
            ));
        }
        Ok(())
    }

    /// Write as a tab-delimited table with a header row.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .delimiter(b'\t')
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        w.write_record(["image_path", "patient_id", "label", "split"])
            .map_err(|e| csv_error(path, e))?;
        for r in &self.records {
            w.write_record([
                r.image_path.to_string_lossy().as_ref(),
                r.patient_id.as_str(),
                r.label.as_str(),
                r.split.as_str(),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .has_headers(true)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
        let expect = ["image_path", "patient_id", "label", "split"];
        let idx: Vec<usize> = expect
            .iter()
            .map(|name| {
                headers.iter().position(|h| h == *name).ok_or_else(|| {
                    Error::InvalidManifest(format!(
                        "{}: missing column {name}",
                        path.display()
                    ))
                })
            })
            .collect::<Result<_>>()?;
        let mut records = Vec::new();
        for (line, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| csv_error(path, e))?;
            let field = |i: usize| row.get(idx[i]).unwrap_or("").to_string();
            let label = ClassLabel::parse(&field(2)).ok_or_else(|| {
                Error::InvalidManifest(format!(
                    "{} line {}: unknown label {:?}",
                    path.display(),
                    line + 2,
                    field(2)
                ))
            })?;
            let split = Split::parse(&field(3)).ok_or_else(|| {
                Error::InvalidManifest(format!(
                    "{} line {}: unknown split {:?}",
                    path.display(),
                    line + 2,
                    field(3)
                ))
            })?;
            records.push(ImageRecord {
                image_path: PathBuf::from(field(0)),
                patient_id: field(1),
                label,
                split,
            });
        }
        DatasetManifest::new(records)
    }

    /// Per-class/per-split table in the layout of the sample-wise split
    /// summary: rows train/val/test, one column per class plus a total.
    pub fn summary_table(&self) -> String {
        let classes = self.classes();
        let mut out = String::new();
        out.push_str(&format!("{:<8}", ""));
        for c in &classes {
            out.push_str(&format!("{:>20}", c.as_str()));
        }
        out.push_str(&format!("{:>10}\n", "Total"));
        for split in [Split::Train, Split::Val, Split::Test] {
            out.push_str(&format!("{:<8}", split.as_str()));
            let mut total = 0;
            for c in &classes {
                let n = self.class_counts[c].get(split);
                total += n;
                out.push_str(&format!("{n:>20}"));
            }
            out.push_str(&format!("{total:>10}\n"));
        }
        out
    }
}

fn recount(records: &[ImageRecord]) -> BTreeMap<ClassLabel, SplitCounts> {
    let mut counts: BTreeMap<ClassLabel, SplitCounts> = BTreeMap::new();
    for r in records {
        counts.entry(r.label).or_default().bump(r.split);
    }
    counts
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidManifest(format!("{}: {other:?}", path.display())),
    }
}
