//! Evaluation metrics: argmax decisions, per-class one-vs-rest AUROC and ROC
//! curves, accuracy, sensitivity, PPV, confusion matrix, and bootstrap F1
//! with a 95% confidence interval.
//!
//! AUROC uses the rank formulation of pair counting (ties get half credit),
//! which equals trapezoidal integration of the exact ROC curve.

mod plots;

pub use plots::{render_confusion_svg, render_roc_svg};

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

/// Per-class sigmoid confidence scores plus ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    pub class_names: Vec<String>,
    pub sample_ids: Vec<String>,
    /// Ground-truth class index per sample.
    pub labels: Vec<usize>,
    /// `N x C`, row-major.
    pub scores: Vec<Vec<f64>>,
}

impl PredictionMatrix {
    pub fn new(
        class_names: Vec<String>,
        sample_ids: Vec<String>,
        labels: Vec<usize>,
        scores: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let c = class_names.len();
        let n = labels.len();
        if sample_ids.len() != n || scores.len() != n {
            return Err(Error::InvalidArgument(format!(
                "inconsistent prediction matrix: {n} labels, {} ids, {} score rows",
                sample_ids.len(),
                scores.len()
            )));
        }
        for (i, row) in scores.iter().enumerate() {
            if row.len() != c {
                return Err(Error::InvalidArgument(format!(
                    "sample {} has {} scores for {c} classes",
                    sample_ids[i],
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "sample {} has a non-finite score",
                    sample_ids[i]
                )));
            }
        }
        for &l in &labels {
            if l >= c {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    num_classes: c,
                });
            }
        }
        Ok(PredictionMatrix {
            class_names,
            sample_ids,
            labels,
            scores,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Tab-delimited: header `sample_id`, `label`, then one column per class.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut body = String::new();
        body.push_str("sample_id\tlabel");
        for name in &self.class_names {
            body.push('\t');
            body.push_str(name);
        }
        body.push('\n');
        for i in 0..self.len() {
            body.push_str(&self.sample_ids[i]);
            body.push('\t');
            body.push_str(&self.class_names[self.labels[i]]);
            for v in &self.scores[i] {
                body.push_str(&format!("\t{v}"));
            }
            body.push('\n');
        }
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| {
            Error::InvalidArgument(format!("{}: empty predictions file", path.display()))
        })?;
        let cols: Vec<&str> = header.split('\t').collect();
        if cols.len() < 3 || cols[0] != "sample_id" || cols[1] != "label" {
            return Err(Error::InvalidArgument(format!(
                "{}: expected header sample_id<TAB>label<TAB><class names>",
                path.display()
            )));
        }
        let class_names: Vec<String> = cols[2..].iter().map(|s| s.to_string()).collect();
        let mut sample_ids = Vec::new();
        let mut labels = Vec::new();
        let mut scores = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 2 + class_names.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} line {}: {} fields, expected {}",
                    path.display(),
                    lineno + 2,
                    fields.len(),
                    2 + class_names.len()
                )));
            }
            let label = class_names
                .iter()
                .position(|c| c == fields[1])
                .ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "{} line {}: label {:?} is not one of the header classes",
                        path.display(),
                        lineno + 2,
                        fields[1]
                    ))
                })?;
            let row: Vec<f64> = fields[2..]
                .iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|_| {
                        Error::InvalidArgument(format!(
                            "{} line {}: bad score {f:?}",
                            path.display(),
                            lineno + 2
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            sample_ids.push(fields[0].to_string());
            labels.push(label);
            scores.push(row);
        }
        PredictionMatrix::new(class_names, sample_ids, labels, scores)
    }
}

/// Argmax decision; ties resolve to the lowest class index.
pub fn decide(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Probability that a random positive outscores a random negative, ties
/// counted half. Rank-based, `O(N log N)`.
pub fn auroc(scores: &[f64], positives: &[bool]) -> Result<f64> {
    let n = scores.len();
    if n != positives.len() {
        return Err(Error::InvalidArgument(format!(
            "{n} scores vs {} labels",
            positives.len()
        )));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite score".into()));
    }
    let pos = positives.iter().filter(|&&p| p).count();
    let neg = n - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::AurocUndefined);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average 1-based ranks across tied groups
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = (0..n).filter(|&k| positives[k]).map(|k| ranks[k]).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// One operating point of a ROC curve. `threshold` is `None` for the
/// starting (0,0) point, which corresponds to an unreachable cut above every
/// score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: Option<f64>,
}

/// Exact ROC curve with a point at every distinct score.
pub fn roc_curve(scores: &[f64], positives: &[bool]) -> Result<Vec<RocPoint>> {
    let n = scores.len();
    let pos = positives.iter().filter(|&&p| p).count();
    let neg = n - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::AurocUndefined);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a])); // descending

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: None,
    }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < n {
        let threshold = scores[order[i]];
        while i < n && scores[order[i]] == threshold {
            if positives[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: Some(threshold),
        });
    }
    Ok(points)
}

/// Trapezoidal area under a ROC curve.
pub fn roc_auc_trapezoid(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    /// `None` when the class is absent from the ground truth (or covers it
    /// entirely), which leaves the ranking undefined.
    pub auroc: Option<f64>,
    pub sensitivity: Option<f64>,
    pub ppv: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapF1 {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub resamples: usize,
    pub resample_size: usize,
    pub seed: u64,
}

/// Everything reported for one prediction matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub num_samples: usize,
    pub accuracy: f64,
    /// Rows are ground truth, columns are predictions.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassMetrics>,
    pub mean_auroc: Option<f64>,
    /// One curve per class where AUROC is defined.
    pub roc_curves: Vec<Option<Vec<RocPoint>>>,
    pub bootstrap: Option<BootstrapF1>,
}

/// Full evaluation: argmax confusion matrix, accuracy, per-class
/// sensitivity/PPV/AUROC and ROC curves. Classes absent from the ground
/// truth get `None` AUROC while everything else is still computed.
pub fn evaluate(pred: &PredictionMatrix) -> Result<EvalReport> {
    if pred.is_empty() {
        return Err(Error::EmptyPredictions);
    }
    let c = pred.num_classes();
    let n = pred.len();

    let decisions: Vec<usize> = pred.scores.iter().map(|row| decide(row)).collect();
    let mut confusion = vec![vec![0usize; c]; c];
    for (&truth, &guess) in pred.labels.iter().zip(&decisions) {
        confusion[truth][guess] += 1;
    }
    let correct: usize = (0..c).map(|i| confusion[i][i]).sum();
    let accuracy = correct as f64 / n as f64;

    let mut per_class = Vec::with_capacity(c);
    let mut roc_curves = Vec::with_capacity(c);
    for class in 0..c {
        let truth_count: usize = confusion[class].iter().sum();
        let pred_count: usize = (0..c).map(|r| confusion[r][class]).sum();
        let tp = confusion[class][class];
        let sensitivity = (truth_count > 0).then(|| tp as f64 / truth_count as f64);
        let ppv = (pred_count > 0).then(|| tp as f64 / pred_count as f64);

        let col: Vec<f64> = pred.scores.iter().map(|row| row[class]).collect();
        let one_vs_rest: Vec<bool> = pred.labels.iter().map(|&l| l == class).collect();
        let (auc, curve) = match auroc(&col, &one_vs_rest) {
            Ok(a) => (Some(a), Some(roc_curve(&col, &one_vs_rest)?)),
            Err(Error::AurocUndefined) => (None, None),
            Err(e) => return Err(e),
        };
        per_class.push(ClassMetrics {
            name: pred.class_names[class].clone(),
            auroc: auc,
            sensitivity,
            ppv,
        });
        roc_curves.push(curve);
    }

    let defined: Vec<f64> = per_class.iter().filter_map(|m| m.auroc).collect();
    let mean_auroc = if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    };

    Ok(EvalReport {
        class_names: pred.class_names.clone(),
        num_samples: n,
        accuracy,
        confusion,
        per_class,
        mean_auroc,
        roc_curves,
        bootstrap: None,
    })
}

/// Macro-averaged F1 over `num_classes` classes. A class with zero
/// precision and recall (including one absent from both truth and
/// predictions) contributes 0 to the average.
pub fn macro_f1(labels: &[usize], decisions: &[usize], num_classes: usize) -> f64 {
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fnc = vec![0usize; num_classes];
    for (&t, &p) in labels.iter().zip(decisions) {
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fnc[t] += 1;
        }
    }
    let mut sum = 0.0;
    for c in 0..num_classes {
        let denom = 2 * tp[c] + fp[c] + fnc[c];
        if denom > 0 {
            sum += 2.0 * tp[c] as f64 / denom as f64;
        }
    }
    sum / num_classes as f64
}

/// Bootstrap the macro F1: `resamples` draws of `resample_size` predictions
/// with replacement; point estimate is the mean and the CI the 2.5th/97.5th
/// percentiles. Per-resample RNG streams derive from `(seed, index)`, so the
/// result is seed-deterministic and resamples could be scored in any order.
pub fn bootstrap_f1(
    pred: &PredictionMatrix,
    resamples: usize,
    resample_size: usize,
    seed: u64,
) -> Result<BootstrapF1> {
    if pred.is_empty() {
        return Err(Error::EmptyPredictions);
    }
    if resamples == 0 || resample_size == 0 {
        return Err(Error::InvalidArgument(
            "bootstrap needs resamples >= 1 and resample_size >= 1".into(),
        ));
    }
    let n = pred.len();
    let c = pred.num_classes();
    let decisions: Vec<usize> = pred.scores.iter().map(|row| decide(row)).collect();

    let mut f1s = Vec::with_capacity(resamples);
    for r in 0..resamples {
        let mut rng = seeding::indexed_rng(seed, "bootstrap", r as u64);
        let mut labels = Vec::with_capacity(resample_size);
        let mut guesses = Vec::with_capacity(resample_size);
        for _ in 0..resample_size {
            let k = rng.random_range(0..n);
            labels.push(pred.labels[k]);
            guesses.push(decisions[k]);
        }
        f1s.push(macro_f1(&labels, &guesses, c));
    }
    let point = f1s.iter().sum::<f64>() / f1s.len() as f64;
    let mut sorted = f1s;
    sorted.sort_by(f64::total_cmp);
    Ok(BootstrapF1 {
        point,
        ci_low: percentile(&sorted, 0.025),
        ci_high: percentile(&sorted, 0.975),
        resamples,
        resample_size,
        seed,
    })
}

/// Linear-interpolation percentile over a sorted slice, `q` in [0,1].
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = q * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if lo + 1 < n {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    } else {
        sorted[n - 1]
    }
}
