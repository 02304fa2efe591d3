//! Class-weighted binary cross-entropy.
//!
//! Each class is treated as an independent binary problem over a sigmoid
//! score. For a sample with true class `y`, the per-sample loss is
//!
//! ```text
//! sum_c [ -w+_c * 1{y=c} * log s_c  -  w-_c * 1{y!=c} * log(1 - s_c) ]
//! ```
//!
//! with `w+_c = N_c/(N_c+P_c)` and `w-_c = P_c/(N_c+P_c)` computed from the
//! raw training counts (`P_c` positives of class `c`, `N_c` the rest). The
//! batch loss is the mean over samples. Scores are clamped to
//! `[1e-7, 1-1e-7]` before the logs.

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamp applied to sigmoid scores before taking logs.
pub const SCORE_CLAMP: f64 = 1e-7;

/// Positive/negative weight pair for one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub pos: f64,
    pub neg: f64,
}

/// The label space with its loss weights and batch-composition ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassConfig {
    /// Ordered class names; the sampling ratio is positional and the
    /// minority class sits last.
    pub classes: Vec<String>,
    pub weights: Vec<ClassWeights>,
    pub sampling_ratio: Vec<u32>,
}

impl ClassConfig {
    pub fn new(classes: Vec<String>, weights: Vec<ClassWeights>, sampling_ratio: Vec<u32>) -> Result<Self> {
        let cfg = ClassConfig {
            classes,
            weights,
            sampling_ratio,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Weights from per-class training counts plus a sampling ratio.
    pub fn from_train_counts(
        classes: Vec<String>,
        train_counts: &[usize],
        sampling_ratio: Vec<u32>,
    ) -> Result<Self> {
        if classes.len() != train_counts.len() {
            return Err(Error::InvalidArgument(format!(
                "{} classes but {} counts",
                classes.len(),
                train_counts.len()
            )));
        }
        let named: Vec<(String, usize)> = classes
            .iter()
            .cloned()
            .zip(train_counts.iter().copied())
            .collect();
        let weights = compute_class_weights(&named)?;
        ClassConfig::new(classes, weights, sampling_ratio)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.classes.len();
        if c == 0 {
            return Err(Error::InvalidArgument("no classes configured".into()));
        }
        if self.weights.len() != c {
            return Err(Error::InvalidArgument(format!(
                "{} weight pairs for {c} classes",
                self.weights.len()
            )));
        }
        if self.sampling_ratio.len() != c {
            return Err(Error::InvalidArgument(format!(
                "sampling ratio has {} entries for {c} classes",
                self.sampling_ratio.len()
            )));
        }
        for (name, w) in self.classes.iter().zip(&self.weights) {
            let ok = w.pos > 0.0 && w.pos < 1.0 && w.neg > 0.0 && w.neg < 1.0;
            if !ok || (w.pos + w.neg - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "weights for {name} must be complementary and inside (0,1), got ({}, {})",
                    w.pos, w.neg
                )));
            }
        }
        if self.sampling_ratio.contains(&0) {
            return Err(Error::InvalidArgument(
                "sampling ratio entries must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// `(w+, w-)` per class from training counts: `w+_c = N_c/(N_c+P_c)`,
/// `w-_c = P_c/(N_c+P_c)` with `N_c + P_c` the training-set size.
pub fn compute_class_weights(train_counts: &[(String, usize)]) -> Result<Vec<ClassWeights>> {
    let total: usize = train_counts.iter().map(|(_, n)| n).sum();
    let mut out = Vec::with_capacity(train_counts.len());
    for (name, positives) in train_counts {
        if *positives == 0 {
            return Err(Error::DegenerateWeights(name.clone()));
        }
        if *positives == total {
            // single-class training set: the negative weight would be 0
            return Err(Error::DegenerateWeights(name.clone()));
        }
        let negatives = total - positives;
        out.push(ClassWeights {
            pos: negatives as f64 / total as f64,
            neg: *positives as f64 / total as f64,
        });
    }
    Ok(out)
}

/// Batch-mean weighted BCE over a `B x C` score matrix.
///
/// `scores` must already be sigmoid outputs; any float dtype works and the
/// computation stays in that dtype (tests use f64, training f32). The result
/// is a scalar tensor attached to the autograd graph of `scores`.
pub fn weighted_bce_loss(scores: &Tensor, labels: &[usize], cfg: &ClassConfig) -> Result<Tensor> {
    let (batch, num_classes) = scores.dims2()?;
    if num_classes != cfg.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "score matrix has {num_classes} columns for {} classes",
            cfg.num_classes()
        )));
    }
    if labels.len() != batch {
        return Err(Error::InvalidArgument(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    for &l in labels {
        if l >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: l,
                num_classes,
            });
        }
    }

    let device = scores.device();
    let dtype = scores.dtype();
    let one_hot = one_hot_matrix(labels, num_classes, device)?.to_dtype(dtype)?;
    let w_pos = Tensor::from_vec(
        cfg.weights.iter().map(|w| w.pos).collect::<Vec<f64>>(),
        num_classes,
        device,
    )?
    .to_dtype(dtype)?;
    let w_neg = Tensor::from_vec(
        cfg.weights.iter().map(|w| w.neg).collect::<Vec<f64>>(),
        num_classes,
        device,
    )?
    .to_dtype(dtype)?;

    let s = scores.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP)?;
    let pos_term = one_hot.mul(&s.log()?)?.broadcast_mul(&w_pos)?;
    let ones = Tensor::ones((batch, num_classes), dtype, device)?;
    let neg_mask = ones.sub(&one_hot)?;
    let neg_term = neg_mask
        .mul(&ones.sub(&s)?.log()?)?
        .broadcast_mul(&w_neg)?;
    let per_sample = pos_term.add(&neg_term)?.sum(1)?.neg()?;
    Ok(per_sample.mean(0)?)
}

fn one_hot_matrix(labels: &[usize], num_classes: usize, device: &Device) -> Result<Tensor> {
    let mut data = vec![0.0f32; labels.len() * num_classes];
    for (i, &l) in labels.iter().enumerate() {
        data[i * num_classes + l] = 1.0;
    }
    Ok(Tensor::from_vec(data, (labels.len(), num_classes), device)?)
}
