//! Two-stage training with checkpoint selection by lowest validation loss.
//!
//! Stage 1 freezes the backbone and trains only the head; stage 2 starts
//! from the best stage-1 checkpoint and trains end-to-end. Both use Adam
//! (beta1 0.9, beta2 0.999, learning rate 1e-4 by default). After every
//! epoch the full validation set is scored unsampled with the training class
//! weights; the checkpoint with minimal validation loss wins, earliest epoch
//! on ties.

use std::path::{Path, PathBuf};

use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use serde::{Deserialize, Serialize};

use crate::dataset::{load_and_preprocess, ImageRecord, PrepMode, PreprocessSpec};
use crate::error::{Error, Result};
use crate::loss::{weighted_bce_loss, ClassConfig};
use crate::model::{save_checkpoint, CheckpointMeta, CxrModel};
use crate::sampler::{BatchPlan, EpochSampler};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Decoupled weight decay; 0 disables it and leaves plain Adam.
    pub weight_decay: f64,
    /// Global-norm gradient clip; absent means no clipping.
    pub grad_clip_norm: Option<f64>,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        OptimizerParams {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.0,
            grad_clip_norm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: u8,
    pub backbone_trainable: bool,
    pub optimizer: OptimizerParams,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Apply the preprocessing spec's train augmentations; off for
    /// exactness studies.
    pub augment: bool,
}

impl StageConfig {
    /// Head-only stage: batch 16, 30 epochs.
    pub fn stage1(seed: u64) -> StageConfig {
        StageConfig {
            stage: 1,
            backbone_trainable: false,
            optimizer: OptimizerParams::default(),
            batch_size: 16,
            max_epochs: 30,
            seed,
            augment: true,
        }
    }

    /// End-to-end stage: 10 epochs. The batch size stays at the smallest
    /// exact ratio multiple; composition exactness rules out sizes that do
    /// not divide by the ratio sum.
    pub fn stage2(seed: u64) -> StageConfig {
        StageConfig {
            stage: 2,
            backbone_trainable: true,
            optimizer: OptimizerParams::default(),
            batch_size: 16,
            max_epochs: 10,
            seed,
            augment: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        match self.stage {
            1 => {
                if self.backbone_trainable {
                    problems.push("stage 1 requires a frozen backbone".to_string());
                }
            }
            2 => {
                if !self.backbone_trainable {
                    problems.push("stage 2 trains end-to-end".to_string());
                }
            }
            s => problems.push(format!("stage must be 1 or 2, got {s}")),
        }
        let lr = self.optimizer.learning_rate;
        if !lr.is_finite() || lr <= 0.0 {
            problems.push(format!("learning rate must be > 0, got {lr}"));
        }
        for (name, beta) in [("beta1", self.optimizer.beta1), ("beta2", self.optimizer.beta2)] {
            if !beta.is_finite() || beta <= 0.0 || beta >= 1.0 {
                problems.push(format!("{name} must be in (0,1), got {beta}"));
            }
        }
        let decay = self.optimizer.weight_decay;
        if !decay.is_finite() || decay < 0.0 {
            problems.push(format!("weight_decay must be >= 0, got {decay}"));
        }
        if let Some(clip) = self.optimizer.grad_clip_norm {
            if !clip.is_finite() || clip <= 0.0 {
                problems.push(format!("grad_clip_norm must be > 0, got {clip}"));
            }
        }
        if self.max_epochs == 0 {
            problems.push("max_epochs must be >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub checkpoint: PathBuf,
}

/// Per-epoch history plus the selected checkpoint.
///
/// `seed` is the stage seed: the sampler stream for epoch `e` and the
/// augmentation stream for epoch `e` both derive from it by name, and the
/// split/init seeds derive the same way from the global seed recorded in
/// the echoed config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub stage: u8,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub selected_epoch: usize,
    pub selected_val_loss: f64,
    pub selected_checkpoint: PathBuf,
}

impl TrainLog {
    /// Line-delimited JSON: a header record, one record per epoch, one
    /// summary record.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut body = String::new();
        body.push_str(
            &serde_json::json!({
                "record": "header",
                "stage": self.stage,
                "seed": self.seed,
            })
            .to_string(),
        );
        body.push('\n');
        for e in &self.epochs {
            body.push_str(
                &serde_json::json!({
                    "record": "epoch",
                    "epoch": e.epoch,
                    "train_loss": e.train_loss,
                    "val_loss": e.val_loss,
                    "checkpoint": e.checkpoint,
                })
                .to_string(),
            );
            body.push('\n');
        }
        body.push_str(
            &serde_json::json!({
                "record": "summary",
                "selected_epoch": self.selected_epoch,
                "selected_val_loss": self.selected_val_loss,
                "selected_checkpoint": self.selected_checkpoint,
            })
            .to_string(),
        );
        body.push('\n');
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }
}

/// Train/val record views plus the preprocessing contract.
pub struct TrainData<'a> {
    pub train: Vec<&'a ImageRecord>,
    pub val: Vec<&'a ImageRecord>,
    pub preprocess: PreprocessSpec,
}

/// Stack records into a `(B, 3, S, S)` tensor in the model dtype.
fn batch_tensor(
    records: &[&ImageRecord],
    preprocess: &PreprocessSpec,
    mode: PrepMode<'_>,
    model: &CxrModel,
) -> Result<Tensor> {
    let s = preprocess.target_size;
    let mut flat = Vec::with_capacity(records.len() * 3 * s * s);
    match mode {
        PrepMode::Eval => {
            for r in records {
                let img = load_and_preprocess(&r.image_path, preprocess, PrepMode::Eval)?;
                flat.extend_from_slice(&img.data);
            }
        }
        PrepMode::Train { rng } => {
            for r in records {
                let img = load_and_preprocess(
                    &r.image_path,
                    preprocess,
                    PrepMode::Train { rng: &mut *rng },
                )?;
                flat.extend_from_slice(&img.data);
            }
        }
    }
    let t = Tensor::from_vec(flat, (records.len(), 3, s, s), model.store().device())?;
    Ok(t.to_dtype(model.dtype())?)
}

/// Mean weighted BCE over records, eval-mode preprocessing, no sampling.
pub fn validation_loss(
    model: &CxrModel,
    records: &[&ImageRecord],
    class_cfg: &ClassConfig,
    preprocess: &PreprocessSpec,
    batch_size: usize,
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyValidationSet);
    }
    let mut total = 0.0f64;
    for chunk in records.chunks(batch_size.max(1)) {
        let images = batch_tensor(chunk, preprocess, PrepMode::Eval, model)?;
        let labels = record_labels(chunk, class_cfg)?;
        let scores = model.forward(&images, false)?;
        let loss = weighted_bce_loss(&scores, &labels, class_cfg)?
            .to_dtype(candle_core::DType::F64)?
            .to_scalar::<f64>()?;
        total += loss * chunk.len() as f64;
    }
    Ok(total / records.len() as f64)
}

/// Scale every gradient so their global L2 norm stays at or under
/// `max_norm`.
fn clip_gradients(
    grads: &mut candle_core::backprop::GradStore,
    vars: &[candle_core::Var],
    max_norm: f64,
) -> Result<()> {
    let mut squared = 0.0f64;
    for var in vars {
        if let Some(g) = grads.get(var) {
            squared += g
                .sqr()?
                .sum_all()?
                .to_dtype(candle_core::DType::F64)?
                .to_scalar::<f64>()?;
        }
    }
    let norm = squared.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for var in vars {
            if let Some(g) = grads.remove(var.as_tensor()) {
                grads.insert(var.as_tensor(), (g * scale)?);
            }
        }
    }
    Ok(())
}

fn record_labels(records: &[&ImageRecord], class_cfg: &ClassConfig) -> Result<Vec<usize>> {
    records
        .iter()
        .map(|r| {
            class_cfg
                .classes
                .iter()
                .position(|c| c == r.label.as_str())
                .ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "record {} has label {} outside the configured classes",
                        r.image_path.display(),
                        r.label
                    ))
                })
        })
        .collect()
}

/// Run one stage: epoch loop, per-epoch validation, per-epoch checkpoints,
/// selection of the lowest validation loss.
pub fn train_stage(
    model: &mut CxrModel,
    cfg: &StageConfig,
    data: &TrainData<'_>,
    class_cfg: &ClassConfig,
    out_dir: &Path,
) -> Result<TrainLog> {
    cfg.validate()?;
    class_cfg.validate()?;
    data.preprocess.validate()?;
    if data.val.is_empty() {
        return Err(Error::EmptyValidationSet);
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    model.set_backbone_trainable(cfg.backbone_trainable);
    let plan = BatchPlan::for_batch_size(&class_cfg.sampling_ratio, cfg.batch_size)?;
    let sampler = EpochSampler::new(&data.train, class_cfg, plan, cfg.seed)?;

    let trainable = model.trainable_vars();
    let mut optimizer = AdamW::new(
        trainable.clone(),
        ParamsAdamW {
            lr: cfg.optimizer.learning_rate,
            beta1: cfg.optimizer.beta1,
            beta2: cfg.optimizer.beta2,
            eps: 1e-8,
            weight_decay: cfg.optimizer.weight_decay,
        },
    )?;

    let mut epochs = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(usize, f64, PathBuf)> = None;

    for epoch in 1..=cfg.max_epochs {
        let batches = sampler.epoch(epoch as u64);
        let mut aug_rng = seeding::indexed_rng(cfg.seed, "augment", epoch as u64);
        let mut loss_sum = 0.0f64;
        for (batch_idx, batch) in batches.iter().enumerate() {
            let records: Vec<&ImageRecord> =
                batch.items.iter().map(|&(i, _)| data.train[i]).collect();
            let labels = batch.labels();
            let mode = if cfg.augment {
                PrepMode::Train { rng: &mut aug_rng }
            } else {
                PrepMode::Eval
            };
            let images = batch_tensor(&records, &data.preprocess, mode, model)?;
            let scores = model.forward(&images, true)?;
            let loss = weighted_bce_loss(&scores, &labels, class_cfg)?;
            let loss_value = loss.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
            if !loss_value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    stage: cfg.stage,
                    epoch,
                    batch: batch_idx,
                });
            }
            let mut grads = loss.backward()?;
            if let Some(max_norm) = cfg.optimizer.grad_clip_norm {
                clip_gradients(&mut grads, &trainable, max_norm)?;
            }
            optimizer.step(&grads)?;
            loss_sum += loss_value;
        }
        let train_loss = loss_sum / batches.len().max(1) as f64;
        let val_loss = validation_loss(model, &data.val, class_cfg, &data.preprocess, cfg.batch_size)?;

        let checkpoint = out_dir.join(format!("stage{}_epoch{:03}.safetensors", cfg.stage, epoch));
        let meta = CheckpointMeta {
            epoch,
            stage: cfg.stage,
            val_loss,
            class_config: class_cfg.clone(),
            backbone: model.backbone_kind(),
            target_size: data.preprocess.target_size,
        };
        save_checkpoint(model, &meta, &checkpoint)?;
        eprintln!(
            "stage {} epoch {epoch}/{}: train loss {train_loss:.6}, val loss {val_loss:.6}",
            cfg.stage, cfg.max_epochs
        );
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            checkpoint: checkpoint.clone(),
        });
        // strict improvement only: ties keep the earliest epoch
        if best.as_ref().map(|(_, v, _)| val_loss < *v).unwrap_or(true) {
            best = Some((epoch, val_loss, checkpoint));
        }
    }

    let (selected_epoch, selected_val_loss, selected_checkpoint) =
        best.expect("max_epochs >= 1 yields at least one epoch");
    let log = TrainLog {
        stage: cfg.stage,
        seed: cfg.seed,
        epochs,
        selected_epoch,
        selected_val_loss,
        selected_checkpoint: selected_checkpoint.clone(),
    };
    log.write_jsonl(&out_dir.join(format!("stage{}_log.jsonl", cfg.stage)))?;
    let marker = serde_json::json!({
        "stage": cfg.stage,
        "epoch": selected_epoch,
        "val_loss": selected_val_loss,
        "checkpoint": selected_checkpoint,
    });
    let marker_path = out_dir.join(format!("stage{}_best.json", cfg.stage));
    std::fs::write(&marker_path, marker.to_string()).map_err(|e| Error::io(&marker_path, e))?;
    Ok(log)
}

/// Eval-mode scores for a record list, `N` rows of `C` f64 scores.
pub fn predict(
    model: &CxrModel,
    records: &[&ImageRecord],
    preprocess: &PreprocessSpec,
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::with_capacity(records.len());
    for chunk in records.chunks(batch_size.max(1)) {
        let images = batch_tensor(chunk, preprocess, PrepMode::Eval, model)?;
        let scores = model
            .forward(&images, false)?
            .to_dtype(candle_core::DType::F64)?
            .to_vec2::<f64>()?;
        rows.extend(scores);
    }
    Ok(rows)
}

/// Outcome of the full two-stage protocol.
#[derive(Debug)]
pub struct ProtocolOutcome {
    pub stage1: TrainLog,
    pub stage2: TrainLog,
    /// The selected stage-2 checkpoint.
    pub final_checkpoint: PathBuf,
    /// Model loaded back from the selected checkpoint.
    pub final_model: CxrModel,
}

/// Stage 1 on `model`, then stage 2 starting from the best stage-1
/// checkpoint. Returns both logs and the final selected model.
pub fn run_two_stage(
    model: &mut CxrModel,
    stage1_cfg: &StageConfig,
    stage2_cfg: &StageConfig,
    data: &TrainData<'_>,
    class_cfg: &ClassConfig,
    out_dir: &Path,
) -> Result<ProtocolOutcome> {
    let stage1 = train_stage(model, stage1_cfg, data, class_cfg, out_dir)?;
    let (mut second, _) = crate::model::load_checkpoint(
        &stage1.selected_checkpoint,
        Some(&class_cfg.classes),
    )?;
    let stage2 = train_stage(&mut second, stage2_cfg, data, class_cfg, out_dir)?;
    let (final_model, _) =
        crate::model::load_checkpoint(&stage2.selected_checkpoint, Some(&class_cfg.classes))?;
    let final_checkpoint = stage2.selected_checkpoint.clone();
    Ok(ProtocolOutcome {
        stage1,
        stage2,
        final_checkpoint,
        final_model,
    })
}

/// Class weights from the manifest's training counts in the configured
/// class order, paired with the configured sampling ratio.
pub fn class_config_from_manifest(
    manifest: &crate::dataset::DatasetManifest,
    cfg: &crate::config::RunConfig,
) -> Result<ClassConfig> {
    let names = cfg.class_names();
    for label in manifest.classes() {
        if !names.iter().any(|n| n == label.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "manifest contains {label} records but the configured class mode expects {}; re-run prepare-data under this class mode",
                names.join("/")
            )));
        }
    }
    let counts: Vec<usize> = names
        .iter()
        .map(|name| {
            crate::dataset::ClassLabel::parse(name)
                .and_then(|label| manifest.class_counts().get(&label))
                .map(|c| c.train)
                .unwrap_or(0)
        })
        .collect();
    ClassConfig::from_train_counts(names, &counts, cfg.sampling_ratio())
}

/// The whole protocol from a run config: read the manifest, derive class
/// weights from training counts, build the model (pretrained or random),
/// run stage 1 then stage 2 under `<output_dir>/checkpoints`.
pub fn run_full_protocol(cfg: &crate::config::RunConfig) -> Result<ProtocolOutcome> {
    cfg.validate(crate::config::PathsFor::Training)?;
    let manifest = crate::dataset::DatasetManifest::read_tsv(&cfg.manifest_path())?;
    let class_cfg = class_config_from_manifest(&manifest, cfg)?;
    let mut model = CxrModel::build(&cfg.classifier_spec()?, candle_core::DType::F32)?;
    let preprocess = PreprocessSpec {
        target_size: cfg.model.target_size,
        ..Default::default()
    };
    let data = TrainData {
        train: manifest.split_records(crate::dataset::Split::Train),
        val: manifest.split_records(crate::dataset::Split::Val),
        preprocess,
    };
    run_two_stage(
        &mut model,
        &cfg.stage_config(1),
        &cfg.stage_config(2),
        &data,
        &class_cfg,
        &cfg.output_dir.join("checkpoints"),
    )
}
