//! Two-stage training on a synthetic separable dataset with the tiny
//! random-init backbone: stage 1 trains the head only, stage 2 fine-tunes
//! end-to-end from the best stage-1 checkpoint, and both stages select by
//! lowest validation loss.
//!
//!     cargo run --example train_two_stage

use cxr_triage::dataset::{ClassLabel, PreprocessSpec, Split};
use cxr_triage::loss::ClassConfig;
use cxr_triage::metrics::decide;
use cxr_triage::model::{BackboneKind, ClassifierSpec, CxrModel, WeightsInit};
use cxr_triage::synthetic::{self, SyntheticSpec};
use cxr_triage::trainer::{
    predict, run_two_stage, OptimizerParams, StageConfig, TrainData,
};

fn main() -> cxr_triage::Result<()> {
    let dir = std::env::temp_dir().join("cxr-triage-example-train");
    let data_dir = dir.join("data");
    let out_dir = dir.join("out");

    let spec = SyntheticSpec {
        classes: vec![ClassLabel::Normal, ClassLabel::Covid19],
        train_per_class: 20,
        val_per_class: 2,
        test_per_class: 0,
        image_size: 32,
        seed: 7,
    };
    let manifest = synthetic::generate(&data_dir, &spec)?;
    println!("synthetic dataset:\n{}", manifest.summary_table());

    let class_cfg = ClassConfig::from_train_counts(
        vec!["Normal".into(), "COVID19".into()],
        &[20, 20],
        vec![1, 1],
    )?;
    let data = TrainData {
        train: manifest.split_records(Split::Train),
        val: manifest.split_records(Split::Val),
        preprocess: PreprocessSpec::with_target_size(32),
    };

    let mut model = CxrModel::build(
        &ClassifierSpec {
            num_classes: 2,
            backbone: BackboneKind::Tiny,
            init: WeightsInit::Random,
            seed: 1,
        },
        candle_core::DType::F32,
    )?;

    let stage1 = StageConfig {
        optimizer: OptimizerParams {
            learning_rate: 3e-3,
            ..Default::default()
        },
        batch_size: 8,
        max_epochs: 20,
        augment: false,
        ..StageConfig::stage1(11)
    };
    let stage2 = StageConfig {
        optimizer: OptimizerParams {
            learning_rate: 3e-3,
            ..Default::default()
        },
        batch_size: 8,
        max_epochs: 20,
        augment: false,
        ..StageConfig::stage2(12)
    };

    let outcome = run_two_stage(&mut model, &stage1, &stage2, &data, &class_cfg, &out_dir)?;
    for log in [&outcome.stage1, &outcome.stage2] {
        println!("stage {}:", log.stage);
        for e in &log.epochs {
            println!(
                "  epoch {:>2}  train loss {:.4}  val loss {:.4}",
                e.epoch, e.train_loss, e.val_loss
            );
        }
        println!(
            "  selected epoch {} (val loss {:.4})",
            log.selected_epoch, log.selected_val_loss
        );
    }

    // train accuracy of the final selected model
    let train = manifest.split_records(Split::Train);
    let scores = predict(&outcome.final_model, &train, &data.preprocess, 8)?;
    let correct = scores
        .iter()
        .zip(&train)
        .filter(|(row, r)| {
            class_cfg.classes[decide(row)] == r.label.as_str()
        })
        .count();
    println!(
        "final model: train accuracy {:.3} ({} / {})",
        correct as f64 / train.len() as f64,
        correct,
        train.len()
    );
    println!("checkpoints and logs under {}", out_dir.display());
    Ok(())
}
