//! Command-line entry point: `prepare-data`, `train`, `evaluate`, `infer`,
//! `explain`. Flags beat config-file values, which beat defaults. Exit
//! codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{PathsFor, RunConfig, OUT_DIR_ENV};
use crate::dataset::{
    build_manifest, load_raw_gray, split_by_patient, CovidSource, DatasetManifest, PreprocessSpec,
    Split, SplitParams,
};
use crate::error::{Error, Result};
use crate::metrics::{
    bootstrap_f1, decide, evaluate, render_confusion_svg, render_roc_svg, PredictionMatrix,
};
use crate::model::{load_checkpoint, CheckpointMeta, CxrModel};
use crate::saliency::{rise_saliency, Grid, MaskSpec, SaliencyOutput};
use crate::trainer::{
    class_config_from_manifest, predict, run_full_protocol, train_stage, TrainData,
};
use crate::dataset::raw_gray_to_tensor;

#[derive(Parser)]
#[command(
    name = "cxr-triage",
    version,
    about = "Chest X-ray triage classifier: data preparation, two-stage training, evaluation and saliency"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest both image sources, re-split by patient and write the manifest.
    PrepareData {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Override the config's global seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the two-stage protocol (or a single stage).
    Train {
        #[arg(long)]
        config: PathBuf,
        /// 1 = head-only, 2 = end-to-end from the stage-1 best checkpoint.
        #[arg(long)]
        stage: Option<u8>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score the test split (or an external predictions file) and write the
    /// evaluation report and plots.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Pre-computed prediction matrix; skips model inference entirely.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Per-image class scores and the argmax decision.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Where to write inferences.tsv (default: CXR_TRIAGE_OUT_DIR or `.`).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Saliency overlays via randomized masking.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of random masks (default 1000).
        #[arg(long)]
        masks: Option<usize>,
        /// Render an overlay for every class, not just the predicted one.
        #[arg(long)]
        all_classes: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write overlays and maps (default: CXR_TRIAGE_OUT_DIR or `.`).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
}

/// Parse and dispatch; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let outcome = match cli.command {
        Command::PrepareData {
            config,
            output_dir,
            seed,
        } => load_config(&config, output_dir, seed).and_then(|cfg| cmd_prepare_data(&cfg)),
        Command::Train {
            config,
            stage,
            output_dir,
            seed,
        } => load_config(&config, output_dir, seed).and_then(|cfg| cmd_train(&cfg, stage)),
        Command::Evaluate {
            config,
            checkpoint,
            predictions,
            output_dir,
            seed,
        } => load_config(&config, output_dir, seed)
            .and_then(|cfg| cmd_evaluate(&cfg, checkpoint.as_deref(), predictions.as_deref())),
        Command::Infer {
            checkpoint,
            out_dir,
            images,
        } => cmd_infer(&checkpoint, resolve_out_dir(out_dir), &images),
        Command::Explain {
            checkpoint,
            masks,
            all_classes,
            seed,
            out_dir,
            images,
        } => cmd_explain(
            &checkpoint,
            masks,
            all_classes,
            seed,
            resolve_out_dir(out_dir),
            &images,
        ),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_) | Error::InvalidArgument(_) | Error::BatchSizeIncompatible { .. } => 2,
        _ => 1,
    }
}

fn load_config(path: &Path, output_dir: Option<PathBuf>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn resolve_out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var(OUT_DIR_ENV).ok().filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn echo_config(cfg: &RunConfig) -> Result<()> {
    ensure_dir(&cfg.output_dir)?;
    cfg.write_effective(&cfg.output_dir.join("config.effective.toml"))
}

fn cmd_prepare_data(cfg: &RunConfig) -> Result<()> {
    cfg.validate(PathsFor::PrepareData)?;
    let covid = CovidSource {
        image_dir: cfg.data.covid_image_dir.clone(),
        metadata_csv: cfg.data.covid_metadata.clone(),
    };
    let (raw, rejects) = build_manifest(&covid, &cfg.data.pneumonia_dir, cfg.class_mode)?;
    if raw.is_empty() {
        return Err(Error::InvalidConfig(vec![
            "no images ingested from the configured sources".into(),
        ]));
    }
    let manifest = split_by_patient(
        &raw,
        &SplitParams {
            test_fraction: cfg.split.test_fraction,
            val_count: cfg.split.val_count,
            seed: cfg.split_seed(),
        },
    )?;
    echo_config(cfg)?;
    let manifest_path = cfg.manifest_path();
    if let Some(parent) = manifest_path.parent() {
        ensure_dir(parent)?;
    }
    manifest.write_tsv(&manifest_path)?;
    rejects.write(&cfg.output_dir.join("rejects.txt"))?;
    print!("{}", manifest.summary_table());
    println!(
        "prepare-data: {} records -> {} ({} rejects)",
        manifest.len(),
        manifest_path.display(),
        rejects.len()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, stage: Option<u8>) -> Result<()> {
    cfg.validate(PathsFor::Training)?;
    echo_config(cfg)?;
    let ckpt_dir = cfg.output_dir.join("checkpoints");
    match stage {
        None => {
            let outcome = run_full_protocol(cfg)?;
            println!(
                "train: stage 1 best epoch {} (val loss {:.6}); stage 2 best epoch {} (val loss {:.6}) -> {}",
                outcome.stage1.selected_epoch,
                outcome.stage1.selected_val_loss,
                outcome.stage2.selected_epoch,
                outcome.stage2.selected_val_loss,
                outcome.final_checkpoint.display()
            );
        }
        Some(1) => {
            let manifest = DatasetManifest::read_tsv(&cfg.manifest_path())?;
            let class_cfg = class_config_from_manifest(&manifest, cfg)?;
            let mut model =
                CxrModel::build(&cfg.classifier_spec()?, candle_core::DType::F32)?;
            let data = train_data(&manifest, cfg);
            let log = train_stage(&mut model, &cfg.stage_config(1), &data, &class_cfg, &ckpt_dir)?;
            println!(
                "train: stage 1 best epoch {} (val loss {:.6}) -> {}",
                log.selected_epoch,
                log.selected_val_loss,
                log.selected_checkpoint.display()
            );
        }
        Some(2) => {
            let manifest = DatasetManifest::read_tsv(&cfg.manifest_path())?;
            let class_cfg = class_config_from_manifest(&manifest, cfg)?;
            let marker = ckpt_dir.join("stage1_best.json");
            let best = read_best_marker(&marker)?;
            let (mut model, _) = load_checkpoint(&best, Some(&class_cfg.classes))?;
            let data = train_data(&manifest, cfg);
            let log = train_stage(&mut model, &cfg.stage_config(2), &data, &class_cfg, &ckpt_dir)?;
            println!(
                "train: stage 2 best epoch {} (val loss {:.6}) -> {}",
                log.selected_epoch,
                log.selected_val_loss,
                log.selected_checkpoint.display()
            );
        }
        Some(other) => {
            return Err(Error::InvalidArgument(format!(
                "--stage must be 1 or 2, got {other}"
            )))
        }
    }
    Ok(())
}

fn train_data<'a>(manifest: &'a DatasetManifest, cfg: &RunConfig) -> TrainData<'a> {
    TrainData {
        train: manifest.split_records(Split::Train),
        val: manifest.split_records(Split::Val),
        preprocess: PreprocessSpec {
            target_size: cfg.model.target_size,
            ..Default::default()
        },
    }
}

fn read_best_marker(path: &Path) -> Result<PathBuf> {
    if !path.is_file() {
        return Err(Error::InvalidArgument(format!(
            "{} not found; run `train --stage 1` first",
            path.display()
        )));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
        Error::InvalidArgument(format!("{}: malformed best marker: {e}", path.display()))
    })?;
    value
        .get("checkpoint")
        .and_then(|v| v.as_str())
        .map(PathBuf::from)
        .ok_or_else(|| {
            Error::InvalidArgument(format!("{}: marker lacks a checkpoint field", path.display()))
        })
}

fn cmd_evaluate(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    predictions: Option<&Path>,
) -> Result<()> {
    cfg.validate(PathsFor::NoneRequired)?;
    let eval_dir = cfg.output_dir.join("eval");
    ensure_dir(&eval_dir)?;
    echo_config(cfg)?;

    let pred = match (predictions, checkpoint) {
        (Some(file), _) => PredictionMatrix::read_tsv(file)?,
        (None, Some(ckpt)) => {
            cfg.validate(PathsFor::Training)?;
            let manifest = DatasetManifest::read_tsv(&cfg.manifest_path())?;
            let class_cfg = class_config_from_manifest(&manifest, cfg)?;
            let (model, meta) = load_checkpoint(ckpt, Some(&class_cfg.classes))?;
            let test = manifest.split_records(Split::Test);
            if test.is_empty() {
                return Err(Error::EmptyPredictions);
            }
            let preprocess = PreprocessSpec {
                target_size: meta.target_size,
                ..Default::default()
            };
            let batch = cfg.stage_batch_size(&cfg.stage1);
            let scores = predict(&model, &test, &preprocess, batch)?;
            let matrix = PredictionMatrix::new(
                class_cfg.classes.clone(),
                test.iter()
                    .map(|r| r.image_path.to_string_lossy().to_string())
                    .collect(),
                test.iter()
                    .map(|r| {
                        class_cfg
                            .classes
                            .iter()
                            .position(|c| c == r.label.as_str())
                            .expect("labels validated by class_config_from_manifest")
                    })
                    .collect(),
                scores,
            )?;
            matrix.write_tsv(&eval_dir.join("predictions.tsv"))?;
            matrix
        }
        (None, None) => {
            return Err(Error::InvalidArgument(
                "evaluate needs --checkpoint or --predictions".into(),
            ))
        }
    };

    let mut report = evaluate(&pred)?;
    report.bootstrap = Some(bootstrap_f1(
        &pred,
        cfg.metrics.bootstrap_resamples,
        cfg.metrics.bootstrap_resample_size,
        cfg.bootstrap_seed(),
    )?);

    let report_path = eval_dir.join("report.json");
    let json = serde_json::to_string_pretty(&report).map_err(|e| {
        Error::InvalidArgument(format!("cannot encode report: {e}"))
    })?;
    std::fs::write(&report_path, json).map_err(|e| Error::io(&report_path, e))?;
    render_roc_svg(&report, &eval_dir.join("roc.svg"))?;
    render_confusion_svg(&report, &eval_dir.join("confusion.svg"))?;

    let b = report.bootstrap.as_ref().expect("bootstrap just attached");
    println!(
        "evaluate: n={} accuracy {:.4} mean AUROC {} F1 {:.4} (95% CI {:.4}-{:.4}) -> {}",
        report.num_samples,
        report.accuracy,
        report
            .mean_auroc
            .map(|a| format!("{a:.4}"))
            .unwrap_or_else(|| "n/a".into()),
        b.point,
        b.ci_low,
        b.ci_high,
        report_path.display()
    );
    Ok(())
}

fn load_for_inference(checkpoint: &Path) -> Result<(CxrModel, CheckpointMeta, PreprocessSpec)> {
    let (model, meta) = load_checkpoint(checkpoint, None)?;
    let preprocess = PreprocessSpec {
        target_size: meta.target_size,
        ..Default::default()
    };
    Ok((model, meta, preprocess))
}

fn cmd_infer(checkpoint: &Path, out_dir: PathBuf, images: &[PathBuf]) -> Result<()> {
    let (model, meta, preprocess) = load_for_inference(checkpoint)?;
    ensure_dir(&out_dir)?;
    let classes = &meta.class_config.classes;

    let mut body = String::from("sample_id\tlabel");
    for c in classes {
        body.push('\t');
        body.push_str(c);
    }
    body.push('\n');
    for image in images {
        let gray = load_raw_gray(image, preprocess.target_size)?;
        let tensor = raw_gray_to_tensor(&gray, &preprocess);
        let input = candle_core::Tensor::from_vec(
            tensor.data,
            (1, 3, preprocess.target_size, preprocess.target_size),
            model.store().device(),
        )?;
        let scores: Vec<f64> = model
            .forward(&input, false)?
            .to_dtype(candle_core::DType::F64)?
            .to_vec2::<f64>()?
            .remove(0);
        let klass = &classes[decide(&scores)];
        let rendered: Vec<String> = scores.iter().map(|s| format!("{s:.6}")).collect();
        println!("{}\t{}\t{}", image.display(), rendered.join("\t"), klass);
        body.push_str(&format!("{}\t-", image.display()));
        for s in &scores {
            body.push_str(&format!("\t{s}"));
        }
        body.push('\n');
    }
    let out = out_dir.join("inferences.tsv");
    std::fs::write(&out, body).map_err(|e| Error::io(&out, e))?;
    println!("infer: {} image(s) -> {}", images.len(), out.display());
    Ok(())
}

fn cmd_explain(
    checkpoint: &Path,
    masks: Option<usize>,
    all_classes: bool,
    seed: u64,
    out_dir: PathBuf,
    images: &[PathBuf],
) -> Result<()> {
    let (model, meta, preprocess) = load_for_inference(checkpoint)?;
    ensure_dir(&out_dir)?;
    let size = preprocess.target_size;
    let spec = MaskSpec {
        num_masks: masks.unwrap_or(1000),
        seed,
        ..Default::default()
    };

    for image_path in images {
        let gray = load_raw_gray(image_path, size)?;
        let image = Grid::new(size, size, gray);

        let score_grid = |g: &Grid| -> Result<Vec<f64>> {
            let tensor = raw_gray_to_tensor(&g.data, &preprocess);
            let input = candle_core::Tensor::from_vec(
                tensor.data,
                (1, 3, size, size),
                model.store().device(),
            )?;
            Ok(model
                .forward(&input, false)?
                .to_dtype(candle_core::DType::F64)?
                .to_vec2::<f64>()?
                .remove(0))
        };

        let scores = score_grid(&image)?;
        let predicted_idx = decide(&scores);
        let maps = rise_saliency(score_grid, &image, &spec)?;

        let stem = image_path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "image".into());
        let output = SaliencyOutput {
            mask_spec: spec,
            class_names: meta.class_config.classes.clone(),
            scores: scores.clone(),
            predicted: meta.class_config.classes[predicted_idx].clone(),
            maps: maps.clone(),
        };
        let json_path = out_dir.join(format!("{stem}.saliency.json"));
        let json = serde_json::to_string(&output).map_err(|e| {
            Error::InvalidArgument(format!("cannot encode saliency output: {e}"))
        })?;
        std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;

        let render_for: Vec<usize> = if all_classes {
            (0..maps.len()).collect()
        } else {
            vec![predicted_idx]
        };
        for class_idx in render_for {
            let overlay_path = out_dir.join(format!(
                "{stem}.{}.png",
                meta.class_config.classes[class_idx]
            ));
            crate::saliency::render_overlay(&image, &maps[class_idx], &overlay_path)?;
        }
        println!(
            "explain: {} predicted {} ({} masks) -> {}",
            image_path.display(),
            output.predicted,
            spec.num_masks,
            json_path.display()
        );
    }
    Ok(())
}
