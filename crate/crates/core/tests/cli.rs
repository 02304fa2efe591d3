//! End-to-end tests of the command-line surface: prepare-data, train,
//! evaluate (both inference and external-predictions paths), infer and
//! explain, plus exit codes and rerun idempotence.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cxr_triage::dataset::ClassLabel;
use cxr_triage::synthetic::{self, SyntheticSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cxr-triage"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

fn png(path: &Path, value: u8) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    image::GrayImage::from_pixel(20, 20, image::Luma([value]))
        .save(path)
        .unwrap();
}

/// Miniature COVID + pneumonia sources shaped like the real datasets.
fn source_fixture(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let covid_images = dir.join("covid/images");
    let mut metadata = String::from("patientid,finding,view,filename\n");
    for patient in 1..=5 {
        for shot in 0..2 {
            let file = format!("c{patient}_{shot}.png");
            metadata.push_str(&format!("C{patient},COVID-19,PA,{file}\n"));
            png(&covid_images.join(&file), 100 + patient * 9);
        }
    }
    metadata.push_str("C1,COVID-19,L,side.png\n");
    png(&covid_images.join("side.png"), 10);
    let metadata_csv = dir.join("covid/metadata.csv");
    fs::write(&metadata_csv, metadata).unwrap();

    let pneu = dir.join("pneumonia");
    for p in 1..=6 {
        png(&pneu.join(format!("train/NORMAL/IM-{p:03}.png")), 220);
        png(&pneu.join(format!("train/PNEUMONIA/person{p}_bacteria_1.png")), 150);
        png(&pneu.join(format!("train/PNEUMONIA/person{p}_virus_1.png")), 80);
    }
    (covid_images, metadata_csv, pneu)
}

fn write_config(path: &Path, body: &str) {
    fs::write(path, body).unwrap();
}

#[test]
fn prepare_data_prints_table_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (covid_images, metadata_csv, pneu) = source_fixture(dir.path());
    let out_dir = dir.path().join("run");
    let config = dir.path().join("run.toml");
    write_config(
        &config,
        &format!(
            r#"
seed = 5
class_mode = "four_class"
output_dir = "{out}"

[data]
covid_image_dir = "{covid}"
covid_metadata = "{meta}"
pneumonia_dir = "{pneu}"

[split]
test_fraction = 0.25
val_count = 4
"#,
            out = out_dir.display(),
            covid = covid_images.display(),
            meta = metadata_csv.display(),
            pneu = pneu.display(),
        ),
    );

    let first = run(&["prepare-data", "--config", config.to_str().unwrap()]);
    assert!(first.status.success(), "stderr: {}", stderr(&first));
    let text = stdout(&first);
    for needle in ["Normal", "BacterialPneumonia", "COVID19", "train", "Total"] {
        assert!(text.contains(needle), "summary table missing {needle}: {text}");
    }
    let manifest_path = out_dir.join("manifest.tsv");
    assert!(manifest_path.is_file());
    assert!(out_dir.join("rejects.txt").is_file());
    assert!(out_dir.join("config.effective.toml").is_file());
    // the lateral view landed in rejects
    let rejects = fs::read_to_string(out_dir.join("rejects.txt")).unwrap();
    assert!(rejects.contains("side.png"));

    let manifest_bytes = fs::read(&manifest_path).unwrap();
    let second = run(&["prepare-data", "--config", config.to_str().unwrap()]);
    assert!(second.status.success());
    assert_eq!(
        manifest_bytes,
        fs::read(&manifest_path).unwrap(),
        "rerun must be byte-identical"
    );
}

#[test]
fn prepare_data_on_empty_sources_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let covid_images = dir.path().join("covid/images");
    fs::create_dir_all(&covid_images).unwrap();
    let metadata_csv = dir.path().join("covid/metadata.csv");
    fs::write(&metadata_csv, "patientid,finding,view,filename\n").unwrap();
    let pneu = dir.path().join("pneumonia");
    fs::create_dir_all(&pneu).unwrap();
    let config = dir.path().join("run.toml");
    write_config(
        &config,
        &format!(
            r#"
output_dir = "{out}"
[data]
covid_image_dir = "{covid}"
covid_metadata = "{meta}"
pneumonia_dir = "{pneu}"
"#,
            out = dir.path().join("run").display(),
            covid = covid_images.display(),
            meta = metadata_csv.display(),
            pneu = pneu.display(),
        ),
    );
    let out = run(&["prepare-data", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("no images ingested"));
}

#[test]
fn config_errors_list_every_violation_and_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    write_config(
        &config,
        r#"
output_dir = "out"
[split]
test_fraction = 2.0
[stage1]
batch_size = 7
learning_rate = 0.0
"#,
    );
    let out = run(&["train", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("test_fraction"), "{err}");
    assert!(err.contains("stage1.batch_size"), "{err}");
    assert!(err.contains("stage1.learning_rate"), "{err}");
}

#[test]
fn invalid_stage_flag_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    // manifest must exist to reach the stage dispatch
    let manifest = dir.path().join("manifest.tsv");
    fs::write(&manifest, "image_path\tpatient_id\tlabel\tsplit\n").unwrap();
    write_config(
        &config,
        &format!(
            r#"
output_dir = "{out}"
[data]
manifest = "{manifest}"
"#,
            out = dir.path().join("run").display(),
            manifest = manifest.display(),
        ),
    );
    let out = run(&["train", "--config", config.to_str().unwrap(), "--stage", "3"]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
}

#[test]
fn evaluate_identity_predictions_reports_accuracy_1() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let predictions = dir.path().join("identity.tsv");
    let mut body = String::from("sample_id\tlabel\tNormal\tPneumonia\tCOVID19\n");
    for (i, (label, scores)) in [
        ("Normal", "0.99\t0.005\t0.005"),
        ("Normal", "0.9\t0.05\t0.05"),
        ("Pneumonia", "0.05\t0.9\t0.05"),
        ("Pneumonia", "0.1\t0.8\t0.1"),
        ("COVID19", "0.05\t0.05\t0.9"),
        ("COVID19", "0.01\t0.04\t0.95"),
    ]
    .iter()
    .enumerate()
    {
        body.push_str(&format!("s{i}\t{label}\t{scores}\n"));
    }
    fs::write(&predictions, body).unwrap();

    let config = dir.path().join("run.toml");
    write_config(
        &config,
        &format!(
            r#"
class_mode = "three_class"
output_dir = "{out}"
[metrics]
bootstrap_resamples = 50
bootstrap_resample_size = 50
"#,
            out = out_dir.display(),
        ),
    );
    let out = run(&[
        "evaluate",
        "--config",
        config.to_str().unwrap(),
        "--predictions",
        predictions.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("accuracy 1.0000"), "{}", stdout(&out));

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("eval/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["accuracy"], 1.0);
    assert_eq!(report["bootstrap"]["point"], 1.0);
    assert!(out_dir.join("eval/roc.svg").is_file());
    assert!(out_dir.join("eval/confusion.svg").is_file());

    // byte-identical rerun
    let bytes = fs::read(out_dir.join("eval/report.json")).unwrap();
    let again = run(&[
        "evaluate",
        "--config",
        config.to_str().unwrap(),
        "--predictions",
        predictions.to_str().unwrap(),
    ]);
    assert!(again.status.success());
    assert_eq!(bytes, fs::read(out_dir.join("eval/report.json")).unwrap());

    // re-running from the echoed effective config reproduces the run
    let echoed = out_dir.join("config.effective.toml");
    assert!(echoed.is_file());
    let from_echo = run(&[
        "evaluate",
        "--config",
        echoed.to_str().unwrap(),
        "--predictions",
        predictions.to_str().unwrap(),
    ]);
    assert!(from_echo.status.success(), "stderr: {}", stderr(&from_echo));
    assert_eq!(bytes, fs::read(out_dir.join("eval/report.json")).unwrap());
}

#[test]
fn evaluate_without_sources_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    write_config(
        &config,
        &format!(r#"output_dir = "{}""#, dir.path().join("run").display()),
    );
    let out = run(&["evaluate", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--checkpoint or --predictions"));
}

/// Full pipeline through the binary: train on synthetic four-class data,
/// then evaluate, infer and explain with the produced checkpoint.
#[test]
fn train_evaluate_infer_explain_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let manifest = synthetic::generate(
        &dir.path().join("data"),
        &SyntheticSpec {
            classes: vec![
                ClassLabel::Normal,
                ClassLabel::BacterialPneumonia,
                ClassLabel::ViralPneumonia,
                ClassLabel::Covid19,
            ],
            train_per_class: 12,
            val_per_class: 1,
            test_per_class: 2,
            image_size: 16,
            seed: 3,
        },
    )
    .unwrap();
    // thin COVID train pool to 4 so epochs stay short
    let records: Vec<_> = manifest
        .records()
        .iter()
        .filter(|r| {
            !(r.label == ClassLabel::Covid19
                && r.split == cxr_triage::dataset::Split::Train
                && r.patient_id
                    .rsplit(':')
                    .next()
                    .and_then(|s| s.parse::<usize>().ok())
                    .map(|k| k >= 4)
                    .unwrap_or(false))
        })
        .cloned()
        .collect();
    let manifest = cxr_triage::dataset::DatasetManifest::new(records).unwrap();
    let manifest_path = dir.path().join("manifest.tsv");
    manifest.write_tsv(&manifest_path).unwrap();

    let config = dir.path().join("run.toml");
    write_config(
        &config,
        &format!(
            r#"
seed = 9
class_mode = "four_class"
output_dir = "{out}"

[data]
manifest = "{manifest}"

[model]
backbone = "tiny"
target_size = 16

[stage1]
max_epochs = 2
learning_rate = 0.003
augment = false

[stage2]
max_epochs = 1
learning_rate = 0.003
augment = false

[metrics]
bootstrap_resamples = 30
bootstrap_resample_size = 30

[saliency]
num_masks = 40
"#,
            out = out_dir.display(),
            manifest = manifest_path.display(),
        ),
    );

    let train = run(&["train", "--config", config.to_str().unwrap()]);
    assert!(train.status.success(), "stderr: {}", stderr(&train));
    assert!(stdout(&train).contains("stage 2 best epoch"));
    let best_marker = out_dir.join("checkpoints/stage2_best.json");
    assert!(best_marker.is_file());
    let marker: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&best_marker).unwrap()).unwrap();
    let checkpoint = marker["checkpoint"].as_str().unwrap().to_string();
    assert!(Path::new(&checkpoint).is_file());
    assert!(out_dir.join("checkpoints/stage1_log.jsonl").is_file());
    assert!(out_dir.join("checkpoints/stage2_log.jsonl").is_file());

    let eval = run(&[
        "evaluate",
        "--config",
        config.to_str().unwrap(),
        "--checkpoint",
        &checkpoint,
    ]);
    assert!(eval.status.success(), "stderr: {}", stderr(&eval));
    assert!(out_dir.join("eval/report.json").is_file());
    assert!(out_dir.join("eval/predictions.tsv").is_file());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("eval/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["num_samples"], 8);
    assert_eq!(report["class_names"].as_array().unwrap().len(), 4);

    // infer: four scores in (0,1) plus a class name
    let sample = manifest.records()[0].image_path.clone();
    let infer_out = dir.path().join("infer-out");
    let infer = run(&[
        "infer",
        "--checkpoint",
        &checkpoint,
        "--out-dir",
        infer_out.to_str().unwrap(),
        sample.to_str().unwrap(),
    ]);
    assert!(infer.status.success(), "stderr: {}", stderr(&infer));
    let line = stdout(&infer);
    let fields: Vec<&str> = line.lines().next().unwrap().split('\t').collect();
    assert_eq!(fields.len(), 6, "path + 4 scores + decision: {line}");
    for score in &fields[1..5] {
        let v: f64 = score.parse().unwrap();
        assert!(v > 0.0 && v < 1.0);
    }
    assert!(ClassLabel::parse(fields[5]).is_some(), "decision {}", fields[5]);
    assert!(infer_out.join("inferences.tsv").is_file());

    // explain: saliency json + overlay for the predicted class
    let explain_out = dir.path().join("explain-out");
    let explain = run(&[
        "explain",
        "--checkpoint",
        &checkpoint,
        "--masks",
        "40",
        "--out-dir",
        explain_out.to_str().unwrap(),
        sample.to_str().unwrap(),
    ]);
    assert!(explain.status.success(), "stderr: {}", stderr(&explain));
    let stem = sample.file_stem().unwrap().to_string_lossy().to_string();
    let saliency_json = explain_out.join(format!("{stem}.saliency.json"));
    assert!(saliency_json.is_file());
    let saliency: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&saliency_json).unwrap()).unwrap();
    assert_eq!(saliency["mask_spec"]["num_masks"], 40);
    assert_eq!(saliency["maps"].as_array().unwrap().len(), 4);
    let predicted = saliency["predicted"].as_str().unwrap();
    assert!(explain_out.join(format!("{stem}.{predicted}.png")).is_file());

    // train rerun determinism: logs and checkpoints byte-identical
    let log_bytes = fs::read(out_dir.join("checkpoints/stage1_log.jsonl")).unwrap();
    let ckpt_bytes = fs::read(&checkpoint).unwrap();
    let retrain = run(&["train", "--config", config.to_str().unwrap()]);
    assert!(retrain.status.success());
    assert_eq!(
        log_bytes,
        fs::read(out_dir.join("checkpoints/stage1_log.jsonl")).unwrap(),
        "training rerun must reproduce the stage-1 log byte for byte"
    );
    assert_eq!(
        ckpt_bytes,
        fs::read(&checkpoint).unwrap(),
        "training rerun must reproduce the selected checkpoint byte for byte"
    );
}

#[test]
fn staged_training_runs_stage_1_then_stage_2() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let manifest = synthetic::generate(
        &dir.path().join("data"),
        &SyntheticSpec {
            classes: vec![ClassLabel::Normal, ClassLabel::Covid19],
            train_per_class: 4,
            val_per_class: 1,
            test_per_class: 0,
            image_size: 16,
            seed: 1,
        },
    )
    .unwrap();
    let manifest_path = dir.path().join("manifest.tsv");
    manifest.write_tsv(&manifest_path).unwrap();
    let config = dir.path().join("run.toml");
    write_config(
        &config,
        &format!(
            r#"
class_mode = "four_class"
sampling_ratio = "1:1"
output_dir = "{out}"
[data]
manifest = "{manifest}"
[model]
backbone = "tiny"
target_size = 16
[stage1]
batch_size = 2
max_epochs = 1
augment = false
[stage2]
batch_size = 2
max_epochs = 1
augment = false
"#,
            out = out_dir.display(),
            manifest = manifest_path.display(),
        ),
    );
    // sampling_ratio length must match the class mode; this config narrows
    // to two classes via the ratio, which the validator must reject
    let bad = run(&["train", "--config", config.to_str().unwrap(), "--stage", "1"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains("sampling_ratio"));

    // a valid four-class setup for the staged run
    let manifest4 = synthetic::generate(
        &dir.path().join("data4"),
        &SyntheticSpec {
            classes: vec![
                ClassLabel::Normal,
                ClassLabel::BacterialPneumonia,
                ClassLabel::ViralPneumonia,
                ClassLabel::Covid19,
            ],
            train_per_class: 2,
            val_per_class: 1,
            test_per_class: 0,
            image_size: 16,
            seed: 2,
        },
    )
    .unwrap();
    manifest4.write_tsv(&manifest_path).unwrap();
    let fixed = fs::read_to_string(&config)
        .unwrap()
        .replace("sampling_ratio = \"1:1\"", "sampling_ratio = \"1:1:1:1\"")
        .replace("batch_size = 2", "batch_size = 4");
    fs::write(&config, fixed).unwrap();

    // stage 2 before stage 1 fails with guidance
    let premature = run(&["train", "--config", config.to_str().unwrap(), "--stage", "2"]);
    assert_eq!(premature.status.code(), Some(2), "stderr: {}", stderr(&premature));
    assert!(stderr(&premature).contains("--stage 1"));

    let stage1 = run(&["train", "--config", config.to_str().unwrap(), "--stage", "1"]);
    assert!(stage1.status.success(), "stderr: {}", stderr(&stage1));
    assert!(out_dir.join("checkpoints/stage1_best.json").is_file());

    let stage2 = run(&["train", "--config", config.to_str().unwrap(), "--stage", "2"]);
    assert!(stage2.status.success(), "stderr: {}", stderr(&stage2));
    assert!(out_dir.join("checkpoints/stage2_best.json").is_file());
    assert!(stdout(&stage2).contains("stage 2 best epoch"));
}

#[test]
fn output_dir_env_var_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let env_out = dir.path().join("env-out");
    let predictions = dir.path().join("p.tsv");
    fs::write(
        &predictions,
        "sample_id\tlabel\tA\tB\ns0\tA\t0.9\t0.1\ns1\tB\t0.2\t0.8\n",
    )
    .unwrap();
    let config = dir.path().join("run.toml");
    write_config(
        &config,
        &format!(
            r#"
output_dir = "{ignored}"
[metrics]
bootstrap_resamples = 10
bootstrap_resample_size = 10
"#,
            ignored = dir.path().join("ignored").display(),
        ),
    );
    let out = bin()
        .args([
            "evaluate",
            "--config",
            config.to_str().unwrap(),
            "--predictions",
            predictions.to_str().unwrap(),
        ])
        .env("CXR_TRIAGE_OUT_DIR", &env_out)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(env_out.join("eval/report.json").is_file());
    assert!(!dir.path().join("ignored").exists());
}
