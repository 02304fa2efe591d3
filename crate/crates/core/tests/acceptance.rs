//! Acceptance suite: one test per contract, each printing a PASS line.
//!
//! Expected values come from independent oracles computed here (scalar
//! loops, all-pairs counting, finite differences) or from hand evaluation,
//! never from the implementation under test.

use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cxr_triage::dataset::{
    split_by_patient, ClassLabel, DatasetManifest, ImageRecord, PreprocessSpec, Split, SplitParams,
};
use cxr_triage::loss::{compute_class_weights, weighted_bce_loss, ClassConfig, ClassWeights};
use cxr_triage::metrics::{auroc, bootstrap_f1, decide, roc_auc_trapezoid, roc_curve, PredictionMatrix};
use cxr_triage::model::{BackboneKind, ClassifierSpec, CxrModel, WeightsInit};
use cxr_triage::sampler::{BatchPlan, EpochSampler};
use cxr_triage::saliency::{generate_masks, rise_saliency, Grid, MaskSpec};
use cxr_triage::synthetic::{self, SyntheticSpec};
use cxr_triage::trainer::{predict, run_two_stage, OptimizerParams, StageConfig, TrainData};

fn pass(criterion: &str, detail: String) {
    println!("[acceptance] {criterion}: PASS ({detail})");
}

/// Scalar per-element reference for the weighted BCE: plain loops, no
/// vectorization, clamping at 1e-7.
fn scalar_loss_oracle(scores: &[Vec<f64>], labels: &[usize], weights: &[(f64, f64)]) -> f64 {
    let eps = 1e-7;
    let mut total = 0.0;
    for (row, &truth) in scores.iter().zip(labels) {
        let mut sample = 0.0;
        for (class, &raw) in row.iter().enumerate() {
            let s = raw.clamp(eps, 1.0 - eps);
            if truth == class {
                sample -= weights[class].0 * s.ln();
            } else {
                sample -= weights[class].1 * (1.0 - s).ln();
            }
        }
        total += sample;
    }
    total / scores.len() as f64
}

fn uniform_class_config(c: usize) -> ClassConfig {
    ClassConfig::new(
        (0..c).map(|i| format!("class{i}")).collect(),
        vec![ClassWeights { pos: 0.5, neg: 0.5 }; c],
        vec![1; c],
    )
    .unwrap()
}

#[test]
fn criterion_01_loss_matches_scalar_oracle() {
    let start = Instant::now();
    let device = Device::Cpu;

    // hand case: C=2, uniform weights, score 0.5 -> ln 2
    let hand = weighted_bce_loss(
        &Tensor::from_vec(vec![0.5f64, 0.5], (1, 2), &device).unwrap(),
        &[0],
        &uniform_class_config(2),
    )
    .unwrap()
    .to_scalar::<f64>()
    .unwrap();
    assert!(
        (hand - std::f64::consts::LN_2).abs() <= 1e-9,
        "hand case: {hand} vs ln2"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let c = if case % 2 == 0 { 3 } else { 4 };
        let b = rng.random_range(1..=16);
        let scores: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..c).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
        let weights: Vec<(f64, f64)> = (0..c)
            .map(|_| {
                let pos: f64 = rng.random_range(0.05..0.95);
                (pos, 1.0 - pos)
            })
            .collect();
        let cfg = ClassConfig::new(
            (0..c).map(|i| format!("class{i}")).collect(),
            weights.iter().map(|&(p, n)| ClassWeights { pos: p, neg: n }).collect(),
            vec![1; c],
        )
        .unwrap();

        let flat: Vec<f64> = scores.iter().flatten().copied().collect();
        let tensor = Tensor::from_vec(flat, (b, c), &device).unwrap();
        let got = weighted_bce_loss(&tensor, &labels, &cfg)
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        let want = scalar_loss_oracle(&scores, &labels, &weights);
        worst = worst.max((got - want).abs());
        assert!(
            (got - want).abs() <= 1e-6,
            "case {case}: vectorized {got} vs oracle {want}"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    pass(
        "criterion 1 loss-oracle",
        format!("100 batches, worst |diff| {worst:.2e}, hand case ln2, {elapsed:?}"),
    );
}

#[test]
fn criterion_02_weight_formula_exact_rationals() {
    let counts = [
        ("Normal".to_string(), 1341usize),
        ("BacterialPneumonia".to_string(), 2530),
        ("ViralPneumonia".to_string(), 1337),
        ("COVID19".to_string(), 115),
    ];
    let weights = compute_class_weights(&counts).unwrap();
    assert_eq!(weights[3].pos, 5208.0 / 5323.0, "w+ COVID as an exact rational");
    assert_eq!(weights[3].neg, 115.0 / 5323.0, "w- COVID as an exact rational");
    for (i, w) in weights.iter().enumerate() {
        assert!(
            (w.pos + w.neg - 1.0).abs() <= 1e-15,
            "class {i}: w+ + w- = {}",
            w.pos + w.neg
        );
    }
    pass(
        "criterion 2 weight-formula",
        format!("w+ = 5208/5323 = {:.6}, complements within 1e-15", weights[3].pos),
    );
}

fn synthetic_records(per_class: &[(ClassLabel, usize)]) -> Vec<ImageRecord> {
    per_class
        .iter()
        .flat_map(|(label, n)| {
            (0..*n).map(move |i| ImageRecord {
                image_path: format!("{label}_{i}.png").into(),
                patient_id: format!("{label}_{i}"),
                label: *label,
                split: Split::Train,
            })
        })
        .collect()
}

#[test]
fn criterion_03_sampler_exactness() {
    let start = Instant::now();

    // four-class, ratio 5:5:5:1, batch 16
    let records = synthetic_records(&[
        (ClassLabel::Normal, 120),
        (ClassLabel::BacterialPneumonia, 120),
        (ClassLabel::ViralPneumonia, 120),
        (ClassLabel::Covid19, 18),
    ]);
    let refs: Vec<&ImageRecord> = records.iter().collect();
    let cfg4 = ClassConfig::new(
        vec![
            "Normal".into(),
            "BacterialPneumonia".into(),
            "ViralPneumonia".into(),
            "COVID19".into(),
        ],
        vec![ClassWeights { pos: 0.5, neg: 0.5 }; 4],
        vec![5, 5, 5, 1],
    )
    .unwrap();
    let plan = BatchPlan::for_batch_size(&[5, 5, 5, 1], 16).unwrap();
    let sampler = EpochSampler::new(&refs, &cfg4, plan, 21).unwrap();
    let covid_indices: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.label == ClassLabel::Covid19)
        .map(|(i, _)| i)
        .collect();
    let mut batches_checked = 0;
    for epoch in 0..3u64 {
        let batches = sampler.epoch(epoch);
        assert_eq!(batches.len(), 18);
        let mut minority = Vec::new();
        for batch in &batches {
            assert_eq!(batch.histogram(4), vec![5, 5, 5, 1], "epoch {epoch}");
            assert_eq!(batch.items.len(), 16);
            minority.extend(batch.items.iter().filter(|&&(_, c)| c == 3).map(|&(i, _)| i));
            batches_checked += 1;
        }
        minority.sort_unstable();
        assert_eq!(minority, covid_indices, "epoch {epoch} minority coverage");
    }

    // three-class, ratio 7:7:1, batch 15
    let records3 = synthetic_records(&[
        (ClassLabel::Normal, 120),
        (ClassLabel::Pneumonia, 120),
        (ClassLabel::Covid19, 10),
    ]);
    let refs3: Vec<&ImageRecord> = records3.iter().collect();
    let cfg3 = ClassConfig::new(
        vec!["Normal".into(), "Pneumonia".into(), "COVID19".into()],
        vec![ClassWeights { pos: 0.5, neg: 0.5 }; 3],
        vec![7, 7, 1],
    )
    .unwrap();
    let plan3 = BatchPlan::for_batch_size(&[7, 7, 1], 15).unwrap();
    let sampler3 = EpochSampler::new(&refs3, &cfg3, plan3, 22).unwrap();
    for epoch in 0..3u64 {
        let batches = sampler3.epoch(epoch);
        assert_eq!(batches.len(), 10);
        for batch in &batches {
            assert_eq!(batch.histogram(3), vec![7, 7, 1]);
            batches_checked += 1;
        }
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    pass(
        "criterion 3 sampler-exactness",
        format!("{batches_checked} batches across both ratios, {elapsed:?}"),
    );
}

#[test]
fn criterion_04_patient_split_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let classes = [ClassLabel::Normal, ClassLabel::Pneumonia, ClassLabel::Covid19];
    let mut manifests = 0;
    for _ in 0..1000 {
        let num_classes = rng.random_range(1..=3);
        let mut records = Vec::new();
        let mut total_patients = 0;
        for class in classes.iter().take(num_classes) {
            // 2 patients per class minimum keeps train+test feasible
            let patients = rng.random_range(2..=(50 / num_classes));
            for p in 0..patients {
                let images = rng.random_range(1..=5);
                total_patients += 1;
                for i in 0..images {
                    records.push(ImageRecord {
                        image_path: format!("{class}_{p}_{i}.png").into(),
                        patient_id: format!("{class}_pat{p}"),
                        label: *class,
                        split: Split::Train,
                    });
                }
            }
        }
        assert!(total_patients <= 50);
        let manifest = DatasetManifest::new(records).unwrap();
        let split = split_by_patient(
            &manifest,
            &SplitParams {
                test_fraction: 0.2,
                val_count: 0,
                seed: 7,
            },
        )
        .unwrap();

        // zero patients straddling splits
        split.validate().unwrap();

        // per class: test images within one patient's images of the 20% target
        for class in classes.iter().take(num_classes) {
            let class_records: Vec<&ImageRecord> = split
                .records()
                .iter()
                .filter(|r| r.label == *class)
                .collect();
            let class_images = class_records.len();
            let test_images = class_records
                .iter()
                .filter(|r| r.split == Split::Test)
                .count();
            let mut patient_sizes = std::collections::BTreeMap::new();
            for r in &class_records {
                *patient_sizes.entry(r.patient_id.as_str()).or_insert(0usize) += 1;
            }
            let max_patient = patient_sizes.values().copied().max().unwrap_or(0);
            let target = 0.2 * class_images as f64;
            assert!(
                (test_images as f64 - target).abs() <= max_patient as f64,
                "{class}: test {test_images} vs target {target:.1}, max patient {max_patient}"
            );
        }
        manifests += 1;
    }
    pass(
        "criterion 4 patient-split",
        format!("{manifests} randomized manifests, zero straddlers"),
    );
}

#[test]
fn criterion_05_auroc_oracle() {
    // all-pairs oracle: P(pos > neg) + 0.5 P(tie)
    fn all_pairs(scores: &[f64], positives: &[bool]) -> f64 {
        let mut wins = 0.0f64;
        let mut pairs = 0.0f64;
        for (i, &pi) in positives.iter().enumerate() {
            if !pi {
                continue;
            }
            for (j, &pj) in positives.iter().enumerate() {
                if pj {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst_pairs = 0.0f64;
    let mut worst_trap = 0.0f64;
    for case in 0..100 {
        let n = rng.random_range(2..=200);
        // half the cases draw from a coarse grid to force ties
        let tie_prone = case % 2 == 0;
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if tie_prone {
                    f64::from(rng.random_range(0..8u32)) / 8.0
                } else {
                    rng.random_range(0.0..1.0)
                }
            })
            .collect();
        let mut positives: Vec<bool> = (0..n).map(|_| rng.random_range(0..2) == 1).collect();
        // ensure both classes appear
        positives[0] = true;
        if n > 1 {
            positives[1] = false;
        }

        let got = auroc(&scores, &positives).unwrap();
        let oracle = all_pairs(&scores, &positives);
        let curve = roc_curve(&scores, &positives).unwrap();
        let trapezoid = roc_auc_trapezoid(&curve);
        worst_pairs = worst_pairs.max((got - oracle).abs());
        worst_trap = worst_trap.max((got - trapezoid).abs());
        assert!((got - oracle).abs() <= 1e-9, "case {case}: rank {got} vs pairs {oracle}");
        assert!(
            (got - trapezoid).abs() <= 1e-9,
            "case {case}: rank {got} vs trapezoid {trapezoid}"
        );
    }
    pass(
        "criterion 5 auroc-oracle",
        format!("100 instances, worst vs pairs {worst_pairs:.2e}, vs trapezoid {worst_trap:.2e}"),
    );
}

#[test]
fn criterion_06_paper_mean_auroc_cross_check() {
    let table4 = [0.9788f64, 0.9798, 0.9370, 0.9994];
    let mean = table4.iter().sum::<f64>() / table4.len() as f64;
    let reported = 0.9738;
    assert!(
        (mean - reported).abs() <= 5e-5,
        "mean {mean} vs reported {reported}"
    );
    pass(
        "criterion 6 paper-arithmetic",
        format!("mean {mean:.5} within 5e-5 of {reported}"),
    );
}

fn tiny_model(num_classes: usize, seed: u64, dtype: DType) -> CxrModel {
    CxrModel::build(
        &ClassifierSpec {
            num_classes,
            backbone: BackboneKind::Tiny,
            init: WeightsInit::Random,
            seed,
        },
        dtype,
    )
    .unwrap()
}

fn backbone_snapshot(model: &CxrModel) -> Vec<(String, Vec<f32>)> {
    model
        .named_parameters()
        .into_iter()
        .filter(|(name, _)| name.starts_with("backbone.") && !name.contains("running_"))
        .map(|(name, t)| {
            (
                name,
                t.flatten_all()
                    .unwrap()
                    .to_dtype(DType::F32)
                    .unwrap()
                    .to_vec1::<f32>()
                    .unwrap(),
            )
        })
        .collect()
}

fn max_abs_delta(a: &[(String, Vec<f32>)], b: &[(String, Vec<f32>)]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|((_, xs), (_, ys))| xs.iter().zip(ys).map(|(x, y)| f64::from((x - y).abs())))
        .fold(0.0, f64::max)
}

#[test]
fn criterion_07_freeze_contract() {
    let device = Device::Cpu;
    let mut model = tiny_model(4, 7, DType::F32);
    let cfg = uniform_class_config(4);
    let images = Tensor::rand(-1.0f32, 1.0f32, (4, 3, 24, 24), &device).unwrap();
    let labels = vec![0usize, 1, 2, 3];

    // five frozen steps: backbone must not move at all, the head must
    model.set_backbone_trainable(false);
    let before = backbone_snapshot(&model);
    let head_before: Vec<f32> = model.named_parameters()["head.weight"]
        .flatten_all()
        .unwrap()
        .to_vec1::<f32>()
        .unwrap();
    let mut opt = AdamW::new(
        model.trainable_vars(),
        ParamsAdamW {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )
    .unwrap();
    for _ in 0..5 {
        let scores = model.forward(&images, true).unwrap();
        let loss = weighted_bce_loss(&scores, &labels, &cfg).unwrap();
        opt.backward_step(&loss).unwrap();
    }
    let after_frozen = backbone_snapshot(&model);
    let frozen_delta = max_abs_delta(&before, &after_frozen);
    assert_eq!(frozen_delta, 0.0, "frozen backbone moved by {frozen_delta}");
    let head_after: Vec<f32> = model.named_parameters()["head.weight"]
        .flatten_all()
        .unwrap()
        .to_vec1::<f32>()
        .unwrap();
    assert_ne!(head_before, head_after, "head must still learn while frozen");

    // one unfrozen step: at least one backbone parameter changes
    model.set_backbone_trainable(true);
    let mut opt2 = AdamW::new(
        model.trainable_vars(),
        ParamsAdamW {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )
    .unwrap();
    let scores = model.forward(&images, true).unwrap();
    let loss = weighted_bce_loss(&scores, &labels, &cfg).unwrap();
    opt2.backward_step(&loss).unwrap();
    let after_unfrozen = backbone_snapshot(&model);
    let unfrozen_delta = max_abs_delta(&after_frozen, &after_unfrozen);
    assert!(unfrozen_delta > 0.0, "stage-2 step left the backbone untouched");

    pass(
        "criterion 7 freeze-contract",
        format!("frozen max|delta| = 0, one end-to-end step max|delta| = {unfrozen_delta:.2e}"),
    );
}

#[test]
fn criterion_08_gradient_check_head_params() {
    let device = Device::Cpu;
    // f64 end to end so the finite differences are trustworthy
    let model = tiny_model(2, 3, DType::F64);
    let cfg = uniform_class_config(2);
    let images = Tensor::rand(-1.0f64, 1.0f64, (3, 3, 16, 16), &device).unwrap();
    let labels = vec![0usize, 1, 0];

    let loss_value = |m: &CxrModel| -> f64 {
        let scores = m.forward(&images, false).unwrap();
        weighted_bce_loss(&scores, &labels, &cfg)
            .unwrap()
            .to_scalar::<f64>()
            .unwrap()
    };

    let scores = model.forward(&images, false).unwrap();
    let loss = weighted_bce_loss(&scores, &labels, &cfg).unwrap();
    let grads = loss.backward().unwrap();

    let mut checked = 0usize;
    let mut worst_rel = 0.0f64;
    let h = 1e-5;
    for name in ["head.weight", "head.bias"] {
        let var = model.store().get(name).unwrap().clone();
        let analytic: Vec<f64> = grads
            .get(&var)
            .expect("head gradient present")
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        let base: Vec<f64> = var.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let shape = var.as_tensor().dims().to_vec();
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            var.set(&Tensor::from_vec(plus, shape.clone(), &device).unwrap())
                .unwrap();
            let up = loss_value(&model);
            let mut minus = base.clone();
            minus[i] -= h;
            var.set(&Tensor::from_vec(minus, shape.clone(), &device).unwrap())
                .unwrap();
            let down = loss_value(&model);
            var.set(&Tensor::from_vec(base.clone(), shape.clone(), &device).unwrap())
                .unwrap();

            let fd = (up - down) / (2.0 * h);
            let denom = analytic[i].abs().max(fd.abs());
            if denom < 1e-10 {
                continue; // both effectively zero
            }
            let rel = (analytic[i] - fd).abs() / denom;
            worst_rel = worst_rel.max(rel);
            assert!(
                rel <= 1e-3,
                "{name}[{i}]: analytic {} vs fd {fd}, rel {rel}",
                analytic[i]
            );
            checked += 1;
        }
    }
    assert!(checked > 10, "gradient check exercised only {checked} params");
    pass(
        "criterion 8 gradient-check",
        format!("{checked} head parameters, worst relative error {worst_rel:.2e}"),
    );
}

#[test]
fn criterion_09_end_to_end_smoke() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let manifest = synthetic::generate(
        &dir.path().join("data"),
        &SyntheticSpec {
            classes: vec![ClassLabel::Normal, ClassLabel::Covid19],
            train_per_class: 20,
            val_per_class: 2,
            test_per_class: 0,
            image_size: 32,
            seed: 7,
        },
    )
    .unwrap();
    let class_cfg = ClassConfig::from_train_counts(
        vec!["Normal".into(), "COVID19".into()],
        &[20, 20],
        vec![1, 1],
    )
    .unwrap();
    let data = TrainData {
        train: manifest.split_records(Split::Train),
        val: manifest.split_records(Split::Val),
        preprocess: PreprocessSpec::with_target_size(32),
    };
    let mut model = tiny_model(2, 1, DType::F32);
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
    assert!(stage1.max_epochs + stage2.max_epochs <= 50);
    let outcome = run_two_stage(
        &mut model,
        &stage1,
        &stage2,
        &data,
        &class_cfg,
        &dir.path().join("out"),
    )
    .unwrap();

    // checkpoint selection = minimum of the logged validation losses
    for log in [&outcome.stage1, &outcome.stage2] {
        let min = log
            .epochs
            .iter()
            .map(|e| e.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(log.selected_val_loss, min, "stage {} selection", log.stage);
        let first_hit = log.epochs.iter().find(|e| e.val_loss == min).unwrap();
        assert_eq!(
            log.selected_epoch, first_hit.epoch,
            "ties resolve to the earliest epoch"
        );
    }

    // loss decreases across the separable run
    let s2 = &outcome.stage2.epochs;
    assert!(s2[s2.len() - 1].train_loss < s2[0].train_loss);

    // train accuracy 1.0 on the final selected model
    let train = manifest.split_records(Split::Train);
    let scores = predict(&outcome.final_model, &train, &data.preprocess, 8).unwrap();
    let correct = scores
        .iter()
        .zip(&train)
        .filter(|(row, r)| class_cfg.classes[decide(row)] == r.label.as_str())
        .count();
    assert_eq!(correct, train.len(), "train accuracy must reach 1.0");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}");
    pass(
        "criterion 9 end-to-end-smoke",
        format!(
            "40/40 train accuracy, stage2 best epoch {}, {elapsed:?}",
            outcome.stage2.selected_epoch
        ),
    );
}

#[test]
fn criterion_10_bootstrap_determinism_and_sanity() {
    // perfect predictions -> (1, 1, 1)
    let perfect = PredictionMatrix::new(
        vec!["a".into(), "b".into()],
        (0..10).map(|i| format!("s{i}")).collect(),
        (0..10).map(|i| i % 2).collect(),
        (0..10)
            .map(|i| {
                if i % 2 == 0 {
                    vec![0.9, 0.1]
                } else {
                    vec![0.1, 0.9]
                }
            })
            .collect(),
    )
    .unwrap();
    let b = bootstrap_f1(&perfect, 100, 100, 3).unwrap();
    assert_eq!((b.point, b.ci_low, b.ci_high), (1.0, 1.0, 1.0));

    // fixed synthetic predictions with noise
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let n = 500;
    let mut labels = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        let truth = i % 3;
        labels.push(truth);
        let correct = rng.random_range(0.0..1.0) < 0.75;
        let winner = if correct { truth } else { (truth + 1) % 3 };
        let mut row = vec![0.2, 0.2, 0.2];
        row[winner] = 0.6;
        scores.push(row);
    }
    let pred = PredictionMatrix::new(
        vec!["x".into(), "y".into(), "z".into()],
        (0..n).map(|i| format!("s{i}")).collect(),
        labels,
        scores,
    )
    .unwrap();

    // determinism under a fixed seed
    let one = bootstrap_f1(&pred, 100, 100, 42).unwrap();
    let two = bootstrap_f1(&pred, 100, 100, 42).unwrap();
    assert_eq!(one, two, "same seed twice");

    // CI width shrinks when the resample size grows 100 -> 400
    let narrow = bootstrap_f1(&pred, 100, 400, 42).unwrap();
    let wide_width = one.ci_high - one.ci_low;
    let narrow_width = narrow.ci_high - narrow.ci_low;
    assert!(
        narrow_width < wide_width,
        "width {narrow_width} at size 400 vs {wide_width} at size 100"
    );
    pass(
        "criterion 10 bootstrap",
        format!("deterministic; CI width {wide_width:.4} -> {narrow_width:.4} as size 100 -> 400"),
    );
}

#[test]
fn criterion_11_rise_planted_region() {
    let size = 64usize;
    let (r0, c0, side) = (22usize, 30usize, 20usize);
    let image = Grid::new(size, size, vec![0.8; size * size]);

    // scorer reads only the planted region of the masked image
    let scorer = |g: &Grid| -> cxr_triage::Result<Vec<f64>> {
        let mut sum = 0.0f64;
        for r in r0..r0 + side {
            for c in c0..c0 + side {
                sum += f64::from(g.get(r, c));
            }
        }
        Ok(vec![sum / (side * side) as f64])
    };

    let mut hits = 0;
    for seed in 0..100u64 {
        let spec = MaskSpec {
            num_masks: 200,
            grid_h: 7,
            grid_w: 7,
            keep_probability: 0.5,
            seed,
        };
        let maps = rise_saliency(scorer, &image, &spec).unwrap();
        assert!(maps[0].data.iter().all(|&v| v >= 0.0), "nonnegativity");
        let (pr, pc) = maps[0].argmax();
        if pr >= r0 && pr < r0 + side && pc >= c0 && pc < c0 + side {
            hits += 1;
        }
    }
    assert!(hits >= 95, "argmax inside region only {hits}/100 runs");

    // p = 1 masks leave scores unchanged
    let ones_spec = MaskSpec {
        num_masks: 4,
        keep_probability: 1.0,
        seed: 1,
        ..Default::default()
    };
    let unmasked = scorer(&image).unwrap()[0];
    for mask in generate_masks(&ones_spec, size).unwrap() {
        let masked = Grid::new(
            size,
            size,
            image
                .data
                .iter()
                .zip(&mask.data)
                .map(|(&a, &m)| a * m)
                .collect(),
        );
        let s = scorer(&masked).unwrap()[0];
        assert_eq!(s, unmasked, "p=1 mask altered the score");
    }
    pass(
        "criterion 11 rise-planted-region",
        format!("{hits}/100 seeded runs localized, p=1 identity holds"),
    );
}
