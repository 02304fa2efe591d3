//! The metric suite on a small prediction matrix: per-class AUROC and ROC
//! curves, confusion matrix, sensitivity/PPV, accuracy, and the bootstrap F1
//! confidence interval. Writes report.json plus the ROC and confusion-matrix
//! SVGs.
//!
//!     cargo run --example evaluate_predictions

use cxr_triage::metrics::{
    bootstrap_f1, evaluate, render_confusion_svg, render_roc_svg, PredictionMatrix,
};

fn main() -> cxr_triage::Result<()> {
    let classes = vec![
        "Normal".to_string(),
        "Pneumonia".to_string(),
        "COVID19".to_string(),
    ];
    // a plausible 12-sample test outcome: mostly right, two confusions
    let labels = vec![0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 1];
    let scores = vec![
        vec![0.93, 0.05, 0.02],
        vec![0.81, 0.15, 0.04],
        vec![0.55, 0.40, 0.05],
        vec![0.30, 0.62, 0.08], // Normal misread as Pneumonia
        vec![0.10, 0.85, 0.05],
        vec![0.25, 0.70, 0.05],
        vec![0.15, 0.80, 0.05],
        vec![0.45, 0.50, 0.05],
        vec![0.05, 0.15, 0.80],
        vec![0.04, 0.26, 0.70],
        vec![0.10, 0.30, 0.60],
        vec![0.05, 0.40, 0.55], // Pneumonia misread as COVID19
    ];
    let ids = (0..labels.len()).map(|i| format!("img{i:02}")).collect();
    let pred = PredictionMatrix::new(classes, ids, labels, scores)?;

    let mut report = evaluate(&pred)?;
    report.bootstrap = Some(bootstrap_f1(&pred, 100, 100, 7)?);

    println!("n = {}, accuracy = {:.4}", report.num_samples, report.accuracy);
    println!("confusion (rows truth, cols prediction):");
    for (name, row) in report.class_names.iter().zip(&report.confusion) {
        println!("  {name:<12} {row:?}");
    }
    println!("\n{:<12} {:>8} {:>12} {:>8}", "class", "AUROC", "sensitivity", "PPV");
    for m in &report.per_class {
        println!(
            "{:<12} {:>8} {:>12} {:>8}",
            m.name,
            fmt(m.auroc),
            fmt(m.sensitivity),
            fmt(m.ppv)
        );
    }
    println!("mean AUROC = {}", fmt(report.mean_auroc));
    let b = report.bootstrap.as_ref().unwrap();
    println!(
        "bootstrap F1 = {:.4} (95% CI {:.4}-{:.4}, {} resamples of {})",
        b.point, b.ci_low, b.ci_high, b.resamples, b.resample_size
    );

    let out = std::env::temp_dir().join("cxr-triage-example-eval");
    std::fs::create_dir_all(&out).unwrap();
    let report_path = out.join("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report).unwrap()).unwrap();
    render_roc_svg(&report, &out.join("roc.svg"))?;
    render_confusion_svg(&report, &out.join("confusion.svg"))?;
    println!("\nreport and plots under {}", out.display());
    Ok(())
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}
