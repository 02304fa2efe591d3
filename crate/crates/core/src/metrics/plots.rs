//! SVG rendering of ROC curves and confusion-matrix heatmaps.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::EvalReport;

const PALETTE: &[RGBColor] = &[
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
];

/// One chart with a ROC line per class (where defined) and the chance
/// diagonal.
pub fn render_roc_svg(report: &EvalReport, path: &Path) -> Result<()> {
    let path_str = path.to_string_lossy().to_string();
    let root = SVGBackend::new(&path_str, (720, 540)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("ROC curves", ("sans-serif", 24))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(48)
        .build_cartesian_2d(0.0f64..1.0, 0.0f64..1.0)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("false positive rate")
        .y_desc("true positive rate")
        .draw()
        .map_err(plot_err)?;

    chart
        .draw_series(LineSeries::new(
            [(0.0, 0.0), (1.0, 1.0)],
            RGBColor(160, 160, 160).stroke_width(1),
        ))
        .map_err(plot_err)?;

    for (i, curve) in report.roc_curves.iter().enumerate() {
        let Some(points) = curve else { continue };
        let color = PALETTE[i % PALETTE.len()];
        let auc = report.per_class[i]
            .auroc
            .map(|a| format!("{a:.4}"))
            .unwrap_or_else(|| "n/a".into());
        let label = format!("{} (AUROC {auc})", report.class_names[i]);
        chart
            .draw_series(LineSeries::new(
                points.iter().map(|p| (p.fpr, p.tpr)),
                color.stroke_width(2),
            ))
            .map_err(plot_err)?
            .label(label)
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2))
            });
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerRight)
        .border_style(BLACK)
        .background_style(WHITE.mix(0.85))
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Heatmap of the confusion matrix, rows = truth, columns = prediction,
/// cell labels carry the raw counts.
pub fn render_confusion_svg(report: &EvalReport, path: &Path) -> Result<()> {
    let c = report.class_names.len();
    let path_str = path.to_string_lossy().to_string();
    let cell = 96i32;
    let left = 150i32;
    let top = 70i32;
    let width = (left + cell * c as i32 + 40) as u32;
    let height = (top + cell * c as i32 + 60) as u32;
    let root = SVGBackend::new(&path_str, (width, height)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;

    let max = report
        .confusion
        .iter()
        .flatten()
        .copied()
        .max()
        .unwrap_or(1)
        .max(1) as f64;

    root.draw(&Text::new(
        "Confusion matrix (rows: truth, cols: prediction)",
        (left, 18),
        ("sans-serif", 18),
    ))
    .map_err(plot_err)?;

    for (i, row) in report.confusion.iter().enumerate() {
        root.draw(&Text::new(
            report.class_names[i].clone(),
            (8, top + cell * i as i32 + cell / 2 - 7),
            ("sans-serif", 14),
        ))
        .map_err(plot_err)?;
        for (j, &count) in row.iter().enumerate() {
            let intensity = (count as f64 / max * 255.0).round() as u8;
            let fill = RGBColor(255 - intensity / 2, 255 - intensity, 255 - intensity);
            let x0 = left + cell * j as i32;
            let y0 = top + cell * i as i32;
            root.draw(&Rectangle::new(
                [(x0, y0), (x0 + cell, y0 + cell)],
                fill.filled(),
            ))
            .map_err(plot_err)?;
            root.draw(&Rectangle::new(
                [(x0, y0), (x0 + cell, y0 + cell)],
                BLACK.stroke_width(1),
            ))
            .map_err(plot_err)?;
            root.draw(&Text::new(
                count.to_string(),
                (x0 + cell / 2 - 8, y0 + cell / 2 - 8),
                ("sans-serif", 16),
            ))
            .map_err(plot_err)?;
        }
    }
    for (j, name) in report.class_names.iter().enumerate() {
        root.draw(&Text::new(
            name.clone(),
            (left + cell * j as i32 + 6, top + cell * c as i32 + 12),
            ("sans-serif", 14),
        ))
        .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}
