//! Forest plot of a report's feature estimates and intervals, as SVG.

use plotters::prelude::*;

use crate::error::{Result, SpvimError};
use crate::report::Report;

const ROW_HEIGHT: u32 = 28;
const WIDTH: u32 = 720;

fn plot_err<E: std::fmt::Display>(e: E) -> SpvimError {
    SpvimError::Data(format!("plot rendering failed: {e}"))
}

/// Feature estimates (index 0 omitted) with their intervals, top to bottom in
/// report order, and a reference line at zero.
pub fn forest_plot(report: &Report) -> Result<String> {
    let labels = &report.features[1..];
    let p = labels.len();
    if p == 0 {
        return Err(SpvimError::Data("report has no features to plot".into()));
    }
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for j in 1..=p {
        for v in [report.ci_lower[j], report.ci_upper[j], report.estimates[j]] {
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    let pad = 0.05 * (hi - lo).max(1e-3);
    let height = 90 + ROW_HEIGHT * p as u32;
    // row 0 is drawn at the top
    let row = |j: usize| SegmentValue::CenterOf(p - 1 - j);

    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (WIDTH, height)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let label_width = labels.iter().map(|l| l.len()).max().unwrap_or(1).clamp(4, 40) as u32 * 8 + 10;
        let mut chart = ChartBuilder::on(&root)
            .caption("Shapley variable importance", ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(label_width)
            .build_cartesian_2d((lo - pad)..(hi + pad), (0..p).into_segmented())
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .disable_y_mesh()
            .y_labels(p)
            .y_label_formatter(&|v| match v {
                SegmentValue::CenterOf(i) | SegmentValue::Exact(i) if *i < p => labels[p - 1 - i].clone(),
                _ => String::new(),
            })
            .x_desc("estimate")
            .draw()
            .map_err(plot_err)?;

        chart
            .draw_series(std::iter::once(PathElement::new(
                vec![(0.0, SegmentValue::Exact(0)), (0.0, SegmentValue::Last)],
                BLACK.mix(0.4),
            )))
            .map_err(plot_err)?;
        chart
            .draw_series((0..p).filter(|&j| report.ci_lower[j + 1].is_finite()).map(|j| {
                PathElement::new(
                    vec![(report.ci_lower[j + 1], row(j)), (report.ci_upper[j + 1], row(j))],
                    BLUE.stroke_width(2),
                )
            }))
            .map_err(plot_err)?;
        chart
            .draw_series((0..p).map(|j| Circle::new((report.estimates[j + 1], row(j)), 4, BLUE.filled())))
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}
