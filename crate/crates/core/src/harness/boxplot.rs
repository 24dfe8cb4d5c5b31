//! Tukey box plots as hand-assembled SVG: one panel per metric, one box
//! per (method, dataset) with median, quartiles, 1.5 IQR whiskers and
//! outlier dots.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::xmetrics::MetricsReport;

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 260.0;
const MARGIN: f64 = 46.0;
const PANEL_GAP: f64 = 24.0;

#[derive(Debug, Clone, PartialEq)]
pub struct BoxStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub lo_whisker: f64,
    pub hi_whisker: f64,
    pub outliers: Vec<f64>,
}

/// Quartiles by linear interpolation over the sorted sample; whiskers at
/// the extreme data within 1.5 IQR of the quartiles.
pub fn box_stats(values: &[f64]) -> BoxStats {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantile = |p: f64| -> f64 {
        let h = (sorted.len() as f64 - 1.0) * p;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    };
    let median = quantile(0.5);
    let q1 = quantile(0.25);
    let q3 = quantile(0.75);
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    let lo_whisker = sorted.iter().copied().find(|&v| v >= lo_fence).unwrap_or(q1);
    let hi_whisker = sorted.iter().rev().copied().find(|&v| v <= hi_fence).unwrap_or(q3);
    let outliers = sorted.iter().copied().filter(|&v| v < lo_fence || v > hi_fence).collect();
    BoxStats { median, q1, q3, lo_whisker, hi_whisker, outliers }
}

const DATASET_COLORS: [&str; 4] = ["#4878a8", "#e49444", "#6a9f58", "#b65fbf"];

/// Render `figures/boxplots.svg`. Requires at least one method with five
/// or more samples.
pub fn render_boxplots(
    report: &MetricsReport,
    method_order: &[String],
    path: &Path,
) -> Result<()> {
    let mut datasets: Vec<String> = Vec::new();
    for row in &report.rows {
        if !datasets.contains(&row.dataset) {
            datasets.push(row.dataset.clone());
        }
    }
    let enough = method_order.iter().any(|m| {
        report.rows.iter().filter(|r| &r.method == m).count() >= 5
    });
    if datasets.is_empty() || method_order.is_empty() || !enough {
        return Err(Error::Config(
            "box plots need at least one method with five or more samples".into(),
        ));
    }

    let metrics: [(&str, fn(&crate::xmetrics::SampleMetrics) -> f64); 3] = [
        ("ROC-AUC", |r| r.roc_auc),
        ("mAP", |r| r.average_precision),
        ("PREC99", |r| r.prec99),
    ];

    let total_w = MARGIN * 2.0 + PANEL_W * 3.0 + PANEL_GAP * 2.0;
    let total_h = MARGIN * 2.0 + PANEL_H + 40.0;
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total_w:.0}" height="{total_h:.0}" viewBox="0 0 {total_w:.0} {total_h:.0}">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();

    for (panel, (title, extract)) in metrics.iter().enumerate() {
        let x0 = MARGIN + panel as f64 * (PANEL_W + PANEL_GAP);
        let y0 = MARGIN;
        let y_of = |v: f64| y0 + PANEL_H - v.clamp(0.0, 1.0) * PANEL_H;
        writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="15" text-anchor="middle" class="panel-title">{title}</text>"#,
            x0 + PANEL_W / 2.0,
            y0 - 12.0
        )
        .unwrap();
        // axes and y ticks
        writeln!(
            svg,
            r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{:.2}" stroke="black"/>"#,
            y0 + PANEL_H
        )
        .unwrap();
        writeln!(
            svg,
            r#"<line x1="{x0:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
            y0 + PANEL_H,
            x0 + PANEL_W,
            y0 + PANEL_H
        )
        .unwrap();
        for tick in 0..=4 {
            let v = tick as f64 * 0.25;
            let y = y_of(v);
            writeln!(
                svg,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="black"/>"#,
                x0 - 4.0
            )
            .unwrap();
            writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="end">{v:.2}</text>"#,
                x0 - 7.0,
                y + 3.0
            )
            .unwrap();
        }

        let group_w = PANEL_W / method_order.len() as f64;
        let box_w = (group_w * 0.7 / datasets.len() as f64).min(28.0);
        for (mi, method) in method_order.iter().enumerate() {
            let group_x = x0 + mi as f64 * group_w + group_w / 2.0;
            for (di, dataset) in datasets.iter().enumerate() {
                let values: Vec<f64> = report
                    .rows
                    .iter()
                    .filter(|r| &r.method == method && &r.dataset == dataset)
                    .map(extract)
                    .collect();
                if values.is_empty() {
                    continue;
                }
                let stats = box_stats(&values);
                let color = DATASET_COLORS[di % DATASET_COLORS.len()];
                let offset = (di as f64 - (datasets.len() as f64 - 1.0) / 2.0)
                    * (box_w + 4.0);
                let cx = group_x + offset;
                let (bq1, bq3) = (y_of(stats.q1), y_of(stats.q3));
                // whiskers
                writeln!(
                    svg,
                    r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{bq3:.2}" stroke="black"/>"#,
                    y_of(stats.hi_whisker)
                )
                .unwrap();
                writeln!(
                    svg,
                    r#"<line x1="{cx:.2}" y1="{bq1:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
                    y_of(stats.lo_whisker)
                )
                .unwrap();
                for w in [stats.lo_whisker, stats.hi_whisker] {
                    writeln!(
                        svg,
                        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
                        cx - box_w / 4.0,
                        y_of(w),
                        cx + box_w / 4.0,
                        y_of(w)
                    )
                    .unwrap();
                }
                // box (zero height renders as a line, which is fine for
                // constant metrics)
                writeln!(
                    svg,
                    r#"<rect x="{:.2}" y="{bq3:.2}" width="{box_w:.2}" height="{:.2}" fill="{color}" fill-opacity="0.6" stroke="black"/>"#,
                    cx - box_w / 2.0,
                    (bq1 - bq3).max(0.0)
                )
                .unwrap();
                // median marker carries its value for downstream checks
                writeln!(
                    svg,
                    r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="2" class="median" data-method="{method}" data-dataset="{dataset}" data-metric="{title}" data-median="{}"/>"#,
                    cx - box_w / 2.0,
                    y_of(stats.median),
                    cx + box_w / 2.0,
                    y_of(stats.median),
                    stats.median
                )
                .unwrap();
                for o in &stats.outliers {
                    writeln!(
                        svg,
                        r#"<circle cx="{cx:.2}" cy="{:.2}" r="2" fill="black"/>"#,
                        y_of(*o)
                    )
                    .unwrap();
                }
            }
            // method label
            writeln!(
                svg,
                r#"<text x="{group_x:.2}" y="{:.2}" font-family="sans-serif" font-size="9" text-anchor="end" transform="rotate(-35 {group_x:.2} {:.2})">{method}</text>"#,
                y0 + PANEL_H + 14.0,
                y0 + PANEL_H + 14.0
            )
            .unwrap();
        }
    }
    // dataset legend
    for (di, dataset) in datasets.iter().enumerate() {
        let x = MARGIN + di as f64 * 120.0;
        let y = total_h - 14.0;
        writeln!(
            svg,
            r#"<rect x="{x:.2}" y="{:.2}" width="12" height="12" fill="{}" fill-opacity="0.6" stroke="black"/>"#,
            y - 10.0,
            DATASET_COLORS[di % DATASET_COLORS.len()]
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="{:.2}" y="{y:.2}" font-family="sans-serif" font-size="12">{dataset}</text>"#,
            x + 16.0
        )
        .unwrap();
    }
    writeln!(svg, "</svg>").unwrap();

    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::xmetrics::{SampleMetrics, Transform};

    fn report(values: &[f64]) -> MetricsReport {
        let rows = values
            .iter()
            .enumerate()
            .map(|(i, &v)| SampleMetrics {
                dataset: "perlin".into(),
                method: "gradient".into(),
                sample_id: format!("h{i:06}"),
                roc_auc: v,
                average_precision: v / 2.0,
                prec99: v / 4.0,
                prec99_degenerate: false,
            })
            .collect();
        MetricsReport { rows, transform: Transform::Abs }
    }

    #[test]
    fn quartiles_and_whiskers() {
        let s = box_stats(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(s.median, 3.0);
        assert_eq!(s.q1, 2.0);
        assert_eq!(s.q3, 4.0);
        assert_eq!(s.lo_whisker, 1.0);
        assert_eq!(s.hi_whisker, 5.0);
        assert!(s.outliers.is_empty());

        let s = box_stats(&[1.0, 2.0, 3.0, 4.0, 100.0]);
        assert_eq!(s.outliers, vec![100.0]);
        assert_eq!(s.hi_whisker, 4.0);
    }

    #[test]
    fn degenerate_constant_box_renders() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("box.svg");
        let r = report(&[0.5; 8]);
        render_boxplots(&r, &["gradient".into()], &path).unwrap();
        let svg = std::fs::read_to_string(&path).unwrap();
        assert!(svg.contains("data-median=\"0.5\""));
    }

    #[test]
    fn three_panels_and_median_attribute() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("box.svg");
        let values = [0.2, 0.4, 0.6, 0.8, 0.9, 0.3, 0.7];
        let r = report(&values);
        render_boxplots(&r, &["gradient".into()], &path).unwrap();
        let svg = std::fs::read_to_string(&path).unwrap();
        assert_eq!(svg.matches("class=\"panel-title\"").count(), 3);
        let expected = box_stats(&values).median;
        assert!(
            svg.contains(&format!("data-metric=\"ROC-AUC\" data-median=\"{expected}\"")),
            "median attribute missing"
        );
        // deterministic bytes
        let path2 = dir.path().join("box2.svg");
        render_boxplots(&r, &["gradient".into()], &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn insufficient_data_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let r = report(&[0.5, 0.6]);
        let err =
            render_boxplots(&r, &["gradient".into()], &dir.path().join("b.svg")).unwrap_err();
        assert!(err.to_string().contains("five or more"));
    }
}
