//! Deterministic SVG rendering of ROC curves: one polyline per estimator, an
//! optional shaded pointwise confidence band, the chance diagonal, axes with
//! ticks, and a legend. Pure string assembly with fixed-precision
//! coordinates, so equal inputs give equal bytes.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::report::{Artifact, BandPoint};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 24.0;
const MARGIN_BOTTOM: f64 = 58.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2",
];

/// One curve to draw: (FPR, TPR) vertices sorted by FPR.
#[derive(Debug, Clone)]
pub struct RocSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn x_of(fpr: f64) -> f64 {
    MARGIN_LEFT + fpr * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
}

fn y_of(tpr: f64) -> f64 {
    MARGIN_TOP + (1.0 - tpr) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\'', "&apos;")
}

fn polyline_points(points: &[(f64, f64)]) -> String {
    let mut out = String::with_capacity(points.len() * 14);
    for (i, &(fpr, tpr)) in points.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{:.2},{:.2}", x_of(fpr), y_of(tpr));
    }
    out
}

/// Renders the plot. `band` shades the pointwise interval behind the curves;
/// `embedded_note` lands in a `<metadata>` element for auditability.
pub fn render_roc_svg(
    series: &[RocSeries],
    band: Option<&[BandPoint]>,
    embedded_note: &str,
) -> Result<String> {
    if series.is_empty() {
        return Err(Error::InvalidInput("no curves to draw".into()));
    }
    for s in series {
        if s.points.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "curve `{}` has fewer than two vertices",
                s.label
            )));
        }
        if s.points.windows(2).any(|w| w[0].0 > w[1].0) {
            return Err(Error::InvalidInput(format!(
                "curve `{}` is not sorted by FPR",
                s.label
            )));
        }
    }
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         width=\"{WIDTH}\" height=\"{HEIGHT}\">\n"
    );
    let _ = write!(
        svg,
        "<metadata id=\"run-config\">{}</metadata>\n",
        escape_xml(embedded_note)
    );
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    // gridlines and ticks at 0, 0.2, …, 1.0 on both axes
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let (x, y) = (x_of(v), y_of(v));
        let _ = write!(
            svg,
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            y_of(0.0),
            y_of(1.0)
        );
        let _ = write!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            x_of(0.0),
            x_of(1.0)
        );
        let _ = write!(
            svg,
            "<text x=\"{x:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\" \
             fill=\"#333333\">{v:.1}</text>\n",
            y_of(0.0) + 18.0
        );
        let _ = write!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\" \
             fill=\"#333333\">{v:.1}</text>\n",
            x_of(0.0) - 8.0,
            y + 4.0
        );
    }

    if let Some(band) = band {
        if band.len() >= 2 {
            let mut pts = String::new();
            for bp in band {
                let _ = write!(pts, "{:.2},{:.2} ", x_of(bp.fpr), y_of(bp.tpr_upper));
            }
            for bp in band.iter().rev() {
                let _ = write!(pts, "{:.2},{:.2} ", x_of(bp.fpr), y_of(bp.tpr_lower));
            }
            let _ = write!(
                svg,
                "<polygon points=\"{}\" fill=\"{}\" fill-opacity=\"0.18\" stroke=\"none\"/>\n",
                pts.trim_end(),
                PALETTE[0]
            );
        }
    }

    // chance diagonal
    let _ = write!(
        svg,
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#999999\" \
         stroke-width=\"1\" stroke-dasharray=\"6 4\"/>\n",
        x_of(0.0),
        y_of(0.0),
        x_of(1.0),
        y_of(1.0)
    );

    for (idx, s) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let _ = write!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            polyline_points(&s.points)
        );
    }

    // plot frame above the curves
    let _ = write!(
        svg,
        "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" \
         stroke=\"#333333\" stroke-width=\"1\"/>\n",
        x_of(0.0),
        y_of(1.0),
        x_of(1.0) - x_of(0.0),
        y_of(0.0) - y_of(1.0)
    );

    // axis titles
    let _ = write!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"14\" text-anchor=\"middle\" \
         fill=\"#111111\">False positive rate</text>\n",
        (x_of(0.0) + x_of(1.0)) / 2.0,
        HEIGHT - 14.0
    );
    let _ = write!(
        svg,
        "<text x=\"18\" y=\"{:.2}\" font-size=\"14\" text-anchor=\"middle\" \
         fill=\"#111111\" transform=\"rotate(-90 18 {:.2})\">True positive rate</text>\n",
        (y_of(0.0) + y_of(1.0)) / 2.0,
        (y_of(0.0) + y_of(1.0)) / 2.0
    );

    // legend in the lower-right corner of the plot area
    let legend_x = x_of(1.0) - 170.0;
    let mut legend_y = y_of(0.0) - 14.0 - 18.0 * (series.len() as f64 - 1.0);
    for (idx, s) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let _ = write!(
            svg,
            "<line x1=\"{legend_x:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" \
             stroke=\"{color}\" stroke-width=\"2\"/>\n",
            legend_y - 4.0,
            legend_x + 26.0,
            legend_y - 4.0
        );
        let _ = write!(
            svg,
            "<text x=\"{:.2}\" y=\"{legend_y:.2}\" font-size=\"13\" \
             fill=\"#111111\">{}</text>\n",
            legend_x + 32.0,
            escape_xml(&s.label)
        );
        legend_y += 18.0;
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Curves (and the first available band) from parsed reports. With several
/// reports, labels carry a 1-based report index.
pub fn plot_reports(artifacts: &[Artifact]) -> Result<String> {
    if artifacts.is_empty() {
        return Err(Error::InvalidInput("no reports given".into()));
    }
    let mut series = Vec::new();
    let mut band: Option<Vec<BandPoint>> = None;
    for (ai, artifact) in artifacts.iter().enumerate() {
        for block in &artifact.methods {
            let mut pts: Vec<(f64, f64)> = block
                .report
                .roc_grid
                .iter()
                .map(|p| (p.fpr, p.tpr))
                .collect();
            pts.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            let label = if artifacts.len() > 1 {
                format!("{} [{}]", block.method.name(), ai + 1)
            } else {
                block.method.name().to_string()
            };
            // draw the banded estimator first so its shading sits underneath
            if let Some(inf) = &block.inference {
                if band.is_none() && !inf.band.is_empty() {
                    band = Some(inf.band.clone());
                    series.insert(0, RocSeries { label, points: pts });
                    continue;
                }
            }
            series.push(RocSeries { label, points: pts });
        }
    }
    let note = serde_json::to_string(
        &artifacts
            .iter()
            .map(|a| &a.config)
            .collect::<Vec<&crate::config::RunConfig>>(),
    )?;
    render_roc_svg(&series, band.as_deref(), &note)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_well_formed(svg: &str) {
        let doc = roxmltree::Document::parse(svg).expect("well-formed XML");
        let root = doc.root_element();
        assert_eq!(root.tag_name().name(), "svg");
        assert!(root.attribute("viewBox").is_some());
    }

    #[test]
    fn perfect_classifier_passes_through_the_corner() {
        let s = RocSeries {
            label: "steam".into(),
            points: vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)],
        };
        let svg = render_roc_svg(&[s], None, "{}").unwrap();
        check_well_formed(&svg);
        // the (FPR 0, TPR 1) corner maps to the top-left plot corner
        let corner = format!("{:.2},{:.2}", x_of(0.0), y_of(1.0));
        assert!(svg.contains(&corner), "missing corner vertex {corner}");
    }

    #[test]
    fn overlay_draws_every_curve_with_legend_entries() {
        let a = RocSeries {
            label: "steam".into(),
            points: vec![(0.0, 0.0), (0.3, 0.7), (1.0, 1.0)],
        };
        let b = RocSeries {
            label: "weighted & <raw>".into(),
            points: vec![(0.0, 0.0), (0.5, 0.6), (1.0, 1.0)],
        };
        let svg = render_roc_svg(&[a, b], None, "note").unwrap();
        check_well_formed(&svg);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("weighted &amp; &lt;raw&gt;"));
        assert!(svg.contains(">steam</text>"));
        assert!(svg.contains("stroke-dasharray")); // chance diagonal
    }

    #[test]
    fn band_polygon_appears_when_given() {
        let s = RocSeries {
            label: "steam".into(),
            points: vec![(0.0, 0.0), (0.4, 0.6), (1.0, 1.0)],
        };
        let band = vec![
            BandPoint {
                fpr: 0.0,
                tpr_lower: 0.0,
                tpr_upper: 0.1,
            },
            BandPoint {
                fpr: 0.4,
                tpr_lower: 0.5,
                tpr_upper: 0.7,
            },
            BandPoint {
                fpr: 1.0,
                tpr_lower: 1.0,
                tpr_upper: 1.0,
            },
        ];
        let svg = render_roc_svg(&[s], Some(&band), "note").unwrap();
        check_well_formed(&svg);
        assert_eq!(svg.matches("<polygon").count(), 1);
    }

    #[test]
    fn rendering_is_byte_deterministic_and_validates_input() {
        let s = RocSeries {
            label: "steam".into(),
            points: vec![(0.0, 0.1), (0.6, 0.8), (1.0, 1.0)],
        };
        let a = render_roc_svg(std::slice::from_ref(&s), None, "x").unwrap();
        let b = render_roc_svg(std::slice::from_ref(&s), None, "x").unwrap();
        assert_eq!(a, b);
        assert!(render_roc_svg(&[], None, "x").is_err());
        let unsorted = RocSeries {
            label: "bad".into(),
            points: vec![(0.5, 0.5), (0.1, 0.2)],
        };
        assert!(render_roc_svg(&[unsorted], None, "x").is_err());
    }
}
