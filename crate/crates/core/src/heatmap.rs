//! Standalone SVG heatmaps of grid metrics: SNR on the vertical axis,
//! signal-channel count on the horizontal, grayscale shading (dark = high),
//! hatching for undefined cells, plus a numeric color scale.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::runner::{GridMethod, ResultRow};

const CELL: f64 = 26.0;
const MARGIN_LEFT: f64 = 72.0;
const MARGIN_TOP: f64 = 46.0;
const MARGIN_BOTTOM: f64 = 58.0;
const MARGIN_RIGHT: f64 = 96.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Pulls one metric out of a row; Ok(None) means undefined for that cell.
pub fn metric_value(row: &ResultRow, metric: &str) -> Result<Option<f64>> {
    let v = match metric {
        "balanced_accuracy" => row.balanced_accuracy,
        "p_value" => row.p_value,
        "cosine_feature" => row.cosine_feature,
        "cosine_channel" => row.cosine_channel,
        "tp_adaptive" => row.tp_adaptive,
        "fp_adaptive" => row.fp_adaptive,
        "tp_top10" => row.tp_top10,
        "fp_top10" => row.fp_top10,
        "fp_top10_raw_count" => row.fp_top10_raw_count.map(|c| c as f64),
        other => return Err(Error::UnknownMetric(other.to_string())),
    };
    Ok(if row.error_code.is_some() { None } else { v })
}

fn fmt_num(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.3}")
    }
}

/// Renders the heatmap of `metric` for `method` and writes it to `out_path`.
/// Returns the SVG text.
pub fn render_heatmap(
    rows: &[ResultRow],
    metric: &str,
    method: GridMethod,
    out_path: &Path,
) -> Result<String> {
    // validate the metric name up front
    if !rows.is_empty() {
        metric_value(&rows[0], metric)?;
    } else {
        metric_value(&ResultRow::empty(0.0, 0, 0.0, method), metric)?;
    }

    let method_rows: Vec<&ResultRow> = rows
        .iter()
        .filter(|r| r.method == method.as_str())
        .collect();

    let mut snrs: Vec<f64> = method_rows.iter().map(|r| r.snr).collect();
    snrs.sort_by(f64::total_cmp);
    snrs.dedup();
    let mut chans: Vec<usize> = method_rows.iter().map(|r| r.n_signal_channels).collect();
    chans.sort_unstable();
    chans.dedup();
    if snrs.is_empty() || chans.is_empty() {
        return Err(Error::validation(
            "grid",
            format!("no rows for method {method} to render"),
        ));
    }

    let mut values: Vec<Option<f64>> = vec![None; snrs.len() * chans.len()];
    for row in &method_rows {
        let yi = snrs.iter().position(|s| *s == row.snr).unwrap();
        let xi = chans
            .iter()
            .position(|c| *c == row.n_signal_channels)
            .unwrap();
        values[yi * chans.len() + xi] = metric_value(row, metric)?;
    }

    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    // pin the scale to [0,1] unless the data leaves that range
    let lo = defined.iter().copied().fold(0.0f64, f64::min);
    let hi = defined.iter().copied().fold(1.0f64, f64::max);
    let span = hi - lo;
    let shade = |v: f64| -> u8 {
        let norm = if span > 0.0 {
            ((v - lo) / span).clamp(0.0, 1.0)
        } else {
            0.5
        };
        (255.0 * (1.0 - norm)).round() as u8
    };

    let width = MARGIN_LEFT + CELL * chans.len() as f64 + MARGIN_RIGHT;
    let height = MARGIN_TOP + CELL * snrs.len() as f64 + MARGIN_BOTTOM;
    let plot_h = CELL * snrs.len() as f64;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"monospace\" font-size=\"11\">\n"
    ));
    svg.push_str(
        "<defs><pattern id=\"hatch\" width=\"6\" height=\"6\" patternUnits=\"userSpaceOnUse\" \
         patternTransform=\"rotate(45)\"><rect width=\"6\" height=\"6\" fill=\"#eeeeee\"/>\
         <line x1=\"0\" y1=\"0\" x2=\"0\" y2=\"6\" stroke=\"#888888\" stroke-width=\"1.5\"/>\
         </pattern></defs>\n",
    );
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-size=\"14\">{} - {}</text>\n",
        MARGIN_LEFT,
        esc(&method.to_string()),
        esc(metric)
    ));

    // cells; SNR ascending bottom-up
    for (yi, _snr) in snrs.iter().enumerate() {
        let y = MARGIN_TOP + plot_h - CELL * (yi + 1) as f64;
        for (xi, _ch) in chans.iter().enumerate() {
            let x = MARGIN_LEFT + CELL * xi as f64;
            match values[yi * chans.len() + xi] {
                Some(v) => {
                    let g = shade(v);
                    svg.push_str(&format!(
                        "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" \
                         fill=\"rgb({g},{g},{g})\" stroke=\"#555555\" stroke-width=\"0.5\"/>\n"
                    ));
                }
                None => {
                    svg.push_str(&format!(
                        "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" \
                         fill=\"url(#hatch)\" stroke=\"#555555\" stroke-width=\"0.5\"/>\n"
                    ));
                }
            }
        }
    }

    // axis tick labels
    for (xi, ch) in chans.iter().enumerate() {
        let x = MARGIN_LEFT + CELL * (xi as f64 + 0.5);
        let y = MARGIN_TOP + plot_h + 16.0;
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{y}\" text-anchor=\"middle\">{ch}</text>\n"
        ));
    }
    for (yi, snr) in snrs.iter().enumerate() {
        let x = MARGIN_LEFT - 8.0;
        let y = MARGIN_TOP + plot_h - CELL * (yi as f64 + 0.5) + 4.0;
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{y}\" text-anchor=\"end\">{}</text>\n",
            fmt_num(*snr)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">signal channels</text>\n",
        MARGIN_LEFT + CELL * chans.len() as f64 / 2.0,
        MARGIN_TOP + plot_h + 40.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" transform=\"rotate(-90 16 {})\" text-anchor=\"middle\">SNR</text>\n",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0
    ));

    // numeric color scale
    let legend_x = MARGIN_LEFT + CELL * chans.len() as f64 + 24.0;
    let steps = 10;
    let legend_h = plot_h.min(160.0);
    let step_h = legend_h / steps as f64;
    for s in 0..steps {
        let frac = s as f64 / (steps - 1) as f64;
        let v = lo + frac * (hi - lo);
        let g = shade(v);
        let y = MARGIN_TOP + legend_h - step_h * (s + 1) as f64;
        svg.push_str(&format!(
            "<rect x=\"{legend_x}\" y=\"{y}\" width=\"14\" height=\"{step_h}\" \
             fill=\"rgb({g},{g},{g})\" stroke=\"none\"/>\n"
        ));
    }
    for (frac, label) in [(0.0, lo), (0.5, lo + 0.5 * (hi - lo)), (1.0, hi)] {
        let y = MARGIN_TOP + legend_h - legend_h * frac + 4.0;
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{y}\">{}</text>\n",
            legend_x + 20.0,
            fmt_num(label)
        ));
    }
    svg.push_str(&format!(
        "<rect x=\"{legend_x}\" y=\"{MARGIN_TOP}\" width=\"14\" height=\"{legend_h}\" \
         fill=\"none\" stroke=\"#555555\" stroke-width=\"0.5\"/>\n"
    ));
    svg.push_str("</svg>\n");

    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(out_path, &svg)?;
    Ok(svg)
}
