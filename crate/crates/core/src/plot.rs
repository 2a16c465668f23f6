//! Self-contained SVG rendering of a trace: two stacked panels, response
//! (reference and measured output) on top, control action (commanded and
//! actually produced) below, with saturation ticks where the card clamped.

use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::Path;

use crate::executor::{read_trace_csv, TraceRecord};

const WIDTH: f64 = 900.0;
const PANEL_H: f64 = 260.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const PANEL_GAP: f64 = 50.0;

#[derive(Debug)]
pub enum PlotError {
    EmptyTrace,
    Csv(String),
    Io(std::io::Error),
}

impl fmt::Display for PlotError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlotError::EmptyTrace => write!(f, "trace has no rows, nothing to plot"),
            PlotError::Csv(e) => write!(f, "trace csv: {e}"),
            PlotError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for PlotError {}

struct Series<'a> {
    label: &'a str,
    color: &'a str,
    values: Vec<f64>,
}

struct Panel<'a> {
    title: &'a str,
    y_label: &'a str,
    series: Vec<Series<'a>>,
}

fn nice_range(series: &[Series]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in series {
        for &v in &s.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-9 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn render_panel(out: &mut String, panel: &Panel, t: &[f64], top: f64, sat_marks: Option<&[f64]>) {
    let (y_lo, y_hi) = nice_range(&panel.series);
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let t_max = t.last().copied().unwrap_or(1.0).max(1e-9);
    let x_of = |tv: f64| MARGIN_L + tv / t_max * plot_w;
    let y_of = |v: f64| top + PANEL_H - (v - y_lo) / (y_hi - y_lo) * PANEL_H;

    // frame and title
    out.push_str(&format!(
        "<rect x=\"{MARGIN_L}\" y=\"{top}\" width=\"{plot_w}\" height=\"{PANEL_H}\" \
         fill=\"none\" stroke=\"#444\" stroke-width=\"1\"/>\n"
    ));
    out.push_str(&format!(
        "<text x=\"{MARGIN_L}\" y=\"{}\" font-size=\"14\" fill=\"#222\">{}</text>\n",
        top - 8.0,
        panel.title
    ));

    // y axis ticks
    for i in 0..=4 {
        let v = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let y = y_of(v);
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{MARGIN_L}\" y2=\"{y}\" stroke=\"#444\"/>\n",
            MARGIN_L - 4.0
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"#222\" text-anchor=\"end\">{v:.2}</text>\n",
            MARGIN_L - 7.0,
            y + 4.0
        ));
    }
    // x axis ticks
    for i in 0..=5 {
        let tv = t_max * i as f64 / 5.0;
        let x = x_of(tv);
        let y = top + PANEL_H;
        out.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{y}\" x2=\"{x}\" y2=\"{}\" stroke=\"#444\"/>\n",
            y + 4.0
        ));
        out.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" font-size=\"11\" fill=\"#222\" text-anchor=\"middle\">{tv:.1}</text>\n",
            y + 16.0
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"#222\" text-anchor=\"middle\">t [s]</text>\n",
        MARGIN_L + plot_w / 2.0,
        top + PANEL_H + 32.0
    ));
    out.push_str(&format!(
        "<text x=\"14\" y=\"{}\" font-size=\"12\" fill=\"#222\" transform=\"rotate(-90 14 {})\" \
         text-anchor=\"middle\">{}</text>\n",
        top + PANEL_H / 2.0,
        top + PANEL_H / 2.0,
        panel.y_label
    ));

    // saturation ticks along the top edge
    if let Some(marks) = sat_marks {
        for &tv in marks {
            let x = x_of(tv);
            out.push_str(&format!(
                "<line x1=\"{x}\" y1=\"{top}\" x2=\"{x}\" y2=\"{}\" stroke=\"#e08000\" \
                 stroke-width=\"2\"/>\n",
                top + 8.0
            ));
        }
    }

    for (i, s) in panel.series.iter().enumerate() {
        let points: Vec<String> = t
            .iter()
            .zip(&s.values)
            .map(|(&tv, &v)| format!("{:.2},{:.2}", x_of(tv), y_of(v)))
            .collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            s.color,
            points.join(" ")
        ));
        // legend swatch
        let lx = MARGIN_L + plot_w - 150.0;
        let ly = top + 16.0 + i as f64 * 16.0;
        out.push_str(&format!(
            "<line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            lx + 18.0,
            s.color
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"#222\">{}</text>\n",
            lx + 24.0,
            ly + 4.0,
            s.label
        ));
    }
}

/// Render the trace as a standalone SVG document.
pub fn render_svg(trace: &[TraceRecord]) -> Result<String, PlotError> {
    if trace.is_empty() {
        return Err(PlotError::EmptyTrace);
    }
    let t: Vec<f64> = trace.iter().map(|r| r.t_sim_s).collect();
    let sat_times: Vec<f64> = trace
        .iter()
        .filter(|r| r.saturated)
        .map(|r| r.t_sim_s)
        .collect();

    let response = Panel {
        title: "Response",
        y_label: "V",
        series: vec![
            Series {
                label: "r (reference)",
                color: "#888888",
                values: trace.iter().map(|r| r.r_v).collect(),
            },
            Series {
                label: "y (measured)",
                color: "#1f77b4",
                values: trace.iter().map(|r| r.y_read_v).collect(),
            },
        ],
    };
    let control = Panel {
        title: "Control action",
        y_label: "V",
        series: vec![
            Series {
                label: "u (commanded)",
                color: "#2ca02c",
                values: trace.iter().map(|r| r.u_cmd_v).collect(),
            },
            Series {
                label: "u (actual)",
                color: "#d62728",
                values: trace.iter().map(|r| r.u_actual_v).collect(),
            },
        ],
    };

    let height = MARGIN_T + 2.0 * PANEL_H + PANEL_GAP + 60.0;
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{height}\" \
         viewBox=\"0 0 {WIDTH} {height}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    ));
    render_panel(&mut out, &response, &t, MARGIN_T, None);
    render_panel(
        &mut out,
        &control,
        &t,
        MARGIN_T + PANEL_H + PANEL_GAP,
        Some(&sat_times),
    );
    out.push_str("</svg>\n");
    Ok(out)
}

/// Read a trace CSV and write the SVG; nothing is written on error.
pub fn plot_trace_csv(
    csv_path: impl AsRef<Path>,
    svg_path: impl AsRef<Path>,
) -> Result<(), PlotError> {
    let file = fs::File::open(csv_path).map_err(PlotError::Io)?;
    let trace = read_trace_csv(BufReader::new(file)).map_err(PlotError::Csv)?;
    let svg = render_svg(&trace)?;
    fs::write(svg_path, svg).map_err(PlotError::Io)
}
