//! Self-contained SVG heatmaps and line charts.
//!
//! Output is byte-deterministic: coordinates are printed with fixed precision
//! and elements are emitted in input order.

use std::fmt::Write;

use super::{color_hex, ReportError};

const FONT: &str = "font-family=\"DejaVu Sans, Arial, sans-serif\"";
const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

/// Fill used for missing (non-finite) heatmap cells.
pub const MISSING_FILL: &str = "url(#missing)";

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

fn n(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

/// Tick label for a data value.
pub fn value_label(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        if s == "-0" { "0".into() } else { s.to_string() }
    }
}

fn text_width(s: &str, size: f64) -> f64 {
    s.chars().count() as f64 * size * 0.6
}

/// A labelled matrix rendered as coloured cells.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapSpec {
    pub title: String,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// Row-major values; non-finite entries are drawn as missing.
    pub values: Vec<Vec<f64>>,
    /// Colour scale bounds (low maps to the first colormap entry).
    pub bounds: (f64, f64),
    pub x_label: String,
    pub y_label: String,
}

impl HeatmapSpec {
    pub fn validate(&self) -> Result<(), ReportError> {
        if self.values.is_empty() || self.values.iter().any(Vec::is_empty) {
            return Err(ReportError::EmptyMatrix);
        }
        if self.values.len() != self.row_labels.len() {
            return Err(ReportError::ShapeMismatch(format!(
                "{} rows but {} row labels",
                self.values.len(),
                self.row_labels.len()
            )));
        }
        if let Some(r) = self.values.iter().find(|r| r.len() != self.col_labels.len()) {
            return Err(ReportError::ShapeMismatch(format!(
                "row of {} values but {} column labels",
                r.len(),
                self.col_labels.len()
            )));
        }
        let (lo, hi) = self.bounds;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(ReportError::BadBounds { lo, hi });
        }
        Ok(())
    }
}

const CELL: f64 = 16.0;
const LEGEND_STEPS: usize = 32;

pub fn render_heatmap(spec: &HeatmapSpec) -> Result<String, ReportError> {
    spec.validate()?;
    let (rows, cols) = (spec.values.len(), spec.col_labels.len());
    let row_w = spec.row_labels.iter().map(|l| text_width(l, 10.0)).fold(0.0, f64::max);
    let col_h = spec.col_labels.iter().map(|l| text_width(l, 9.0)).fold(0.0, f64::max);
    let left = 30.0 + row_w + 8.0;
    let top = 40.0;
    let grid_w = cols as f64 * CELL;
    let grid_h = rows as f64 * CELL;
    let legend_x = left + grid_w + 24.0;
    let legend_h = grid_h.max(120.0);
    let width = legend_x + 90.0;
    let height = top + legend_h.max(grid_h + col_h + 40.0) + 20.0;
    let any_missing = spec.values.iter().flatten().any(|v| !v.is_finite());

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        n(width),
        n(height),
        n(width),
        n(height)
    )
    .unwrap();
    s.push_str(concat!(
        "<defs><pattern id=\"missing\" patternUnits=\"userSpaceOnUse\" width=\"6\" height=\"6\">",
        "<rect width=\"6\" height=\"6\" fill=\"#ffffff\"/>",
        "<path d=\"M0,6 L6,0\" stroke=\"#888888\" stroke-width=\"1\"/></pattern></defs>\n"
    ));
    writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##).unwrap();
    writeln!(s, r#"<text x="{}" y="22" {FONT} font-size="14" text-anchor="middle">{}</text>"#, n(left + grid_w / 2.0), escape(&spec.title)).unwrap();

    s.push_str("<g class=\"cells\">\n");
    for (i, row) in spec.values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let fill = if v.is_finite() { color_hex(v, spec.bounds) } else { MISSING_FILL.to_string() };
            let tip = if v.is_finite() { value_label(v) } else { "missing".into() };
            writeln!(
                s,
                r#"<rect class="cell" x="{}" y="{}" width="{CELL}" height="{CELL}" fill="{fill}"><title>{} / {}: {tip}</title></rect>"#,
                n(left + j as f64 * CELL),
                n(top + i as f64 * CELL),
                escape(&spec.row_labels[i]),
                escape(&spec.col_labels[j]),
            )
            .unwrap();
        }
    }
    s.push_str("</g>\n<g class=\"ticks\">\n");
    for (i, l) in spec.row_labels.iter().enumerate() {
        writeln!(
            s,
            r#"<text x="{}" y="{}" {FONT} font-size="10" text-anchor="end" dominant-baseline="middle">{}</text>"#,
            n(left - 4.0),
            n(top + (i as f64 + 0.5) * CELL),
            escape(l)
        )
        .unwrap();
    }
    for (j, l) in spec.col_labels.iter().enumerate() {
        let x = left + (j as f64 + 0.5) * CELL;
        let y = top + grid_h + 6.0;
        writeln!(
            s,
            r#"<text x="{}" y="{}" {FONT} font-size="9" text-anchor="end" dominant-baseline="middle" transform="rotate(-90 {} {})">{}</text>"#,
            n(x),
            n(y),
            n(x),
            n(y),
            escape(l)
        )
        .unwrap();
    }
    s.push_str("</g>\n");
    writeln!(
        s,
        r#"<text x="{}" y="{}" {FONT} font-size="11" text-anchor="middle">{}</text>"#,
        n(left + grid_w / 2.0),
        n(top + grid_h + col_h + 24.0),
        escape(&spec.x_label)
    )
    .unwrap();
    let yl = top + grid_h / 2.0;
    writeln!(
        s,
        r#"<text x="12" y="{}" {FONT} font-size="11" text-anchor="middle" transform="rotate(-90 12 {})">{}</text>"#,
        n(yl),
        n(yl),
        escape(&spec.y_label)
    )
    .unwrap();

    // legend: high values on top
    let (lo, hi) = spec.bounds;
    let step_h = legend_h.min(grid_h.max(120.0)) / LEGEND_STEPS as f64;
    s.push_str("<g class=\"legend\">\n");
    for k in 0..LEGEND_STEPS {
        let v = hi - (hi - lo) * (k as f64 + 0.5) / LEGEND_STEPS as f64;
        writeln!(
            s,
            r#"<rect x="{}" y="{}" width="14" height="{}" fill="{}"/>"#,
            n(legend_x),
            n(top + k as f64 * step_h),
            n(step_h + 0.05),
            color_hex(v, spec.bounds)
        )
        .unwrap();
    }
    for (frac, v) in [(0.0, hi), (0.5, (lo + hi) / 2.0), (1.0, lo)] {
        writeln!(
            s,
            r#"<text x="{}" y="{}" {FONT} font-size="9" dominant-baseline="middle">{}</text>"#,
            n(legend_x + 18.0),
            n(top + frac * step_h * LEGEND_STEPS as f64),
            value_label(v)
        )
        .unwrap();
    }
    if any_missing {
        let y = top + step_h * LEGEND_STEPS as f64 + 10.0;
        writeln!(s, r##"<rect x="{}" y="{}" width="14" height="14" fill="{MISSING_FILL}" stroke="#888888"/>"##, n(legend_x), n(y)).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" {FONT} font-size="9" dominant-baseline="middle">missing</text>"#, n(legend_x + 18.0), n(y + 7.0)).unwrap();
    }
    s.push_str("</g>\n</svg>\n");
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MarkerShape {
    Circle,
    Triangle,
    Star,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Per-point marker shapes; shorter than `points` means plain circles for the rest.
    pub markers: Vec<MarkerShape>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePanel {
    pub y_label: String,
    pub series: Vec<Series>,
}

/// Stacked line-chart panels sharing one x axis.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveFigure {
    pub title: String,
    pub x_label: String,
    /// Tick positions and labels; empty means numeric ticks at the data range ends.
    pub x_ticks: Vec<(f64, String)>,
    pub panels: Vec<CurvePanel>,
    /// Legend entries for marker shapes, e.g. skip-connection tags.
    pub marker_legend: Vec<(MarkerShape, String)>,
}

fn marker(shape: MarkerShape, x: f64, y: f64, color: &str) -> String {
    match shape {
        MarkerShape::Circle => format!(r#"<circle cx="{}" cy="{}" r="2.5" fill="{color}"/>"#, n(x), n(y)),
        MarkerShape::Triangle => format!(
            r##"<path d="M{},{} L{},{} L{},{} Z" fill="{color}" stroke="#000000" stroke-width="0.5"/>"##,
            n(x),
            n(y - 5.0),
            n(x + 4.5),
            n(y + 3.5),
            n(x - 4.5),
            n(y + 3.5)
        ),
        MarkerShape::Star => {
            let mut d = String::new();
            for k in 0..10 {
                let r = if k % 2 == 0 { 6.0 } else { 2.6 };
                let a = std::f64::consts::PI * (k as f64 / 5.0 - 0.5);
                write!(d, "{}{},{} ", if k == 0 { 'M' } else { 'L' }, n(x + r * a.cos()), n(y + r * a.sin())).unwrap();
            }
            format!(r##"<path d="{d}Z" fill="{color}" stroke="#000000" stroke-width="0.5"/>"##)
        }
    }
}

const PANEL_W: f64 = 560.0;
const PANEL_H: f64 = 180.0;

pub fn render_curves(fig: &CurveFigure) -> Result<String, ReportError> {
    let all: Vec<(f64, f64)> = fig.panels.iter().flat_map(|p| p.series.iter().flat_map(|s| s.points.iter().copied())).collect();
    if all.is_empty() {
        return Err(ReportError::EmptyMatrix);
    }
    if all.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(ReportError::ShapeMismatch("non-finite curve point".into()));
    }
    let xs = fig.x_ticks.iter().map(|t| t.0).chain(all.iter().map(|p| p.0));
    let (xmin, xmax) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let (xmin, xmax) = if xmin == xmax { (xmin - 1.0, xmax + 1.0) } else { (xmin, xmax) };
    let tick_h = fig.x_ticks.iter().map(|t| text_width(&t.1, 9.0)).fold(20.0, f64::max);
    let names: Vec<&str> = {
        let mut v: Vec<&str> = Vec::new();
        for s in fig.panels.iter().flat_map(|p| &p.series) {
            if !v.contains(&s.name.as_str()) {
                v.push(&s.name);
            }
        }
        v
    };
    let left = 70.0;
    let top = 40.0;
    let gap = 30.0;
    let legend_x = left + PANEL_W + 20.0;
    let legend_w = names
        .iter()
        .copied()
        .chain(fig.marker_legend.iter().map(|m| m.1.as_str()))
        .map(|l| text_width(l, 10.0))
        .fold(60.0, f64::max)
        + 30.0;
    let width = legend_x + legend_w;
    let panels_h = fig.panels.len() as f64 * (PANEL_H + gap);
    let height = top + panels_h + tick_h + 40.0;
    let sx = |x: f64| left + (x - xmin) / (xmax - xmin) * PANEL_W;

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#, n(width), n(height), n(width), n(height)).unwrap();
    writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##).unwrap();
    writeln!(s, r#"<text x="{}" y="22" {FONT} font-size="14" text-anchor="middle">{}</text>"#, n(left + PANEL_W / 2.0), escape(&fig.title)).unwrap();

    for (pi, panel) in fig.panels.iter().enumerate() {
        let y0 = top + pi as f64 * (PANEL_H + gap);
        let ys: Vec<f64> = panel.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).collect();
        let (mut ymin, mut ymax) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
        if !ymin.is_finite() {
            (ymin, ymax) = (0.0, 1.0);
        }
        let pad = if ymax > ymin { 0.05 * (ymax - ymin) } else { 0.5 * ymin.abs().max(1.0) };
        let (ymin, ymax) = (ymin - pad, ymax + pad);
        let sy = |y: f64| y0 + PANEL_H - (y - ymin) / (ymax - ymin) * PANEL_H;
        writeln!(s, r##"<g class="panel"><rect x="{}" y="{}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#000000"/>"##, n(left), n(y0)).unwrap();
        for k in 0..=4 {
            let v = ymin + (ymax - ymin) * k as f64 / 4.0;
            let y = sy(v);
            writeln!(s, r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#dddddd"/>"##, n(left), n(y), n(left + PANEL_W), n(y)).unwrap();
            writeln!(s, r#"<text x="{}" y="{}" {FONT} font-size="9" text-anchor="end" dominant-baseline="middle">{}</text>"#, n(left - 4.0), n(y), value_label(v)).unwrap();
        }
        let yc = y0 + PANEL_H / 2.0;
        writeln!(s, r#"<text x="14" y="{}" {FONT} font-size="11" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#, n(yc), n(yc), escape(&panel.y_label)).unwrap();
        for series in &panel.series {
            let color = PALETTE[names.iter().position(|&nm| nm == series.name).unwrap_or(0) % PALETTE.len()];
            let pts: Vec<String> = series.points.iter().map(|&(x, y)| format!("{},{}", n(sx(x)), n(sy(y)))).collect();
            writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" ")).unwrap();
            for (k, &(x, y)) in series.points.iter().enumerate() {
                let shape = series.markers.get(k).copied().unwrap_or(MarkerShape::Circle);
                s.push_str(&marker(shape, sx(x), sy(y), color));
                s.push('\n');
            }
        }
        s.push_str("</g>\n");
    }

    let base = top + panels_h - gap;
    let ticks: Vec<(f64, String)> = if fig.x_ticks.is_empty() {
        vec![(xmin, value_label(xmin)), (xmax, value_label(xmax))]
    } else {
        fig.x_ticks.clone()
    };
    for (x, l) in &ticks {
        let (px, py) = (sx(*x), base + 6.0);
        writeln!(
            s,
            r#"<text x="{}" y="{}" {FONT} font-size="9" text-anchor="end" dominant-baseline="middle" transform="rotate(-60 {} {})">{}</text>"#,
            n(px),
            n(py),
            n(px),
            n(py),
            escape(l)
        )
        .unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" {FONT} font-size="11" text-anchor="middle">{}</text>"#, n(left + PANEL_W / 2.0), n(base + tick_h + 24.0), escape(&fig.x_label)).unwrap();

    s.push_str("<g class=\"legend\">\n");
    let mut ly = top + 8.0;
    for (i, name) in names.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        writeln!(s, r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="2"/>"#, n(legend_x), n(ly), n(legend_x + 16.0), n(ly)).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" {FONT} font-size="10" dominant-baseline="middle">{}</text>"#, n(legend_x + 20.0), n(ly), escape(name)).unwrap();
        ly += 16.0;
    }
    for (shape, label) in &fig.marker_legend {
        s.push_str(&marker(*shape, legend_x + 8.0, ly, "#ffffff"));
        s.push('\n');
        writeln!(s, r#"<text x="{}" y="{}" {FONT} font-size="10" dominant-baseline="middle">{}</text>"#, n(legend_x + 20.0), n(ly), escape(label)).unwrap();
        ly += 16.0;
    }
    s.push_str("</g>\n</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(values: Vec<Vec<f64>>) -> HeatmapSpec {
        HeatmapSpec {
            title: "t <&>".into(),
            row_labels: (0..values.len()).map(|i| format!("r{i}")).collect(),
            col_labels: (0..values[0].len()).map(|j| format!("c{j}")).collect(),
            values,
            bounds: (0.0, 1.0),
            x_label: "x".into(),
            y_label: "y".into(),
        }
    }

    fn cells(svg: &str) -> Vec<String> {
        let doc = roxmltree::Document::parse(svg).unwrap();
        doc.descendants()
            .filter(|n| n.attribute("class") == Some("cell"))
            .map(|n| n.attribute("fill").unwrap().to_string())
            .collect()
    }

    #[test]
    fn endpoint_colors() {
        let svg = render_heatmap(&spec(vec![vec![0.0, 1.0], vec![1.0, 0.0]])).unwrap();
        // matplotlib viridis endpoints
        assert_eq!(cells(&svg), ["#440154", "#fde725", "#fde725", "#440154"]);
        assert!(svg.contains("t &lt;&amp;&gt;"));
    }

    #[test]
    fn single_cell_and_missing() {
        let svg = render_heatmap(&spec(vec![vec![0.5]])).unwrap();
        assert_eq!(cells(&svg), ["#21918c"]);
        let svg = render_heatmap(&spec(vec![vec![f64::NAN, 0.2]])).unwrap();
        assert_eq!(cells(&svg)[0], MISSING_FILL);
        assert!(svg.contains(">missing</text>"));
    }

    #[test]
    fn heatmap_errors() {
        let mut s = spec(vec![vec![0.5]]);
        s.values = vec![];
        assert!(matches!(render_heatmap(&s), Err(ReportError::EmptyMatrix)));
        let mut s = spec(vec![vec![0.5]]);
        s.col_labels.push("extra".into());
        assert!(matches!(render_heatmap(&s), Err(ReportError::ShapeMismatch(_))));
        let mut s = spec(vec![vec![0.5]]);
        s.bounds = (1.0, 1.0);
        assert!(matches!(render_heatmap(&s), Err(ReportError::BadBounds { .. })));
    }

    #[test]
    fn heatmap_is_deterministic() {
        let s = spec(vec![vec![0.1, 0.7, 0.3]; 4]);
        assert_eq!(render_heatmap(&s).unwrap(), render_heatmap(&s).unwrap());
    }

    #[test]
    fn curves_parse_and_carry_markers() {
        let fig = CurveFigure {
            title: "fits".into(),
            x_label: "layer".into(),
            x_ticks: vec![(0.0, "a".into()), (1.0, "b".into()), (2.0, "c".into())],
            panels: vec![
                CurvePanel {
                    y_label: "slope".into(),
                    series: vec![Series {
                        name: "slope".into(),
                        points: vec![(0.0, 0.1), (1.0, 0.3), (2.0, 0.2)],
                        markers: vec![MarkerShape::Circle, MarkerShape::Triangle, MarkerShape::Star],
                    }],
                },
                CurvePanel {
                    y_label: "intercept".into(),
                    series: vec![Series { name: "intercept".into(), points: vec![(0.0, 0.9), (1.0, 0.9), (2.0, 0.9)], markers: vec![] }],
                },
            ],
            marker_legend: vec![(MarkerShape::Triangle, "skip input".into()), (MarkerShape::Star, "skip output".into())],
        };
        let svg = render_curves(&fig).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polyline")).count(), 2);
        assert_eq!(doc.descendants().filter(|n| n.attribute("class") == Some("panel")).count(), 2);
        let empty = CurveFigure { panels: vec![], ..fig };
        assert!(matches!(render_curves(&empty), Err(ReportError::EmptyMatrix)));
    }
}
