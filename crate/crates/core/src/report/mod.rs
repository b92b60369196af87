//! SVG figures built from the pipeline's CSV outputs.

mod colormap;
mod svg;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::cka::{read_csv, CkaError, CkaRecord};
use crate::diffusion::DiffusionReport;
use crate::regression::FitRecord;

pub use colormap::VIRIDIS;
pub use svg::{
    escape, render_curves, render_heatmap, value_label, CurveFigure, CurvePanel, HeatmapSpec, MarkerShape, Series,
    MISSING_FILL,
};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("matrix is empty")]
    EmptyMatrix,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid colour bounds [{lo}, {hi}]")]
    BadBounds { lo: f64, hi: f64 },
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("malformed input {path}: {reason}")]
    Malformed { path: String, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Table(#[from] CkaError),
    #[error(transparent)]
    Diffusion(#[from] crate::diffusion::DiffusionError),
}

/// Colormap index for `v` mapped linearly from `bounds` onto 0..=255 (clamped).
pub fn color_index(v: f64, (lo, hi): (f64, f64)) -> usize {
    let t = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
    (t * 255.0).round() as usize
}

pub fn color_hex(v: f64, bounds: (f64, f64)) -> String {
    let [r, g, b] = VIRIDIS[color_index(v, bounds)];
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// A labelled square matrix as written by the diffusion stage.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelledMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

pub fn read_matrix_csv(path: &Path) -> Result<LabelledMatrix, ReportError> {
    let bad = |reason: String| ReportError::Malformed { path: path.display().to_string(), reason };
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let labels: Vec<String> = r.headers()?.iter().skip(1).map(str::to_string).collect();
    let mut values = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.get(0) != labels.get(i).map(String::as_str) {
            return Err(bad(format!("row {i} label does not match the header")));
        }
        let row = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|e| bad(format!("{v:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        values.push(row);
    }
    if values.len() != labels.len() {
        return Err(bad(format!("{} rows for {} labels", values.len(), labels.len())));
    }
    Ok(LabelledMatrix { labels, values })
}

fn write(path: &Path, text: &str) -> Result<(), ReportError> {
    fs::write(path, text).map_err(|source| ReportError::Io { path: path.display().to_string(), source })
}

fn distance_bounds(ms: &[&LabelledMatrix]) -> (f64, f64) {
    let max = ms.iter().flat_map(|m| m.values.iter().flatten()).copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    (0.0, if max > 0.0 { max } else { 1.0 })
}

fn cka_heatmap(records: &[CkaRecord]) -> HeatmapSpec {
    let mut layers: Vec<(usize, String)> = records.iter().map(|r| (r.depth_index, r.layer_id.clone())).collect();
    layers.sort();
    layers.dedup();
    let mut snrs: Vec<i32> = records.iter().map(|r| r.snr_db).collect();
    snrs.sort_unstable();
    snrs.dedup();
    let lookup: BTreeMap<(&str, i32), f64> = records.iter().map(|r| ((r.layer_id.as_str(), r.snr_db), r.cka)).collect();
    let values: Vec<Vec<f64>> = layers
        .iter()
        .map(|(_, id)| snrs.iter().map(|&s| lookup.get(&(id.as_str(), s)).copied().unwrap_or(f64::NAN)).collect())
        .collect();
    let min = values.iter().flatten().copied().filter(|v| v.is_finite()).fold(1.0, f64::min);
    let lo = ((min * 20.0).floor() / 20.0).min(0.95);
    let block_of: BTreeMap<&str, &str> = records.iter().map(|r| (r.layer_id.as_str(), r.block.as_str())).collect();
    HeatmapSpec {
        title: "CKA between clean and noisy activations".into(),
        row_labels: layers.iter().map(|(_, id)| format!("{} | {}", block_of[id.as_str()], id)).collect(),
        col_labels: snrs.iter().map(|s| s.to_string()).collect(),
        values,
        bounds: (lo, 1.0),
        x_label: "SNR (dB)".into(),
        y_label: "layer (grouped by block)".into(),
    }
}

fn fit_curves(fits: &[FitRecord]) -> CurveFigure {
    let mut fits = fits.to_vec();
    fits.sort_by_key(|f| f.depth_index);
    let markers: Vec<MarkerShape> = fits
        .iter()
        .map(|f| match (f.is_skip_input, f.is_skip_output) {
            (_, true) => MarkerShape::Star,
            (true, false) => MarkerShape::Triangle,
            _ => MarkerShape::Circle,
        })
        .collect();
    let series = |name: &str, get: fn(&FitRecord) -> f64| Series {
        name: name.into(),
        points: fits.iter().enumerate().map(|(i, f)| (i as f64, get(f))).collect(),
        markers: markers.clone(),
    };
    CurveFigure {
        title: "Linear fits of CKA against SNR".into(),
        x_label: "layer".into(),
        x_ticks: fits.iter().enumerate().map(|(i, f)| (i as f64, f.layer_id.clone())).collect(),
        panels: vec![
            CurvePanel { y_label: "slope (per dB)".into(), series: vec![series("slope", |f| f.slope)] },
            CurvePanel { y_label: "intercept (0 dB)".into(), series: vec![series("intercept", |f| f.intercept)] },
        ],
        marker_legend: vec![(MarkerShape::Triangle, "skip input".into()), (MarkerShape::Star, "skip output".into())],
    }
}

#[derive(serde::Deserialize)]
struct IntraRow {
    layer_id: String,
    snr_db: i32,
    dc1: f64,
}

fn dc1_curves(rows: &[IntraRow], order: &[String]) -> CurveFigure {
    let series = order
        .iter()
        .map(|id| Series {
            name: id.clone(),
            points: rows.iter().filter(|r| &r.layer_id == id).map(|r| (r.snr_db as f64, r.dc1)).collect(),
            markers: vec![],
        })
        .filter(|s| !s.points.is_empty())
        .collect();
    CurveFigure {
        title: "First diffusion coordinate per layer".into(),
        x_label: "SNR (dB)".into(),
        x_ticks: vec![],
        panels: vec![CurvePanel { y_label: "DC1".into(), series }],
        marker_legend: vec![],
    }
}

fn matrix_heatmap(m: &LabelledMatrix, title: String, axis: &str, bounds: (f64, f64)) -> HeatmapSpec {
    HeatmapSpec {
        title,
        row_labels: m.labels.clone(),
        col_labels: m.labels.clone(),
        values: m.values.clone(),
        bounds,
        x_label: axis.into(),
        y_label: axis.into(),
    }
}

/// Renders every figure whose inputs exist under `input` into `out`.
///
/// Returns the written paths in creation order.
pub fn render_all(input: &Path, out: &Path) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(out).map_err(|source| ReportError::Io { path: out.display().to_string(), source })?;
    let mut written = Vec::new();
    let mut emit = |name: String, svg: String| -> Result<(), ReportError> {
        let p = out.join(name);
        write(&p, &svg)?;
        written.push(p);
        Ok(())
    };

    let cka = input.join("cka.csv");
    if cka.exists() {
        let records: Vec<CkaRecord> = read_csv(&cka)?;
        emit("cka_heatmap.svg".into(), render_heatmap(&cka_heatmap(&records))?)?;
    }
    let fit = input.join("cka_fit.csv");
    if fit.exists() {
        let fits: Vec<FitRecord> = read_csv(&fit)?;
        emit("cka_fit.svg".into(), render_curves(&fit_curves(&fits))?)?;
    }

    let ddir = input.join("diffusion");
    let report_path = ddir.join("diffusion_report.json");
    if report_path.exists() {
        let report = DiffusionReport::read(&report_path)?;
        let order: Vec<String> = report.intra.iter().map(|r| r.layer_id.clone()).collect();
        if !order.is_empty() {
            let rows: Vec<IntraRow> = read_csv(ddir.join("diffusion_intra.csv"))?;
            emit("diffusion_dc1.svg".into(), render_curves(&dc1_curves(&rows, &order))?)?;
            for id in &order {
                let m = read_matrix_csv(&ddir.join(format!("diffusion_intra_dist_{id}.csv")))?;
                let spec = matrix_heatmap(&m, format!("Diffusion distances across SNR, layer {id}"), "SNR (dB)", distance_bounds(&[&m]));
                emit(format!("diffusion_intra_{id}.svg"), render_heatmap(&spec)?)?;
            }
        }
        if let Some(inter) = &report.inter {
            let snrs: Vec<i32> =
                inter.representative_snrs.iter().copied().filter(|s| inter.snrs.contains(s)).collect();
            let mats = snrs
                .iter()
                .map(|s| read_matrix_csv(&ddir.join(format!("diffusion_inter_{s}.csv"))))
                .collect::<Result<Vec<_>, _>>()?;
            // one scale across SNRs so panels are comparable
            let bounds = distance_bounds(&mats.iter().collect::<Vec<_>>());
            for (s, m) in snrs.iter().zip(&mats) {
                let spec = matrix_heatmap(m, format!("Diffusion distances between blocks at {s} dB"), "layer", bounds);
                emit(format!("diffusion_inter_{s}.svg"), render_heatmap(&spec)?)?;
            }
        }
    }

    if written.is_empty() {
        return Err(ReportError::MissingInput(format!("no renderable outputs under {}", input.display())));
    }
    Ok(written)
}
