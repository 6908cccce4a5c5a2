//! Figures and tables: prediction-vs-target scatter plots, confusion
//! heatmaps and the per-input summary table.
//!
//! PNGs are 1000×1000, drawn with [`raster`] and tagged with `run_id` and
//! `config_hash` text chunks. Identical inputs give identical bytes.

pub mod raster;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, ConfusionMatrix, MetricError, MetricsReport, Task};
use crate::preprocess::InputMode;

use raster::{Canvas, Color, BLACK, GREY, WHITE};

pub const FIGURE_PX: u32 = 1000;
pub const PAIRS_FILE: &str = "pairs.csv";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report has no prediction/target pairs")]
    MissingPairs,
    #[error("expected a {expected} report, got {actual}")]
    WrongTask { expected: Task, actual: Task },
    #[error("classification report has no confusion matrix")]
    MissingConfusion,
    #[error("nothing to render: {0}")]
    Empty(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("source {path} is unusable: {message}")]
    Source { path: String, message: String },
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ReportError {
    ReportError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    #[serde(rename = "scatter_45")]
    Scatter45,
    ConfusionRaw,
    ConfusionNormalized,
    CategoryTable,
}

/// A figure to produce from saved reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRequest {
    pub kind: PlotKind,
    /// One report for figures; for tables, one per input mode.
    pub sources: Vec<(InputMode, PathBuf)>,
    pub output_path: PathBuf,
    pub title: String,
}

/// Provenance embedded in every PNG.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlotMeta {
    pub run_id: String,
    pub config_hash: String,
    pub title: String,
}

impl PlotMeta {
    fn chunks(&self) -> Vec<(&'static str, String)> {
        vec![
            ("Title", self.title.clone()),
            ("run_id", self.run_id.clone()),
            ("config_hash", self.config_hash.clone()),
        ]
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn save_png(canvas: &Canvas, meta: &PlotMeta, out: &Path) -> Result<(), ReportError> {
    let mut bytes = Vec::new();
    canvas
        .write_png(&mut bytes, &meta.chunks())
        .map_err(|e| io_err(out, e))?;
    write_atomic(out, &bytes)
}

/// Writes `report.json`-style JSON plus, for regression, its pairs CSV
/// next to it.
pub fn save_report(report: &MetricsReport, path: &Path) -> Result<(), ReportError> {
    let mut report = report.clone();
    if let Some(pairs) = &report.pairs {
        let pairs_path = path.with_file_name(PAIRS_FILE);
        write_atomic(&pairs_path, metrics::write_pairs_csv(pairs).as_bytes())?;
        report.pairs_path = Some(PAIRS_FILE.to_string());
    }
    let json = serde_json::to_string_pretty(&report).expect("reports serialize");
    write_atomic(path, json.as_bytes())
}

/// Reads a report and, when it names one, its pairs file (relative paths
/// resolve against the report's directory).
pub fn load_report(path: &Path) -> Result<MetricsReport, ReportError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut report: MetricsReport = serde_json::from_str(&text).map_err(|e| ReportError::Source {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    if let Some(rel) = &report.pairs_path {
        let pairs_path = path.parent().unwrap_or(Path::new(".")).join(rel);
        let csv = fs::read_to_string(&pairs_path).map_err(|e| io_err(&pairs_path, e))?;
        report.pairs = Some(metrics::read_pairs_csv(&csv)?);
    }
    Ok(report)
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"))
}

/// Axis range covering every prediction and target with 5% padding on
/// each side; both axes share it so the identity line spans the plot.
pub fn scatter_range(predictions: &[f64], targets: &[f64]) -> (f64, f64) {
    let (lo, hi) = predictions
        .iter()
        .chain(targets)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        });
    let span = hi - lo;
    let pad = if span > 0.0 { 0.05 * span } else { 0.5 };
    (lo - pad, hi + pad)
}

const PLOT_LEFT: i64 = 130;
const PLOT_TOP: i64 = 110;
const PLOT_SIDE: i64 = 800;
const POINT: Color = [31, 119, 180];

/// Predictions on x, targets on y, identity line, rmse and r2 annotation.
pub fn render_scatter(report: &MetricsReport, out: &Path, meta: &PlotMeta) -> Result<(), ReportError> {
    if report.task != Task::Regression {
        return Err(ReportError::WrongTask {
            expected: Task::Regression,
            actual: report.task,
        });
    }
    let pairs = report.pairs.as_ref().ok_or(ReportError::MissingPairs)?;
    if pairs.is_empty() {
        return Err(ReportError::MissingPairs);
    }
    let (lo, hi) = scatter_range(pairs.predictions(), pairs.targets());
    let to_px = |v: f64| ((v - lo) / (hi - lo) * PLOT_SIDE as f64).round() as i64;
    let (x0, y1) = (PLOT_LEFT, PLOT_TOP + PLOT_SIDE);

    let mut c = Canvas::new(FIGURE_PX, FIGURE_PX, WHITE);
    c.text_centered(FIGURE_PX as i64 / 2, 40, &meta.title, 3, BLACK);
    for i in 0..=5 {
        let v = lo + (hi - lo) * i as f64 / 5.0;
        let p = to_px(v);
        c.line((x0 + p, PLOT_TOP), (x0 + p, y1), 1, GREY);
        c.line((x0, y1 - p), (x0 + PLOT_SIDE, y1 - p), 1, GREY);
        let label = format!("{v:.2}");
        c.text_centered(x0 + p, y1 + 25, &label, 2, BLACK);
        c.text(x0 - 15 - raster::text_width(&label, 2), y1 - p - 7, &label, 2, BLACK);
    }
    c.stroke_rect(x0, PLOT_TOP, PLOT_SIDE + 1, PLOT_SIDE + 1, 2, BLACK);
    c.line((x0, y1), (x0 + PLOT_SIDE, PLOT_TOP), 3, BLACK);
    for (p, t) in pairs.iter() {
        c.disc(x0 + to_px(p), y1 - to_px(t), 4, POINT);
    }
    c.text_centered(x0 + PLOT_SIDE / 2, y1 + 65, "prediction", 2, BLACK);
    c.text(x0 - 110, PLOT_TOP - 30, "target", 2, BLACK);
    let note = format!(
        "rmse={}  r2={}  n={}",
        fmt_metric(report.metric("rmse")),
        fmt_metric(report.metric("r2_score")),
        pairs.len()
    );
    c.fill_rect(x0 + 10, PLOT_TOP + 10, raster::text_width(&note, 2) + 16, 30, WHITE);
    c.text(x0 + 18, PLOT_TOP + 18, &note, 2, BLACK);
    save_png(&c, meta, out)
}

/// Cell captions, `[[tn, fp], [fn, tp]]`: counts, or row rates to two
/// decimals.
pub fn confusion_cells(cm: &ConfusionMatrix, normalized: bool) -> Result<[[String; 2]; 2], ReportError> {
    if cm.total() == 0 {
        return Err(ReportError::Empty("confusion matrix has no entries".into()));
    }
    if normalized {
        let rates = cm.normalized()?;
        Ok(rates.map(|row| row.map(|v| format!("{v:.2}"))))
    } else {
        Ok(cm.rows().map(|row| row.map(|v| v.to_string())))
    }
}

fn blend(base: Color, t: f64) -> Color {
    std::array::from_fn(|i| (255.0 + (base[i] as f64 - 255.0) * t.clamp(0.0, 1.0)).round() as u8)
}

/// 2×2 heatmap. Raw counts are shaded blue, row-normalised rates red.
pub fn render_confusion(
    cm: &ConfusionMatrix,
    normalized: bool,
    out: &Path,
    meta: &PlotMeta,
) -> Result<(), ReportError> {
    let cells = confusion_cells(cm, normalized)?;
    let intensity: [[f64; 2]; 2] = if normalized {
        cm.normalized()?
    } else {
        let max = cm.rows().iter().flatten().copied().max().unwrap_or(1).max(1) as f64;
        cm.rows().map(|r| r.map(|v| v as f64 / max))
    };
    let base: Color = if normalized { [178, 24, 43] } else { [33, 102, 172] };
    let (left, top, cell) = (250i64, 170i64, 330i64);

    let mut c = Canvas::new(FIGURE_PX, FIGURE_PX, WHITE);
    c.text_centered(FIGURE_PX as i64 / 2, 60, &meta.title, 3, BLACK);
    for row in 0..2 {
        for col in 0..2 {
            let (x, y) = (left + col as i64 * cell, top + row as i64 * cell);
            let t = intensity[row][col];
            c.fill_rect(x, y, cell, cell, blend(base, t));
            let ink = if t > 0.5 { WHITE } else { BLACK };
            c.text_centered(x + cell / 2, y + cell / 2, &cells[row][col], 5, ink);
        }
        c.text_centered(
            left - 40,
            top + row as i64 * cell + cell / 2,
            &row.to_string(),
            3,
            BLACK,
        );
        c.text_centered(
            left + row as i64 * cell + cell / 2,
            top + 2 * cell + 35,
            &row.to_string(),
            3,
            BLACK,
        );
    }
    c.stroke_rect(left, top, 2 * cell, 2 * cell, 2, BLACK);
    c.line((left + cell, top), (left + cell, top + 2 * cell), 2, BLACK);
    c.line((left, top + cell), (left + 2 * cell, top + cell), 2, BLACK);
    c.text_centered(left + cell, top + 2 * cell + 80, "predicted", 3, BLACK);
    c.text_centered(left - 40, top - 40, "actual", 3, BLACK);
    let footer = format!("n={}", cm.total());
    c.text_centered(FIGURE_PX as i64 / 2, FIGURE_PX as i64 - 35, &footer, 2, BLACK);
    save_png(&c, meta, out)
}

/// One row of the summary table: total sample count and the validation
/// report.
#[derive(Debug, Clone, PartialEq)]
pub struct TableEntry {
    pub n: usize,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub input: InputMode,
    pub n: usize,
    pub rmse: Option<f64>,
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryTable {
    /// Canonical category order, then merged, then pooled.
    pub rows: Vec<TableRow>,
}

impl CategoryTable {
    pub fn from_entries(entries: &BTreeMap<InputMode, TableEntry>) -> Self {
        Self {
            rows: entries
                .iter()
                .map(|(input, e)| TableRow {
                    input: *input,
                    n: e.n,
                    rmse: e.report.metric("rmse"),
                    r2: e.report.metric("r2_score"),
                })
                .collect(),
        }
    }

    /// The input with the highest r2.
    pub fn best_by_r2(&self) -> Option<InputMode> {
        self.rows
            .iter()
            .filter_map(|r| r.r2.map(|v| (r.input, v)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(input, _)| input)
    }

    fn label(input: InputMode) -> String {
        match input {
            InputMode::Category(c) => c.slug().to_string(),
            other => other.to_string(),
        }
    }

    pub fn to_plaintext(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| Self::label(r.input).len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut out = format!("{:<width$}  {:>6}  {:>10}  {:>10}\n", "input", "n", "rmse", "r2");
        for r in &self.rows {
            writeln!(
                out,
                "{:<width$}  {:>6}  {:>10}  {:>10}",
                Self::label(r.input),
                r.n,
                fmt_metric(r.rmse),
                fmt_metric(r.r2)
            )
            .unwrap();
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["input", "n", "rmse", "r2"]).unwrap();
        for r in &self.rows {
            let f = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
            w.write_record([Self::label(r.input), r.n.to_string(), f(r.rmse), f(r.r2)])
                .unwrap();
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv")
    }
}

/// Writes the table as plaintext at `out` and as CSV beside it.
pub fn render_category_table(
    entries: &BTreeMap<InputMode, TableEntry>,
    out: &Path,
) -> Result<CategoryTable, ReportError> {
    if entries.is_empty() {
        return Err(ReportError::Empty("no reports for the table".into()));
    }
    let table = CategoryTable::from_entries(entries);
    write_atomic(out, table.to_plaintext().as_bytes())?;
    write_atomic(&out.with_extension("csv"), table.to_csv().as_bytes())?;
    Ok(table)
}

/// Validates a request against its sources, then renders it.
pub fn execute(request: &PlotRequest, meta: &PlotMeta) -> Result<(), ReportError> {
    let mut reports = Vec::with_capacity(request.sources.len());
    for (input, path) in &request.sources {
        if !path.exists() {
            return Err(ReportError::Source {
                path: path.display().to_string(),
                message: "does not exist".into(),
            });
        }
        reports.push((*input, load_report(path)?));
    }
    let single = || -> Result<&MetricsReport, ReportError> {
        match reports.as_slice() {
            [(_, r)] => Ok(r),
            _ => Err(ReportError::Empty(format!(
                "{:?} needs exactly one source",
                request.kind
            ))),
        }
    };
    let meta = PlotMeta {
        title: request.title.clone(),
        ..meta.clone()
    };
    match request.kind {
        PlotKind::Scatter45 => render_scatter(single()?, &request.output_path, &meta),
        PlotKind::ConfusionRaw | PlotKind::ConfusionNormalized => {
            let r = single()?;
            if r.task != Task::Classification {
                return Err(ReportError::WrongTask {
                    expected: Task::Classification,
                    actual: r.task,
                });
            }
            let cm = r.confusion.ok_or(ReportError::MissingConfusion)?;
            render_confusion(
                &cm,
                request.kind == PlotKind::ConfusionNormalized,
                &request.output_path,
                &meta,
            )
        }
        PlotKind::CategoryTable => {
            let entries = reports
                .into_iter()
                .map(|(input, report)| {
                    if report.task != Task::Regression {
                        return Err(ReportError::WrongTask {
                            expected: Task::Regression,
                            actual: report.task,
                        });
                    }
                    Ok((
                        input,
                        TableEntry {
                            n: report.n_valid,
                            report,
                        },
                    ))
                })
                .collect::<Result<BTreeMap<_, _>, _>>()?;
            render_category_table(&entries, &request.output_path).map(|_| ())
        }
    }
}
