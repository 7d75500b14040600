//! Evaluation reports on disk: `report.json`, three CSV tables and SVG plots.
//!
//! CSV columns:
//!
//! * `calibration.csv`: `method,lower,upper,pixel_count,positive_count,fraction`
//!   (`fraction` is empty for an empty bin)
//! * `per_image.csv`: `method,id,best_threshold,best_iou,default_iou,gain`
//! * `gains.csv`: `method,lower,upper,mean_gain,sample_count`

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confmap::Method;
use crate::eval::{EvalReport, CALIBRATION_BINS};

pub const REPORT_FILE: &str = "report.json";
pub const CALIBRATION_CSV: &str = "calibration.csv";
pub const PER_IMAGE_CSV: &str = "per_image.csv";
pub const GAINS_CSV: &str = "gains.csv";
pub const CALIBRATION_SVG: &str = "calibration.svg";
pub const ROC_SVG: &str = "roc.svg";
pub const GAINS_SVG: &str = "gains.svg";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("malformed report: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed report: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One report per method, in the order they were evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSet {
    pub reports: Vec<EvalReport>,
}

impl ReportSet {
    pub fn new(reports: Vec<EvalReport>) -> Result<Self, ReportError> {
        let set = Self { reports };
        set.validate()?;
        Ok(set)
    }

    pub fn parse(text: &str) -> Result<Self, ReportError> {
        let set: ReportSet = serde_json::from_str(text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("reports always serialize");
        text.push('\n');
        text
    }

    pub fn read(path: &Path) -> Result<Self, ReportError> {
        Self::parse(&fs::read_to_string(path).map_err(io_error(path))?)
    }

    fn validate(&self) -> Result<(), ReportError> {
        if self.reports.is_empty() {
            return Err(ReportError::Invalid("no reports".into()));
        }
        for (i, r) in self.reports.iter().enumerate() {
            if self.reports[..i].iter().any(|o| o.method == r.method) {
                return Err(ReportError::Invalid(format!(
                    "method {} repeated",
                    r.method
                )));
            }
            if r.calibration.bins.len() != CALIBRATION_BINS {
                return Err(ReportError::Invalid(format!(
                    "{}: expected {CALIBRATION_BINS} calibration bins, found {}",
                    r.method,
                    r.calibration.bins.len()
                )));
            }
            if r.per_image.len() != r.image_count {
                return Err(ReportError::Invalid(format!(
                    "{}: {} per-image records for {} images",
                    r.method,
                    r.per_image.len(),
                    r.image_count
                )));
            }
            let ratios = [r.auc, r.iou_a]
                .into_iter()
                .chain(r.calibration.bins.iter().filter_map(|b| b.fraction))
                .chain(r.roc.iter().flat_map(|p| [p.tpr, p.fpr]));
            for v in ratios {
                if !(0.0..=1.0).contains(&v) {
                    return Err(ReportError::Invalid(format!(
                        "{}: ratio {v} outside [0, 1]",
                        r.method
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn calibration_csv(&self) -> String {
        #[derive(Serialize)]
        struct Row {
            method: Method,
            lower: f64,
            upper: f64,
            pixel_count: u64,
            positive_count: u64,
            fraction: Option<f64>,
        }
        let header = [
            "method",
            "lower",
            "upper",
            "pixel_count",
            "positive_count",
            "fraction",
        ];
        to_csv(
            &header,
            self.reports.iter().flat_map(|r| {
                r.calibration.bins.iter().map(move |b| Row {
                    method: r.method,
                    lower: b.lower,
                    upper: b.upper,
                    pixel_count: b.pixel_count,
                    positive_count: b.positive_count,
                    fraction: b.fraction,
                })
            }),
        )
    }

    pub fn per_image_csv(&self) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            method: Method,
            id: &'a str,
            best_threshold: f64,
            best_iou: f64,
            default_iou: f64,
            gain: f64,
        }
        let header = [
            "method",
            "id",
            "best_threshold",
            "best_iou",
            "default_iou",
            "gain",
        ];
        to_csv(
            &header,
            self.reports.iter().flat_map(|r| {
                r.per_image.iter().map(move |p| Row {
                    method: r.method,
                    id: &p.id,
                    best_threshold: p.best_threshold,
                    best_iou: p.best_iou,
                    default_iou: p.default_iou,
                    gain: p.best_iou - p.default_iou,
                })
            }),
        )
    }

    pub fn gains_csv(&self) -> String {
        #[derive(Serialize)]
        struct Row {
            method: Method,
            lower: f64,
            upper: f64,
            mean_gain: f64,
            sample_count: usize,
        }
        let header = ["method", "lower", "upper", "mean_gain", "sample_count"];
        to_csv(
            &header,
            self.reports.iter().flat_map(|r| {
                r.gain_bins.iter().map(move |g| Row {
                    method: r.method,
                    lower: g.lower,
                    upper: g.upper,
                    mean_gain: g.mean_gain,
                    sample_count: g.sample_count,
                })
            }),
        )
    }

    /// Writes `report.json` and the three CSV tables into `dir`.
    pub fn write_tables(&self, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
        fs::create_dir_all(dir).map_err(io_error(dir))?;
        write_all(
            dir,
            &[
                (REPORT_FILE, self.to_json()),
                (CALIBRATION_CSV, self.calibration_csv()),
                (PER_IMAGE_CSV, self.per_image_csv()),
                (GAINS_CSV, self.gains_csv()),
            ],
        )
    }

    /// Writes `calibration.svg`, `roc.svg` and `gains.svg` into `dir`.
    pub fn write_plots(&self, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
        fs::create_dir_all(dir).map_err(io_error(dir))?;
        write_all(
            dir,
            &[
                (CALIBRATION_SVG, calibration_svg(self)),
                (ROC_SVG, roc_svg(self)),
                (GAINS_SVG, gains_svg(self)),
            ],
        )
    }
}

/// The header is written even when there are no rows.
fn to_csv<T: Serialize>(header: &[&str], rows: impl Iterator<Item = T>) -> String {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    writer
        .write_record(header)
        .expect("header writes to memory");
    for row in rows {
        writer.serialize(row).expect("rows serialize to memory");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

fn write_all(dir: &Path, files: &[(&str, String)]) -> Result<Vec<PathBuf>, ReportError> {
    files
        .iter()
        .map(|(name, text)| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(io_error(&path))?;
            Ok(path)
        })
        .collect()
}

const WIDTH: f64 = 520.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn style(method: Method) -> (&'static str, &'static str) {
    match method {
        Method::PreThreshold => ("#1f77b4", ""),
        Method::McDropout => ("#d62728", " stroke-dasharray=\"6 3\""),
        Method::Tta => ("#2ca02c", " stroke-dasharray=\"2 2\""),
    }
}

/// Maps data coordinates onto the plot area.
struct Frame {
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        LEFT + v * (WIDTH - LEFT - RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        let t = (v - self.y_min) / (self.y_max - self.y_min);
        HEIGHT - BOTTOM - t * (HEIGHT - TOP - BOTTOM)
    }

    fn point(&self, x: f64, y: f64) -> String {
        format!("{:.2},{:.2}", self.x(x), self.y(y))
    }
}

fn begin(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(
        out,
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
        (LEFT + WIDTH - RIGHT) / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, frame: &Frame, x_label: &str, y_label: &str, y_ticks: &[f64]) {
    let (x0, x1) = (frame.x(0.0), frame.x(1.0));
    let (y0, y1) = (frame.y(frame.y_min), frame.y(frame.y_max));
    let _ = writeln!(
        out,
        "<path d=\"M{x0:.2},{y1:.2} V{y0:.2} H{x1:.2}\" fill=\"none\" stroke=\"black\"/>"
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let x = frame.x(v);
        let _ = writeln!(
            out,
            "<line x1=\"{x:.2}\" y1=\"{y0:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\
             <text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{v:.1}</text>",
            y0 + 4.0,
            y0 + 18.0
        );
    }
    for &v in y_ticks {
        let y = frame.y(v);
        let _ = writeln!(
            out,
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{x0:.2}\" y2=\"{y:.2}\" stroke=\"black\"/>\
             <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{v:.1}</text>",
            x0 - 4.0,
            x0 - 7.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        "<text transform=\"translate(16,{:.2}) rotate(-90)\" text-anchor=\"middle\">{}</text>",
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn legend(out: &mut String, entries: &[(Method, String)]) {
    let x = WIDTH - RIGHT + 16.0;
    let _ = writeln!(out, "<g class=\"legend\">");
    for (i, (method, label)) in entries.iter().enumerate() {
        let y = TOP + 10.0 + 20.0 * i as f64;
        let (color, dash) = style(*method);
        let _ = writeln!(
            out,
            "<line x1=\"{x:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"{color}\" \
             stroke-width=\"2\"{dash}/><text x=\"{:.2}\" y=\"{:.2}\">{}</text>",
            x + 24.0,
            x + 30.0,
            y + 4.0,
            escape(label)
        );
    }
    let _ = writeln!(out, "</g>");
}

fn polyline(out: &mut String, frame: &Frame, method: Method, points: &[(f64, f64)]) {
    let (color, dash) = style(method);
    let coords: Vec<String> = points.iter().map(|&(x, y)| frame.point(x, y)).collect();
    let _ = writeln!(
        out,
        "<polyline class=\"{method}\" points=\"{}\" fill=\"none\" stroke=\"{color}\" \
         stroke-width=\"2\"{dash}/>",
        coords.join(" ")
    );
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const UNIT_TICKS: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

/// Empirical positive fraction at each bin center. Empty bins break the
/// line into separate segments.
pub fn calibration_svg(set: &ReportSet) -> String {
    let frame = Frame {
        y_min: 0.0,
        y_max: 1.0,
    };
    let mut out = String::new();
    begin(&mut out, "Calibration");
    axes(
        &mut out,
        &frame,
        "confidence",
        "fraction of positive pixels",
        &UNIT_TICKS,
    );
    let _ = writeln!(
        out,
        "<line class=\"ideal\" x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" \
         stroke=\"#888888\" stroke-dasharray=\"4 4\"/>",
        frame.x(0.0),
        frame.y(0.0),
        frame.x(1.0),
        frame.y(1.0)
    );
    for r in &set.reports {
        let (color, _) = style(r.method);
        let mut segment: Vec<(f64, f64)> = Vec::new();
        for b in &r.calibration.bins {
            match b.fraction {
                Some(f) => {
                    let center = (b.lower + b.upper) / 2.0;
                    segment.push((center, f));
                    let _ = writeln!(
                        out,
                        "<circle class=\"{}\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>",
                        r.method,
                        frame.x(center),
                        frame.y(f)
                    );
                }
                None => {
                    if segment.len() > 1 {
                        polyline(&mut out, &frame, r.method, &segment);
                    }
                    segment.clear();
                }
            }
        }
        if segment.len() > 1 {
            polyline(&mut out, &frame, r.method, &segment);
        }
    }
    let entries: Vec<(Method, String)> = set
        .reports
        .iter()
        .map(|r| (r.method, r.method.to_string()))
        .collect();
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}

pub fn roc_svg(set: &ReportSet) -> String {
    let frame = Frame {
        y_min: 0.0,
        y_max: 1.0,
    };
    let mut out = String::new();
    begin(&mut out, "ROC");
    axes(
        &mut out,
        &frame,
        "false positive rate",
        "true positive rate",
        &UNIT_TICKS,
    );
    let _ = writeln!(
        out,
        "<line class=\"chance\" x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" \
         stroke=\"#888888\" stroke-dasharray=\"4 4\"/>",
        frame.x(0.0),
        frame.y(0.0),
        frame.x(1.0),
        frame.y(1.0)
    );
    for r in &set.reports {
        let mut points: Vec<(f64, f64)> = vec![(1.0, 1.0)];
        points.extend(r.roc.iter().map(|p| (p.fpr, p.tpr)));
        points.push((0.0, 0.0));
        polyline(&mut out, &frame, r.method, &points);
    }
    let entries: Vec<(Method, String)> = set
        .reports
        .iter()
        .map(|r| (r.method, format!("{} ({:.3})", r.method, r.auc)))
        .collect();
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}

/// Mean IoU gain per default-IoU range, one bar per method.
pub fn gains_svg(set: &ReportSet) -> String {
    let gains = set
        .reports
        .iter()
        .flat_map(|r| r.gain_bins.iter().map(|g| g.mean_gain));
    let (lo, hi) = gains.fold((0.0f64, 0.1f64), |(lo, hi), g| (lo.min(g), hi.max(g)));
    let frame = Frame {
        y_min: (lo * 10.0).floor() / 10.0,
        y_max: (hi * 10.0).ceil() / 10.0,
    };
    let steps = ((frame.y_max - frame.y_min) * 10.0).round() as usize;
    let stride = steps.div_ceil(5).max(1);
    let ticks: Vec<f64> = (0..=steps)
        .step_by(stride)
        .map(|i| frame.y_min + i as f64 / 10.0)
        .collect();

    let mut out = String::new();
    begin(&mut out, "Mean IoU gain by default IoU");
    axes(
        &mut out,
        &frame,
        "IoU at default threshold",
        "mean IoU gain",
        &ticks,
    );
    let n = set.reports.len() as f64;
    let bar = 0.08 / n;
    for (k, r) in set.reports.iter().enumerate() {
        let (color, _) = style(r.method);
        for g in &r.gain_bins {
            let x = g.lower + 0.01 + bar * k as f64;
            let (top, bottom) = (g.mean_gain.max(0.0), g.mean_gain.min(0.0));
            let _ = writeln!(
                out,
                "<rect class=\"{}\" x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" \
                 fill=\"{color}\"><title>n={}</title></rect>",
                r.method,
                frame.x(x),
                frame.y(top),
                frame.x(x + bar) - frame.x(x),
                frame.y(bottom) - frame.y(top),
                g.sample_count
            );
        }
    }
    let entries: Vec<(Method, String)> = set
        .reports
        .iter()
        .map(|r| (r.method, r.method.to_string()))
        .collect();
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}
