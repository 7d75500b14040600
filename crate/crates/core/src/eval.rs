//! Scoring confidence maps against ground truth.
//!
//! Thresholding is always `score >= t`. Ratios with a zero denominator are
//! reported as 0, except accuracy whose denominator is never zero.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confmap::{ConfidenceMap, Method};
use crate::grid::BinaryMask;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("{maps} maps but {truths} truth masks")]
    Misaligned { maps: usize, truths: usize },
    #[error("image {index}: map is {map:?} but truth is {truth:?}")]
    DimensionMismatch {
        index: usize,
        map: (usize, usize),
        truth: (usize, usize),
    },
    #[error("nothing to evaluate")]
    Empty,
    #[error("AUC undefined for {scope}: {positives} positive and {negatives} negative pixels")]
    Degenerate {
        scope: String,
        positives: usize,
        negatives: usize,
    },
    #[error("invalid threshold grid: {0}")]
    InvalidGrid(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Pixel counts with foreground (1) as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn merge(self, other: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            tn: self.tn + other.tn,
            fn_: self.fn_ + other.fn_,
        }
    }

    /// Counts for `values >= threshold` against `truth`.
    pub fn at_threshold(values: &[f64], truth: &[u8], threshold: f64) -> Confusion {
        let mut c = Confusion::default();
        for (&v, &t) in values.iter().zip(truth) {
            match (v >= threshold, t == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn iou(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp + self.fn_)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn confusion(pred: &BinaryMask, truth: &BinaryMask) -> Result<Confusion, EvalError> {
    if pred.dims() != truth.dims() {
        return Err(EvalError::DimensionMismatch {
            index: 0,
            map: pred.dims(),
            truth: truth.dims(),
        });
    }
    let mut c = Confusion::default();
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        match (p, t) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

pub fn seg_metrics(c: &Confusion) -> SegMetrics {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    SegMetrics {
        iou: c.iou(),
        precision,
        recall,
        f1,
        accuracy: ratio(c.tp + c.tn, c.total()),
    }
}

fn check_aligned(maps: &[ConfidenceMap], truths: &[BinaryMask]) -> Result<(), EvalError> {
    if maps.len() != truths.len() {
        return Err(EvalError::Misaligned {
            maps: maps.len(),
            truths: truths.len(),
        });
    }
    if maps.is_empty() {
        return Err(EvalError::Empty);
    }
    for (index, (m, t)) in maps.iter().zip(truths).enumerate() {
        if m.dims() != t.dims() {
            return Err(EvalError::DimensionMismatch {
                index,
                map: m.dims(),
                truth: t.dims(),
            });
        }
    }
    Ok(())
}

pub const CALIBRATION_BINS: usize = 10;

fn bin_edge(i: usize) -> f64 {
    i as f64 / CALIBRATION_BINS as f64
}

/// Bin `i` holds `[i/10, (i+1)/10)`; the last bin also holds 1.0.
pub fn calibration_bin(v: f64) -> usize {
    let mut b = ((v * CALIBRATION_BINS as f64).floor().max(0.0) as usize).min(CALIBRATION_BINS - 1);
    if v < bin_edge(b) && b > 0 {
        b -= 1;
    } else if b + 1 < CALIBRATION_BINS && v >= bin_edge(b + 1) {
        b += 1;
    }
    b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub pixel_count: u64,
    pub positive_count: u64,
    /// `positive_count / pixel_count`; `None` for an empty bin.
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CalibrationTable {
    pub bins: Vec<CalibrationBin>,
}

impl CalibrationTable {
    pub fn total_pixels(&self) -> u64 {
        self.bins.iter().map(|b| b.pixel_count).sum()
    }
}

/// Pools every pixel of every image into ten confidence bins.
pub fn calibration_table(
    maps: &[ConfidenceMap],
    truths: &[BinaryMask],
) -> Result<CalibrationTable, EvalError> {
    check_aligned(maps, truths)?;
    let mut pixels = [0u64; CALIBRATION_BINS];
    let mut positives = [0u64; CALIBRATION_BINS];
    for (map, truth) in maps.iter().zip(truths) {
        for (&v, &t) in map.values().iter().zip(truth.data()) {
            let b = calibration_bin(v);
            pixels[b] += 1;
            positives[b] += t as u64;
        }
    }
    let bins = (0..CALIBRATION_BINS)
        .map(|i| CalibrationBin {
            lower: bin_edge(i),
            upper: bin_edge(i + 1),
            pixel_count: pixels[i],
            positive_count: positives[i],
            fraction: (pixels[i] > 0).then(|| positives[i] as f64 / pixels[i] as f64),
        })
        .collect();
    Ok(CalibrationTable { bins })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AucPooling {
    /// One ranking over all pixels of all images.
    Pooled,
    /// Unweighted mean of per-image AUCs.
    PerImageMean,
}

impl std::str::FromStr for AucPooling {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pooled" => Ok(AucPooling::Pooled),
            "per_image_mean" | "per-image-mean" => Ok(AucPooling::PerImageMean),
            other => Err(format!(
                "unknown AUC pooling `{other}` (expected pooled or per_image_mean)"
            )),
        }
    }
}

impl std::fmt::Display for AucPooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AucPooling::Pooled => "pooled",
            AucPooling::PerImageMean => "per_image_mean",
        })
    }
}

/// Mann-Whitney AUC with average ranks for ties:
/// `(R+ - P(P+1)/2) / (P N)` where `R+` sums the ranks of positives.
pub fn auc_from_scores(scores: &[f64], labels: &[u8], scope: &str) -> Result<f64, EvalError> {
    assert_eq!(scores.len(), labels.len());
    let mut ranked: Vec<(f64, u8)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    ranked.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::Degenerate {
            scope: scope.to_owned(),
            positives,
            negatives,
        });
    }
    let mut positive_rank_sum = 0.0f64;
    let mut start = 0;
    while start < ranked.len() {
        let value = ranked[start].0;
        let mut end = start;
        let mut tied_positives = 0u64;
        while end < ranked.len() && ranked[end].0 == value {
            tied_positives += ranked[end].1 as u64;
            end += 1;
        }
        // Ranks start+1 ..= end share their mean.
        let mean_rank = (start + 1 + end) as f64 / 2.0;
        positive_rank_sum += mean_rank * tied_positives as f64;
        start = end;
    }
    let p = positives as f64;
    let n = negatives as f64;
    Ok((positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn auc(
    maps: &[ConfidenceMap],
    truths: &[BinaryMask],
    pooling: AucPooling,
) -> Result<f64, EvalError> {
    check_aligned(maps, truths)?;
    match pooling {
        AucPooling::Pooled => {
            let scores: Vec<f64> = maps
                .iter()
                .flat_map(|m| m.values().iter().copied())
                .collect();
            let labels: Vec<u8> = truths
                .iter()
                .flat_map(|t| t.data().iter().copied())
                .collect();
            auc_from_scores(&scores, &labels, "the pooled test set")
        }
        AucPooling::PerImageMean => {
            let per_image = maps
                .par_iter()
                .zip(truths.par_iter())
                .enumerate()
                .map(|(i, (m, t))| auc_from_scores(m.values(), t.data(), &format!("image {i}")))
                .collect::<Vec<_>>()
                .into_iter()
                .collect::<Result<Vec<f64>, _>>()?;
            Ok(per_image.iter().sum::<f64>() / per_image.len() as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// Pooled true/false positive rates at `score >= t` for each threshold.
pub fn roc_curve(
    maps: &[ConfidenceMap],
    truths: &[BinaryMask],
    thresholds: &[f64],
) -> Result<Vec<RocPoint>, EvalError> {
    check_aligned(maps, truths)?;
    let mut positives: Vec<f64> = Vec::new();
    let mut negatives: Vec<f64> = Vec::new();
    for (m, t) in maps.iter().zip(truths) {
        for (&v, &l) in m.values().iter().zip(t.data()) {
            if l == 1 {
                positives.push(v);
            } else {
                negatives.push(v);
            }
        }
    }
    positives.sort_unstable_by(f64::total_cmp);
    negatives.sort_unstable_by(f64::total_cmp);
    let rate = |sorted: &[f64], t: f64| {
        let above = sorted.len() - sorted.partition_point(|&v| v < t);
        ratio(above as u64, sorted.len() as u64)
    };
    Ok(thresholds
        .iter()
        .map(|&t| RocPoint {
            threshold: t,
            tpr: rate(&positives, t),
            fpr: rate(&negatives, t),
        })
        .collect())
}

/// Strictly increasing thresholds inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ThresholdGrid {
    values: Vec<f64>,
}

impl ThresholdGrid {
    pub fn new(values: Vec<f64>) -> Result<Self, EvalError> {
        if values.is_empty() {
            return Err(EvalError::InvalidGrid("grid is empty".into()));
        }
        if let Some(v) = values.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
            return Err(EvalError::InvalidGrid(format!("{v} is outside (0, 1)")));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvalError::InvalidGrid(
                "values must strictly increase".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl Default for ThresholdGrid {
    /// `0.1, 0.2, ..., 0.9`.
    fn default() -> Self {
        Self {
            values: (1..10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

impl TryFrom<Vec<f64>> for ThresholdGrid {
    type Error = EvalError;
    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        ThresholdGrid::new(values)
    }
}

impl From<ThresholdGrid> for Vec<f64> {
    fn from(grid: ThresholdGrid) -> Self {
        grid.values
    }
}

impl std::str::FromStr for ThresholdGrid {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let values = s
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        ThresholdGrid::new(values).map_err(|e| e.to_string())
    }
}

/// Best threshold on the grid for one image. Ties go to the smaller threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweep {
    pub best_threshold: f64,
    pub best_iou: f64,
}

pub fn sweep_image(values: &[f64], truth: &[u8], grid: &ThresholdGrid) -> ThresholdSweep {
    let mut best = ThresholdSweep {
        best_threshold: grid.values[0],
        best_iou: f64::NEG_INFINITY,
    };
    for &t in &grid.values {
        let iou = Confusion::at_threshold(values, truth, t).iou();
        if iou > best.best_iou {
            best = ThresholdSweep {
                best_threshold: t,
                best_iou: iou,
            };
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct IouA {
    pub iou_a: f64,
    pub per_image: Vec<ThresholdSweep>,
}

/// Image-specific thresholding: mean over images of the best grid IoU.
pub fn iou_a(
    maps: &[ConfidenceMap],
    truths: &[BinaryMask],
    grid: &ThresholdGrid,
) -> Result<IouA, EvalError> {
    check_aligned(maps, truths)?;
    let per_image: Vec<ThresholdSweep> = maps
        .par_iter()
        .zip(truths.par_iter())
        .map(|(m, t)| sweep_image(m.values(), t.data(), grid))
        .collect();
    let iou_a = per_image.iter().map(|s| s.best_iou).sum::<f64>() / per_image.len() as f64;
    Ok(IouA { iou_a, per_image })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainBin {
    pub lower: f64,
    pub upper: f64,
    pub mean_gain: f64,
    pub sample_count: usize,
}

/// IoU gain of the per-image best threshold over `default_tau`, averaged
/// within ten buckets of the default IoU. Buckets with fewer than
/// `min_samples` images are left out.
pub fn iou_gain_by_range(
    maps: &[ConfidenceMap],
    truths: &[BinaryMask],
    grid: &ThresholdGrid,
    default_tau: f64,
    min_samples: usize,
) -> Result<Vec<GainBin>, EvalError> {
    check_aligned(maps, truths)?;
    let records: Vec<(f64, f64)> = maps
        .par_iter()
        .zip(truths.par_iter())
        .map(|(m, t)| {
            let best = sweep_image(m.values(), t.data(), grid).best_iou;
            let default = Confusion::at_threshold(m.values(), t.data(), default_tau).iou();
            (default, best - default)
        })
        .collect();
    Ok(gain_bins(&records, min_samples))
}

fn gain_bins(records: &[(f64, f64)], min_samples: usize) -> Vec<GainBin> {
    let mut sums = [0f64; CALIBRATION_BINS];
    let mut counts = [0usize; CALIBRATION_BINS];
    for &(default_iou, gain) in records {
        let b = calibration_bin(default_iou);
        sums[b] += gain;
        counts[b] += 1;
    }
    (0..CALIBRATION_BINS)
        .filter(|&i| counts[i] >= min_samples.max(1))
        .map(|i| GainBin {
            lower: bin_edge(i),
            upper: bin_edge(i + 1),
            mean_gain: sums[i] / counts[i] as f64,
            sample_count: counts[i],
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub grid: ThresholdGrid,
    pub default_tau: f64,
    pub min_samples: usize,
    pub auc_pooling: AucPooling,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            grid: ThresholdGrid::default(),
            default_tau: 0.5,
            min_samples: 3,
            auc_pooling: AucPooling::Pooled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerImageRecord {
    pub id: String,
    pub best_threshold: f64,
    pub best_iou: f64,
    pub default_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub image_count: usize,
    pub auc: f64,
    pub auc_pooling: AucPooling,
    pub iou_a: f64,
    pub grid: ThresholdGrid,
    pub default_tau: f64,
    /// Pooled segmentation metrics at `default_tau`.
    pub metrics: SegMetrics,
    pub calibration: CalibrationTable,
    pub per_image: Vec<PerImageRecord>,
    pub gain_bins: Vec<GainBin>,
    /// Pooled ROC at thresholds `0.00, 0.01, ..., 1.00`.
    pub roc: Vec<RocPoint>,
}

/// Runs every evaluator over one method's maps.
pub fn evaluate(
    method: Method,
    ids: &[String],
    maps: &[ConfidenceMap],
    truths: &[BinaryMask],
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    check_aligned(maps, truths)?;
    if ids.len() != maps.len() {
        return Err(EvalError::InvalidParameter(format!(
            "{} ids for {} maps",
            ids.len(),
            maps.len()
        )));
    }
    if !(options.default_tau > 0.0 && options.default_tau < 1.0) {
        return Err(EvalError::InvalidParameter(format!(
            "default tau must lie in (0, 1), got {}",
            options.default_tau
        )));
    }
    let sweeps = iou_a(maps, truths, &options.grid)?;
    let defaults: Vec<Confusion> = maps
        .par_iter()
        .zip(truths.par_iter())
        .map(|(m, t)| Confusion::at_threshold(m.values(), t.data(), options.default_tau))
        .collect();
    let per_image: Vec<PerImageRecord> = ids
        .iter()
        .zip(&sweeps.per_image)
        .zip(&defaults)
        .map(|((id, sweep), c)| PerImageRecord {
            id: id.clone(),
            best_threshold: sweep.best_threshold,
            best_iou: sweep.best_iou,
            default_iou: c.iou(),
        })
        .collect();
    let records: Vec<(f64, f64)> = per_image
        .iter()
        .map(|r| (r.default_iou, r.best_iou - r.default_iou))
        .collect();
    let pooled = defaults
        .iter()
        .fold(Confusion::default(), |acc, c| acc.merge(*c));
    let thresholds: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    Ok(EvalReport {
        method,
        image_count: maps.len(),
        auc: auc(maps, truths, options.auc_pooling)?,
        auc_pooling: options.auc_pooling,
        iou_a: sweeps.iou_a,
        grid: options.grid.clone(),
        default_tau: options.default_tau,
        metrics: seg_metrics(&pooled),
        calibration: calibration_table(maps, truths)?,
        per_image,
        gain_bins: gain_bins(&records, options.min_samples),
        roc: roc_curve(maps, truths, &thresholds)?,
    })
}
