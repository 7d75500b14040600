//! Confidence-map constructions over a pluggable [`Scorer`].
//!
//! * Pre-threshold: the scorer's raw output.
//! * MC dropout: fraction of stochastic draws that pass the threshold.
//! * TTA: mean of inverse-aligned scores over an augmentation catalog.
//!
//! Scoring may fan out over the rayon pool; the reductions are serial folds
//! in trial or catalog order with `f64` accumulators, so results do not
//! depend on the worker count.

mod external;
mod scorer;
mod synthetic;

pub use external::{
    serve_job, DoneStatus, ExternalScorer, JobManifest, JobSample, DONE_FILE, JOB_FILE,
};
pub use scorer::{
    BatchFailure, Capabilities, ChannelEchoScorer, ScoreRequest, Scorer, ScorerError,
};
pub use synthetic::{
    derive_seed, generate_synthetic_dataset, hashed_uniform, synthetic_score, SyntheticError,
    SyntheticScorer, SyntheticSpec,
};

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{apply_spec, AugmentError, Catalog};
use crate::grid::{GridError, Sample, ScoreMap};
use scorer::score_checked;

/// Requests handed to the scorer at once. Bounds peak memory; has no
/// effect on results.
const BATCH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "prethresh")]
    PreThreshold,
    #[serde(rename = "mcdropout")]
    McDropout,
    #[serde(rename = "tta")]
    Tta,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::PreThreshold, Method::McDropout, Method::Tta];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::PreThreshold => "prethresh",
            Method::McDropout => "mcdropout",
            Method::Tta => "tta",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method `{s}` (expected prethresh, mcdropout or tta)"))
    }
}

#[derive(Debug, Error)]
pub enum ConfmapError {
    #[error("{method} requires a {capability} scorer")]
    Capability {
        method: Method,
        capability: &'static str,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("sample must be square, got {height}x{width}")]
    NonSquare { height: usize, width: usize },
    #[error("catalog entry {index}: {source}")]
    Augment {
        index: usize,
        #[source]
        source: AugmentError,
    },
    #[error("{}{source}", entry.map(|i| format!("entry {i}: ")).unwrap_or_default())]
    Scorer {
        entry: Option<usize>,
        #[source]
        source: ScorerError,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
}

impl ConfmapError {
    fn from_batch(offset: usize, failure: BatchFailure) -> Self {
        ConfmapError::Scorer {
            entry: Some(offset + failure.index.unwrap_or(0)),
            source: failure.source,
        }
    }
}

/// A per-pixel confidence in `[0, 1]`, kept at `f64` so that exact
/// fractions such as `k / T` survive; [`ConfidenceMap::to_score_map`]
/// rounds to storage precision.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    method: Method,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ConfidenceMap {
    pub fn new(
        method: Method,
        height: usize,
        width: usize,
        values: Vec<f64>,
    ) -> Result<Self, GridError> {
        if height == 0 || width == 0 {
            return Err(GridError::EmptyDimensions { height, width });
        }
        if values.len() != height * width {
            return Err(GridError::LengthMismatch {
                height,
                width,
                channels: 1,
                len: values.len(),
            });
        }
        for (index, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(GridError::NonFinite { index });
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(GridError::OutOfRange {
                    index,
                    value: v as f32,
                });
            }
        }
        Ok(Self {
            method,
            height,
            width,
            values,
        })
    }

    pub fn from_score_map(method: Method, map: &ScoreMap) -> Self {
        Self {
            method,
            height: map.height(),
            width: map.width(),
            values: map.data().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_score_map(&self) -> ScoreMap {
        let data = self.values.iter().map(|&v| v as f32).collect();
        ScoreMap::new(self.height, self.width, data).expect("values already validated")
    }
}

/// The sample as the scorer will see it.
fn visible<'a>(scorer: &dyn Scorer, sample: &'a Sample) -> Cow<'a, Sample> {
    if sample.is_multi_image() && !scorer.capabilities().multi_image {
        Cow::Owned(sample.clone().without_pre())
    } else {
        Cow::Borrowed(sample)
    }
}

/// The scorer's output used directly as confidence.
pub fn pre_threshold_map(
    scorer: &dyn Scorer,
    sample: &Sample,
) -> Result<ConfidenceMap, ConfmapError> {
    if !scorer.capabilities().deterministic {
        return Err(ConfmapError::Capability {
            method: Method::PreThreshold,
            capability: "deterministic",
        });
    }
    let request = [ScoreRequest {
        sample: visible(scorer, sample),
        seed: None,
    }];
    let map = score_checked(scorer, &request)
        .map_err(|f| ConfmapError::Scorer {
            entry: None,
            source: f.source,
        })?
        .pop()
        .expect("one map per request");
    Ok(ConfidenceMap::from_score_map(Method::PreThreshold, &map))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McDropoutParams {
    pub trials: usize,
    pub tau: f64,
    /// Trial `i` draws with seed `base_seed + i` (wrapping).
    pub base_seed: u64,
}

impl Default for McDropoutParams {
    fn default() -> Self {
        Self {
            trials: 286,
            tau: 0.5,
            base_seed: 0,
        }
    }
}

impl McDropoutParams {
    pub fn validate(&self) -> Result<(), ConfmapError> {
        if self.trials == 0 {
            return Err(ConfmapError::InvalidParameter("trials must be >= 1".into()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(ConfmapError::InvalidParameter(format!(
                "tau must lie in (0, 1), got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Thresholds each stochastic draw at `tau` (`>= tau` is foreground) and
/// returns the per-pixel fraction of foreground votes.
pub fn mc_dropout_map(
    scorer: &dyn Scorer,
    sample: &Sample,
    params: &McDropoutParams,
) -> Result<ConfidenceMap, ConfmapError> {
    params.validate()?;
    if !scorer.capabilities().stochastic {
        return Err(ConfmapError::Capability {
            method: Method::McDropout,
            capability: "stochastic",
        });
    }
    let sample = visible(scorer, sample);
    let (height, width) = sample.dims();
    let mut votes = vec![0u32; height * width];
    for start in (0..params.trials).step_by(BATCH) {
        let end = (start + BATCH).min(params.trials);
        let requests: Vec<ScoreRequest<'_>> = (start..end)
            .map(|trial| ScoreRequest {
                sample: Cow::Borrowed(&*sample),
                seed: Some(params.base_seed.wrapping_add(trial as u64)),
            })
            .collect();
        let maps =
            score_checked(scorer, &requests).map_err(|f| ConfmapError::from_batch(start, f))?;
        for map in &maps {
            for (count, &v) in votes.iter_mut().zip(map.data()) {
                *count += u32::from(v as f64 >= params.tau);
            }
        }
    }
    let trials = params.trials as f64;
    let values = votes.into_iter().map(|k| k as f64 / trials).collect();
    Ok(ConfidenceMap::new(
        Method::McDropout,
        height,
        width,
        values,
    )?)
}

/// Mean over the catalog of inverse-aligned pre-threshold scores.
pub fn tta_map(
    scorer: &dyn Scorer,
    sample: &Sample,
    catalog: &Catalog,
) -> Result<ConfidenceMap, ConfmapError> {
    let (height, width) = sample.dims();
    if height != width {
        return Err(ConfmapError::NonSquare { height, width });
    }
    if !scorer.capabilities().deterministic {
        return Err(ConfmapError::Capability {
            method: Method::Tta,
            capability: "deterministic",
        });
    }
    let sample = visible(scorer, sample);
    let entries = catalog.entries();
    let mut acc = vec![0f64; height * width];
    for start in (0..entries.len()).step_by(BATCH) {
        let chunk = &entries[start..(start + BATCH).min(entries.len())];
        let augmented: Vec<Sample> = chunk
            .par_iter()
            .enumerate()
            .map(|(i, spec)| {
                apply_spec(spec, &sample).map_err(|source| ConfmapError::Augment {
                    index: start + i,
                    source,
                })
            })
            .collect::<Vec<_>>()
            .into_iter()
            .collect::<Result<_, _>>()?;
        let requests: Vec<ScoreRequest<'_>> = augmented
            .into_iter()
            .map(|s| ScoreRequest {
                sample: Cow::Owned(s),
                seed: None,
            })
            .collect();
        let maps =
            score_checked(scorer, &requests).map_err(|f| ConfmapError::from_batch(start, f))?;
        let aligned: Vec<ScoreMap> = maps
            .par_iter()
            .zip(chunk.par_iter())
            .enumerate()
            .map(|(i, (map, spec))| {
                spec.geometric()
                    .inverse()
                    .apply(map)
                    .map_err(|source| ConfmapError::Augment {
                        index: start + i,
                        source,
                    })
            })
            .collect::<Vec<_>>()
            .into_iter()
            .collect::<Result<_, _>>()?;
        for map in &aligned {
            for (a, &v) in acc.iter_mut().zip(map.data()) {
                *a += v as f64;
            }
        }
    }
    let n = entries.len() as f64;
    let values = acc.into_iter().map(|s| (s / n).min(1.0)).collect();
    Ok(ConfidenceMap::new(Method::Tta, height, width, values)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{build_catalog, AugmentationSpec, GeometricTransform, VisualTransform};
    use crate::grid::{BinaryMask, Image};

    fn sample(n: usize) -> Sample {
        let data: Vec<f32> = (0..n * n * 3)
            .map(|i| ((i * 37) % 101) as f32 / 100.0)
            .collect();
        let post = Image::new(n, n, 3, data).unwrap();
        let truth = BinaryMask::new(n, n, vec![0; n * n]).unwrap();
        Sample::new("t", post, None, truth).unwrap()
    }

    struct Constant(f32);

    impl Scorer for Constant {
        fn capabilities(&self) -> Capabilities {
            Capabilities {
                deterministic: true,
                stochastic: true,
                multi_image: true,
                concurrent: true,
            }
        }
        fn score(&self, s: &Sample) -> Result<ScoreMap, ScorerError> {
            let (h, w) = s.dims();
            Ok(ScoreMap::filled(h, w, self.0).unwrap())
        }
        fn sample_stochastic(&self, s: &Sample, _seed: u64) -> Result<ScoreMap, ScorerError> {
            self.score(s)
        }
    }

    /// Pixel 0 passes in seeds < k, all other pixels never pass.
    struct Votes(u64);

    impl Scorer for Votes {
        fn capabilities(&self) -> Capabilities {
            Capabilities {
                deterministic: false,
                stochastic: true,
                multi_image: false,
                concurrent: true,
            }
        }
        fn score(&self, _: &Sample) -> Result<ScoreMap, ScorerError> {
            Err(ScorerError::Unsupported("deterministic scoring"))
        }
        fn sample_stochastic(&self, s: &Sample, seed: u64) -> Result<ScoreMap, ScorerError> {
            let (h, w) = s.dims();
            let mut data = vec![0.2f32; h * w];
            if seed < self.0 {
                data[0] = 0.5;
            }
            Ok(ScoreMap::new(h, w, data).unwrap())
        }
    }

    struct WrongSize;

    impl Scorer for WrongSize {
        fn capabilities(&self) -> Capabilities {
            Constant(0.0).capabilities()
        }
        fn score(&self, _: &Sample) -> Result<ScoreMap, ScorerError> {
            Ok(ScoreMap::filled(2, 2, 0.0).unwrap())
        }
    }

    #[test]
    fn pre_threshold_passes_scores_through() {
        let s = sample(4);
        let map = pre_threshold_map(&Constant(0.5), &s).unwrap();
        assert_eq!(map.method(), Method::PreThreshold);
        assert!(map.values().iter().all(|&v| v == 0.5));
        assert_eq!(map, pre_threshold_map(&Constant(0.5), &s).unwrap());
    }

    #[test]
    fn mc_dropout_constant_high_gives_ones() {
        let map = mc_dropout_map(&Constant(0.9), &sample(3), &McDropoutParams::default()).unwrap();
        assert!(map.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mc_dropout_counts_votes() {
        for (k, trials) in [(0, 5), (3, 7), (7, 7), (40, 70)] {
            let params = McDropoutParams {
                trials,
                tau: 0.5,
                base_seed: 0,
            };
            let map = mc_dropout_map(&Votes(k), &sample(3), &params).unwrap();
            assert_eq!(map.values()[0], k.min(trials as u64) as f64 / trials as f64);
            assert_eq!(map.values()[1], 0.0);
        }
    }

    #[test]
    fn mc_dropout_validates() {
        let s = sample(2);
        let bad = McDropoutParams {
            trials: 0,
            ..Default::default()
        };
        assert!(matches!(
            mc_dropout_map(&Constant(0.1), &s, &bad),
            Err(ConfmapError::InvalidParameter(_))
        ));
        let bad = McDropoutParams {
            tau: 1.0,
            ..Default::default()
        };
        assert!(matches!(
            mc_dropout_map(&Constant(0.1), &s, &bad),
            Err(ConfmapError::InvalidParameter(_))
        ));
        assert!(matches!(
            mc_dropout_map(&ChannelEchoScorer { channel: 0 }, &s, &Default::default()),
            Err(ConfmapError::Capability { .. })
        ));
    }

    #[test]
    fn tta_of_constant_scorer_is_constant() {
        let s = sample(8);
        let map = tta_map(&Constant(0.3), &s, &build_catalog()).unwrap();
        for &v in map.values() {
            assert!((v - 0.3).abs() < 1e-6);
        }
    }

    #[test]
    fn tta_flip_with_pointwise_scorer_recovers_plain_score() {
        let s = sample(6);
        let catalog = Catalog::new(vec![AugmentationSpec::new(
            GeometricTransform::HorizontalFlip,
            VisualTransform::Identity,
        )
        .unwrap()])
        .unwrap();
        let echo = ChannelEchoScorer { channel: 0 };
        let tta = tta_map(&echo, &s, &catalog).unwrap();
        let pre = pre_threshold_map(&echo, &s).unwrap();
        assert_eq!(tta.values(), pre.values());
    }

    #[test]
    fn tta_rejects_non_square_and_reports_entry() {
        let post = Image::new(2, 3, 1, vec![0.0; 6]).unwrap();
        let truth = BinaryMask::new(2, 3, vec![0; 6]).unwrap();
        let s = Sample::new("r", post, None, truth).unwrap();
        assert!(matches!(
            tta_map(&Constant(0.1), &s, &build_catalog()),
            Err(ConfmapError::NonSquare { .. })
        ));
        let err = tta_map(&WrongSize, &sample(4), &build_catalog()).unwrap_err();
        assert!(matches!(
            err,
            ConfmapError::Scorer {
                entry: Some(0),
                source: ScorerError::DimensionMismatch { .. }
            }
        ));
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("dropout".parse::<Method>().is_err());
    }
}
