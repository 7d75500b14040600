use std::borrow::Cow;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::grid::{RasterIoError, Sample, ScoreMap};

/// What a scorer can do. `concurrent == false` forces serialized calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Capabilities {
    pub deterministic: bool,
    pub stochastic: bool,
    /// Whether the scorer reads the pre-event image. Scorers without it
    /// are handed post-event images only.
    pub multi_image: bool,
    pub concurrent: bool,
}

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("scorer does not support {0}")]
    Unsupported(&'static str),
    #[error("sample `{id}`: scorer returned {found:?}, expected {expected:?}")]
    DimensionMismatch {
        id: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("failed to launch `{}`: {source}", program.display())]
    Launch {
        program: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("`{}` exited with {status}{}", program.display(), detail.as_deref().map(|d| format!(": {d}")).unwrap_or_default())]
    ExitStatus {
        program: PathBuf,
        status: String,
        detail: Option<String>,
    },
    #[error("scorer reported an error: {0}")]
    Reported(String),
    #[error("sample `{id}`: missing output {}", path.display())]
    MissingOutput { id: String, path: PathBuf },
    #[error("sample `{id}`: invalid output: {source}")]
    InvalidOutput {
        id: String,
        #[source]
        source: RasterIoError,
    },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Failed(String),
}

/// A failed batch; `index` names the request when the failure is
/// attributable to one.
#[derive(Debug, Error)]
#[error("{}{source}", index.map(|i| format!("request {i}: ")).unwrap_or_default())]
pub struct BatchFailure {
    pub index: Option<usize>,
    #[source]
    pub source: ScorerError,
}

/// One unit of scoring work. `seed: None` asks for the deterministic
/// score, `Some(seed)` for a stochastic draw.
#[derive(Debug, Clone)]
pub struct ScoreRequest<'a> {
    pub sample: Cow<'a, Sample>,
    pub seed: Option<u64>,
}

/// A segmentation model seen from the outside.
///
/// Implementations must be reproducible: equal `(sample, seed)` yield
/// bit-equal maps, and output dimensions equal the sample's.
pub trait Scorer: Send + Sync {
    fn capabilities(&self) -> Capabilities;

    fn score(&self, sample: &Sample) -> Result<ScoreMap, ScorerError>;

    fn sample_stochastic(&self, _sample: &Sample, _seed: u64) -> Result<ScoreMap, ScorerError> {
        Err(ScorerError::Unsupported("stochastic sampling"))
    }

    /// Scores many requests, preserving order. The default fans out over
    /// the current rayon pool when the scorer is concurrent.
    fn score_batch(&self, requests: &[ScoreRequest<'_>]) -> Result<Vec<ScoreMap>, BatchFailure> {
        let run = |req: &ScoreRequest<'_>| match req.seed {
            None => self.score(&req.sample),
            Some(seed) => self.sample_stochastic(&req.sample, seed),
        };
        let results: Vec<Result<ScoreMap, ScorerError>> = if self.capabilities().concurrent {
            requests.par_iter().map(run).collect()
        } else {
            requests.iter().map(run).collect()
        };
        results
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                r.map_err(|source| BatchFailure {
                    index: Some(i),
                    source,
                })
            })
            .collect()
    }
}

/// Runs a batch and checks every output against its request's dimensions.
pub(crate) fn score_checked(
    scorer: &dyn Scorer,
    requests: &[ScoreRequest<'_>],
) -> Result<Vec<ScoreMap>, BatchFailure> {
    let maps = scorer.score_batch(requests)?;
    if maps.len() != requests.len() {
        return Err(BatchFailure {
            index: None,
            source: ScorerError::Protocol(format!(
                "{} maps returned for {} requests",
                maps.len(),
                requests.len()
            )),
        });
    }
    for (i, (map, req)) in maps.iter().zip(requests).enumerate() {
        if map.dims() != req.sample.dims() {
            return Err(BatchFailure {
                index: Some(i),
                source: ScorerError::DimensionMismatch {
                    id: req.sample.id().to_owned(),
                    expected: req.sample.dims(),
                    found: map.dims(),
                },
            });
        }
    }
    Ok(maps)
}

/// Returns one channel of the post image unchanged. Useful for protocol
/// checks, since its output is known exactly.
#[derive(Debug, Clone, Copy)]
pub struct ChannelEchoScorer {
    pub channel: usize,
}

impl Scorer for ChannelEchoScorer {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            deterministic: true,
            stochastic: false,
            multi_image: true,
            concurrent: true,
        }
    }

    fn score(&self, sample: &Sample) -> Result<ScoreMap, ScorerError> {
        if self.channel >= sample.post().channels() {
            return Err(ScorerError::Failed(format!(
                "channel {} out of range",
                self.channel
            )));
        }
        Ok(sample.post().plane(self.channel))
    }
}
