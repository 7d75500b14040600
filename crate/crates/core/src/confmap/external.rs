//! File-based protocol for scorers living in another process.
//!
//! A job is a directory:
//!
//! ```text
//! job.json                 {"task": "single"|"multi", "samples": [...]}
//! in/<id>/post.{r,g,b}.pfm one grayscale PFM per channel
//! in/<id>/pre.{r,g,b}.pfm  multi-image task only
//! out/<id>.pfm             written by the scorer
//! done.json                {"status": "ok"} or {"status": "error", "message": ...}
//! ```
//!
//! Each sample entry is `{"id", "sample_id", "post_pfm": [paths],
//! "pre_pfm": [paths] | null, "seed": integer | null}` with paths relative to
//! the job directory. `id` is unique within the job and names the output
//! file; `sample_id` is the dataset id, repeated when one sample is scored
//! under several seeds. The
//! executable receives the job directory as its only argument and must exit
//! with status 0 on success.

use std::path::{Component, Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::scorer::{BatchFailure, Capabilities, ScoreRequest, Scorer, ScorerError};
use crate::grid::{read_pfm, validate_id, write_pfm, BinaryMask, Image, Sample, ScoreMap, Task};

pub const JOB_FILE: &str = "job.json";
pub const DONE_FILE: &str = "done.json";
const IN_DIR: &str = "in";
const OUT_DIR: &str = "out";
const CHANNEL_NAMES: [&str; 3] = ["r", "g", "b"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSample {
    pub id: String,
    pub sample_id: String,
    pub post_pfm: Vec<String>,
    pub pre_pfm: Option<Vec<String>>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobManifest {
    pub task: Task,
    pub samples: Vec<JobSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum DoneStatus {
    Ok,
    Error { message: String },
}

impl DoneStatus {
    pub fn parse(bytes: &[u8]) -> Result<Self, ScorerError> {
        serde_json::from_slice(bytes)
            .map_err(|e| ScorerError::Protocol(format!("malformed {DONE_FILE}: {e}")))
    }
}

fn check_relative(path: &str) -> Result<(), ScorerError> {
    let p = Path::new(path);
    let ok = !path.is_empty()
        && p.components()
            .all(|c| matches!(c, Component::Normal(_) | Component::CurDir));
    if ok {
        Ok(())
    } else {
        Err(ScorerError::Protocol(format!(
            "path {path:?} must be relative to the job directory"
        )))
    }
}

impl JobManifest {
    /// Parses and validates a `job.json` payload.
    pub fn parse(bytes: &[u8]) -> Result<Self, ScorerError> {
        let job: JobManifest = serde_json::from_slice(bytes)
            .map_err(|e| ScorerError::Protocol(format!("malformed {JOB_FILE}: {e}")))?;
        job.validate()?;
        Ok(job)
    }

    pub fn validate(&self) -> Result<(), ScorerError> {
        let mut seen = std::collections::HashSet::new();
        for s in &self.samples {
            validate_id(&s.id).map_err(ScorerError::Protocol)?;
            if s.sample_id.is_empty() {
                return Err(ScorerError::Protocol(format!(
                    "sample {:?}: empty sample_id",
                    s.id
                )));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(ScorerError::Protocol(format!("duplicate id {:?}", s.id)));
            }
            for list in std::iter::once(&s.post_pfm).chain(s.pre_pfm.iter()) {
                if list.len() != 1 && list.len() != 3 {
                    return Err(ScorerError::Protocol(format!(
                        "sample {:?}: expected 1 or 3 channel files, got {}",
                        s.id,
                        list.len()
                    )));
                }
                for path in list {
                    check_relative(path)?;
                }
            }
            match (self.task, s.pre_pfm.is_some()) {
                (Task::Single, true) => {
                    return Err(ScorerError::Protocol(format!(
                        "sample {:?}: pre-event image in a single-image job",
                        s.id
                    )))
                }
                (Task::Multi, false) => {
                    return Err(ScorerError::Protocol(format!(
                        "sample {:?}: missing pre-event image in a multi-image job",
                        s.id
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ScorerError + '_ {
    move |source| ScorerError::Io {
        path: path.to_owned(),
        source,
    }
}

fn write_planes(
    job_dir: &Path,
    rel_dir: &str,
    prefix: &str,
    img: &Image,
) -> Result<Vec<String>, ScorerError> {
    img.planes()
        .iter()
        .zip(CHANNEL_NAMES)
        .map(|(plane, channel)| {
            let rel = format!("{rel_dir}/{prefix}.{channel}.pfm");
            write_pfm(plane, job_dir.join(&rel)).map_err(|e| ScorerError::Failed(e.to_string()))?;
            Ok(rel)
        })
        .collect()
}

fn read_planes(job_dir: &Path, paths: &[String]) -> Result<Image, ScorerError> {
    let planes = paths
        .iter()
        .map(|rel| read_pfm(job_dir.join(rel)).map_err(|e| ScorerError::Failed(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    Image::from_planes(&planes).map_err(|e| ScorerError::Failed(e.to_string()))
}

/// Scorer backed by an executable speaking the job-directory protocol.
///
/// Calls are serialized: one job runs at a time per instance.
#[derive(Debug)]
pub struct ExternalScorer {
    program: PathBuf,
    work_root: Option<PathBuf>,
    batch_size: usize,
    keep_jobs: bool,
    lock: Mutex<()>,
}

impl ExternalScorer {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        Self {
            program: program.into(),
            work_root: None,
            batch_size: 64,
            keep_jobs: false,
            lock: Mutex::new(()),
        }
    }

    /// Directory in which job directories are created (default: system temp).
    pub fn with_work_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.work_root = Some(root.into());
        self
    }

    /// Maximum samples per job.
    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    /// Leave job directories on disk after completion, for debugging.
    pub fn keep_jobs(mut self, keep: bool) -> Self {
        self.keep_jobs = keep;
        self
    }

    pub fn program(&self) -> &Path {
        &self.program
    }

    fn run_job(&self, requests: &[ScoreRequest<'_>]) -> Result<Vec<ScoreMap>, BatchFailure> {
        let whole = |source| BatchFailure {
            index: None,
            source,
        };
        let mut builder = tempfile::Builder::new();
        builder.prefix("segconf-job-");
        let tmp = match &self.work_root {
            Some(root) => builder.tempdir_in(root),
            None => builder.tempdir(),
        }
        .map_err(|source| {
            whole(ScorerError::Io {
                path: self.work_root.clone().unwrap_or_else(std::env::temp_dir),
                source,
            })
        })?;
        let job_dir = tmp.path().to_owned();

        let multi = requests.first().is_some_and(|r| r.sample.is_multi_image());
        let mut samples = Vec::with_capacity(requests.len());
        for (index, req) in requests.iter().enumerate() {
            let at = |source| BatchFailure {
                index: Some(index),
                source,
            };
            if req.sample.is_multi_image() != multi {
                return Err(at(ScorerError::Protocol(
                    "single- and multi-image samples in one job".into(),
                )));
            }
            let id = job_sample_id(index, req.sample.id());
            let rel_dir = format!("{IN_DIR}/{id}");
            let dir = job_dir.join(&rel_dir);
            std::fs::create_dir_all(&dir)
                .map_err(io_err(&dir))
                .map_err(at)?;
            let post_pfm =
                write_planes(&job_dir, &rel_dir, "post", req.sample.post()).map_err(at)?;
            let pre_pfm = req
                .sample
                .pre()
                .map(|img| write_planes(&job_dir, &rel_dir, "pre", img))
                .transpose()
                .map_err(at)?;
            samples.push(JobSample {
                id,
                sample_id: req.sample.id().to_owned(),
                post_pfm,
                pre_pfm,
                seed: req.seed,
            });
        }
        let job = JobManifest {
            task: if multi { Task::Multi } else { Task::Single },
            samples,
        };
        let job_path = job_dir.join(JOB_FILE);
        let text = serde_json::to_string_pretty(&job).expect("job serializes");
        std::fs::write(&job_path, text)
            .map_err(io_err(&job_path))
            .map_err(whole)?;
        let out_dir = job_dir.join(OUT_DIR);
        std::fs::create_dir_all(&out_dir)
            .map_err(io_err(&out_dir))
            .map_err(whole)?;

        let output = Command::new(&self.program)
            .arg(&job_dir)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .output()
            .map_err(|source| {
                whole(ScorerError::Launch {
                    program: self.program.clone(),
                    source,
                })
            })?;
        let stderr = String::from_utf8_lossy(&output.stderr).trim().to_owned();

        let done_path = job_dir.join(DONE_FILE);
        let done = match std::fs::read(&done_path) {
            Ok(bytes) => Some(DoneStatus::parse(&bytes).map_err(whole)?),
            Err(_) => None,
        };
        if let Some(DoneStatus::Error { message }) = done {
            return Err(whole(ScorerError::Reported(message)));
        }
        if !output.status.success() {
            return Err(whole(ScorerError::ExitStatus {
                program: self.program.clone(),
                status: output.status.to_string(),
                detail: (!stderr.is_empty()).then_some(stderr),
            }));
        }
        if done.is_none() {
            return Err(whole(ScorerError::Protocol(format!("{DONE_FILE} missing"))));
        }

        let mut maps = Vec::with_capacity(requests.len());
        for (index, (req, entry)) in requests.iter().zip(&job.samples).enumerate() {
            let at = |source| BatchFailure {
                index: Some(index),
                source,
            };
            let path = out_dir.join(format!("{}.pfm", entry.id));
            if !path.is_file() {
                return Err(at(ScorerError::MissingOutput {
                    id: entry.sample_id.clone(),
                    path,
                }));
            }
            let map = read_pfm(&path).map_err(|source| {
                at(ScorerError::InvalidOutput {
                    id: entry.sample_id.clone(),
                    source,
                })
            })?;
            if map.dims() != req.sample.dims() {
                return Err(at(ScorerError::DimensionMismatch {
                    id: entry.sample_id.clone(),
                    expected: req.sample.dims(),
                    found: map.dims(),
                }));
            }
            maps.push(map);
        }
        if self.keep_jobs {
            let _ = tmp.keep();
        }
        Ok(maps)
    }
}

/// Job-local id: request position plus a file-name-safe form of the
/// sample id, so entries stay unique and readable.
fn job_sample_id(index: usize, id: &str) -> String {
    let clean: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .take(64)
        .collect();
    format!("{index:05}-{clean}")
}

impl Scorer for ExternalScorer {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            deterministic: true,
            stochastic: true,
            multi_image: true,
            concurrent: false,
        }
    }

    fn score(&self, sample: &Sample) -> Result<ScoreMap, ScorerError> {
        let req = [ScoreRequest {
            sample: std::borrow::Cow::Borrowed(sample),
            seed: None,
        }];
        self.score_batch(&req)
            .map(|mut v| v.remove(0))
            .map_err(|f| f.source)
    }

    fn sample_stochastic(&self, sample: &Sample, seed: u64) -> Result<ScoreMap, ScorerError> {
        let req = [ScoreRequest {
            sample: std::borrow::Cow::Borrowed(sample),
            seed: Some(seed),
        }];
        self.score_batch(&req)
            .map(|mut v| v.remove(0))
            .map_err(|f| f.source)
    }

    fn score_batch(&self, requests: &[ScoreRequest<'_>]) -> Result<Vec<ScoreMap>, BatchFailure> {
        let _guard = self.lock.lock().unwrap_or_else(|p| p.into_inner());
        let mut maps = Vec::with_capacity(requests.len());
        for (chunk_index, chunk) in requests.chunks(self.batch_size).enumerate() {
            let offset = chunk_index * self.batch_size;
            let part = self.run_job(chunk).map_err(|f| BatchFailure {
                index: f.index.map(|i| i + offset),
                source: f.source,
            })?;
            maps.extend(part);
        }
        Ok(maps)
    }
}

fn serve_inner(job_dir: &Path, scorer: &dyn Scorer) -> Result<usize, ScorerError> {
    let job_path = job_dir.join(JOB_FILE);
    let bytes = std::fs::read(&job_path).map_err(io_err(&job_path))?;
    let job = JobManifest::parse(&bytes)?;
    let out_dir = job_dir.join(OUT_DIR);
    std::fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    for entry in &job.samples {
        let post = read_planes(job_dir, &entry.post_pfm)?;
        let pre = entry
            .pre_pfm
            .as_deref()
            .map(|paths| read_planes(job_dir, paths))
            .transpose()?;
        let (h, w) = post.dims();
        // The protocol carries no labels; scorers never look at truth.
        let truth = BinaryMask::new(h, w, vec![0; h * w]).expect("valid dims");
        let sample = Sample::new(entry.sample_id.clone(), post, pre, truth)
            .map_err(|e| ScorerError::Protocol(format!("sample {:?}: {e}", entry.id)))?;
        let map = match entry.seed {
            None => scorer.score(&sample)?,
            Some(seed) => scorer.sample_stochastic(&sample, seed)?,
        };
        let path = out_dir.join(format!("{}.pfm", entry.id));
        write_pfm(&map, &path).map_err(|e| ScorerError::Failed(e.to_string()))?;
    }
    Ok(job.samples.len())
}

/// Responder side of the protocol: scores every sample of the job in
/// `job_dir` with `scorer` and writes `out/` and `done.json`.
///
pub fn serve_job(job_dir: &Path, scorer: &dyn Scorer) -> Result<usize, ScorerError> {
    let result = serve_inner(job_dir, scorer);
    let status = match &result {
        Ok(_) => DoneStatus::Ok,
        Err(e) => DoneStatus::Error {
            message: e.to_string(),
        },
    };
    let done_path = job_dir.join(DONE_FILE);
    let text = serde_json::to_string(&status).expect("status serializes");
    std::fs::write(&done_path, text).map_err(io_err(&done_path))?;
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_job() {
        let text = br#"{
            "task": "multi",
            "samples": [{
                "id": "00000-s0000",
                "sample_id": "s0000",
                "post_pfm": ["in/a/post.r.pfm", "in/a/post.g.pfm", "in/a/post.b.pfm"],
                "pre_pfm": ["in/a/pre.r.pfm", "in/a/pre.g.pfm", "in/a/pre.b.pfm"],
                "seed": 12
            }]
        }"#;
        let job = JobManifest::parse(text).unwrap();
        assert_eq!(job.task, Task::Multi);
        assert_eq!(job.samples[0].seed, Some(12));
    }

    #[test]
    fn rejects_unsafe_jobs() {
        for bad in [
            &br#"{"task":"single","samples":[{"id":"../x","sample_id":"x","post_pfm":["a.pfm"],"pre_pfm":null,"seed":null}]}"#[..],
            br#"{"task":"single","samples":[{"id":"x","sample_id":"x","post_pfm":["/etc/passwd"],"pre_pfm":null,"seed":null}]}"#,
            br#"{"task":"single","samples":[{"id":"x","sample_id":"x","post_pfm":["../a.pfm"],"pre_pfm":null,"seed":null}]}"#,
            br#"{"task":"single","samples":[{"id":"x","sample_id":"x","post_pfm":["a","b"],"pre_pfm":null,"seed":null}]}"#,
            br#"{"task":"single","samples":[{"id":"x","sample_id":"x","post_pfm":["a"],"pre_pfm":["b"],"seed":null}]}"#,
            br#"{"task":"multi","samples":[{"id":"x","sample_id":"x","post_pfm":["a"],"pre_pfm":null,"seed":null}]}"#,
            br#"{"task":"single","samples":[{"id":"x","sample_id":"x","post_pfm":["a"],"pre_pfm":null,"seed":null},{"id":"x","sample_id":"x","post_pfm":["a"],"pre_pfm":null,"seed":null}]}"#,
            br#"{"task":"single","samples":[],"extra":1}"#,
            br#"{"task":"double","samples":[]}"#,
        ] {
            assert!(
                matches!(JobManifest::parse(bad), Err(ScorerError::Protocol(_))),
                "{}",
                String::from_utf8_lossy(bad)
            );
        }
    }

    #[test]
    fn done_status_forms() {
        assert_eq!(
            DoneStatus::parse(br#"{"status":"ok"}"#).unwrap(),
            DoneStatus::Ok
        );
        assert_eq!(
            DoneStatus::parse(br#"{"status":"error","message":"boom"}"#).unwrap(),
            DoneStatus::Error {
                message: "boom".into()
            }
        );
        assert!(DoneStatus::parse(br#"{"status":"maybe"}"#).is_err());
        assert_eq!(
            serde_json::to_string(&DoneStatus::Ok).unwrap(),
            r#"{"status":"ok"}"#
        );
    }

    #[test]
    fn job_ids_are_file_safe() {
        assert_eq!(job_sample_id(3, "s0001"), "00003-s0001");
        assert_eq!(job_sample_id(0, "a/b c"), "00000-a_b_c");
        assert!(validate_id(&job_sample_id(12, "../../x")).is_ok());
    }

    #[test]
    fn serve_job_reports_missing_input() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join(JOB_FILE),
            br#"{"task":"single","samples":[{"id":"a","sample_id":"a","post_pfm":["in/a/post.r.pfm"],"pre_pfm":null,"seed":null}]}"#,
        )
        .unwrap();
        let err = serve_job(
            dir.path(),
            &crate::confmap::ChannelEchoScorer { channel: 0 },
        )
        .unwrap_err();
        assert!(err.to_string().contains("post.r.pfm"), "{err}");
        let done = DoneStatus::parse(&std::fs::read(dir.path().join(DONE_FILE)).unwrap()).unwrap();
        match done {
            DoneStatus::Error { message } => assert!(message.contains("post.r.pfm")),
            DoneStatus::Ok => panic!("expected error status"),
        }
    }

    #[test]
    fn serve_job_empty_sample_list() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join(JOB_FILE),
            br#"{"task":"single","samples":[]}"#,
        )
        .unwrap();
        assert_eq!(
            serve_job(dir.path(), &crate::confmap::SyntheticScorer).unwrap(),
            0
        );
        assert_eq!(
            std::fs::read_to_string(dir.path().join(DONE_FILE)).unwrap(),
            r#"{"status":"ok"}"#
        );
        assert_eq!(
            std::fs::read_dir(dir.path().join(OUT_DIR)).unwrap().count(),
            0
        );
    }

    #[test]
    fn launch_failure_is_distinct() {
        let scorer = ExternalScorer::new("/nonexistent/scorer-binary");
        let s = crate::confmap::generate_synthetic_dataset(&crate::confmap::SyntheticSpec::new(
            1, 1, 16,
        ))
        .unwrap()
        .remove(0);
        assert!(matches!(scorer.score(&s), Err(ScorerError::Launch { .. })));
    }
}
