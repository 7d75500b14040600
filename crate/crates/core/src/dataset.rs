//! Datasets on disk: a `manifest.json` next to per-channel PFM images and
//! PGM truth masks.
//!
//! ```json
//! {"task": "multi", "samples": [{"id": "s0000",
//!   "post": ["s0000/post.r.pfm", "s0000/post.g.pfm", "s0000/post.b.pfm"],
//!   "pre": ["s0000/pre.r.pfm", "s0000/pre.g.pfm", "s0000/pre.b.pfm"],
//!   "truth": "s0000/truth.pgm"}]}
//! ```
//!
//! `pre` is `null` for the single-image task. Relative paths resolve
//! against the manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{
    read_pfm, read_pgm, validate_id, write_pfm, write_pgm, GridError, Image, RasterIoError, Sample,
    Task,
};

pub const MANIFEST_FILE: &str = "manifest.json";
const CHANNEL_NAMES: [&str; 3] = ["r", "g", "b"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("malformed manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid manifest: {0}")]
    Invalid(String),
    #[error(transparent)]
    Raster(#[from] RasterIoError),
    #[error("sample {id}: {source}")]
    Grid {
        id: String,
        #[source]
        source: GridError,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSample {
    pub id: String,
    pub post: Vec<String>,
    pub pre: Option<Vec<String>>,
    pub truth: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub task: Task,
    pub samples: Vec<ManifestSample>,
}

impl DatasetManifest {
    pub fn parse(bytes: &[u8]) -> Result<Self, DatasetError> {
        let manifest: DatasetManifest = serde_json::from_slice(bytes)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        Self::parse(&fs::read(path).map_err(io_error(path))?)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        text
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let invalid = |msg: String| Err(DatasetError::Invalid(msg));
        if self.samples.is_empty() {
            return invalid("no samples".into());
        }
        let mut seen = HashSet::new();
        for s in &self.samples {
            validate_id(&s.id).map_err(DatasetError::Invalid)?;
            if !seen.insert(s.id.as_str()) {
                return invalid(format!("duplicate id {:?}", s.id));
            }
            for list in std::iter::once(&s.post).chain(s.pre.iter()) {
                if list.len() != 1 && list.len() != 3 {
                    return invalid(format!(
                        "sample {}: expected 1 or 3 channel files, got {}",
                        s.id,
                        list.len()
                    ));
                }
            }
            if s.post
                .iter()
                .chain(s.pre.iter().flatten())
                .any(String::is_empty)
                || s.truth.is_empty()
            {
                return invalid(format!("sample {}: empty path", s.id));
            }
            match (self.task, &s.pre) {
                (Task::Single, Some(_)) => {
                    return invalid(format!(
                        "sample {}: pre-event image in a single-image task",
                        s.id
                    ))
                }
                (Task::Multi, None) => {
                    return invalid(format!(
                        "sample {}: multi-image task needs a pre-event image",
                        s.id
                    ))
                }
                (Task::Multi, Some(pre)) if pre.len() != s.post.len() => {
                    return invalid(format!(
                        "sample {}: pre and post channel counts differ",
                        s.id
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.samples.iter().map(|s| s.id.as_str())
    }

    /// Reads every sample, resolving paths against `base`.
    pub fn load(&self, base: &Path) -> Result<Vec<Sample>, DatasetError> {
        self.samples.iter().map(|s| load_sample(s, base)).collect()
    }
}

fn read_planes(base: &Path, paths: &[String], id: &str) -> Result<Image, DatasetError> {
    let planes = paths
        .iter()
        .map(|p| read_pfm(base.join(p)))
        .collect::<Result<Vec<_>, _>>()?;
    Image::from_planes(&planes).map_err(|source| DatasetError::Grid {
        id: id.to_owned(),
        source,
    })
}

fn load_sample(entry: &ManifestSample, base: &Path) -> Result<Sample, DatasetError> {
    let post = read_planes(base, &entry.post, &entry.id)?;
    let pre = entry
        .pre
        .as_deref()
        .map(|paths| read_planes(base, paths, &entry.id))
        .transpose()?;
    let truth = read_pgm(base.join(&entry.truth))?;
    Sample::new(entry.id.clone(), post, pre, truth).map_err(|source| DatasetError::Grid {
        id: entry.id.clone(),
        source,
    })
}

/// Reads `manifest.json` (or the manifest at `path`) and its samples.
pub fn load_dataset(path: &Path) -> Result<(DatasetManifest, Vec<Sample>), DatasetError> {
    let manifest = DatasetManifest::read(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let samples = manifest.load(base)?;
    Ok((manifest, samples))
}

fn write_planes(
    dir: &Path,
    rel_dir: &str,
    prefix: &str,
    img: &Image,
) -> Result<Vec<String>, DatasetError> {
    let planes = img.planes();
    let names: Vec<String> = if planes.len() == 1 {
        vec![format!("{rel_dir}/{prefix}.pfm")]
    } else {
        CHANNEL_NAMES
            .iter()
            .map(|c| format!("{rel_dir}/{prefix}.{c}.pfm"))
            .collect()
    };
    for (plane, rel) in planes.iter().zip(&names) {
        write_pfm(plane, dir.join(rel))?;
    }
    Ok(names)
}

/// Writes samples under `dir/<id>/` and `dir/manifest.json`. Pre-event
/// images are kept only for the multi-image task.
pub fn write_dataset(
    samples: &[Sample],
    task: Task,
    dir: &Path,
) -> Result<DatasetManifest, DatasetError> {
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        validate_id(s.id()).map_err(DatasetError::Invalid)?;
        let sample_dir = dir.join(s.id());
        fs::create_dir_all(&sample_dir).map_err(io_error(&sample_dir))?;
        let post = write_planes(dir, s.id(), "post", s.post())?;
        let pre = match (task, s.pre()) {
            (Task::Multi, Some(img)) => Some(write_planes(dir, s.id(), "pre", img)?),
            (Task::Multi, None) => {
                return Err(DatasetError::Invalid(format!(
                    "sample {}: multi-image task needs a pre-event image",
                    s.id()
                )))
            }
            (Task::Single, _) => None,
        };
        let truth = format!("{}/truth.pgm", s.id());
        write_pgm(s.truth(), dir.join(&truth))?;
        entries.push(ManifestSample {
            id: s.id().to_owned(),
            post,
            pre,
            truth,
        });
    }
    let manifest = DatasetManifest {
        task,
        samples: entries,
    };
    manifest.validate()?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json()).map_err(io_error(&path))?;
    Ok(manifest)
}
