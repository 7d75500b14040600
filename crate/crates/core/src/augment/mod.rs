//! Test-time augmentation algebra.
//!
//! Six geometric symmetries with exact inverses, forty photometric
//! perturbations, and the canonical 286-entry catalog combining them.

mod geometric;
mod visual;

pub use geometric::{apply_geometric, invert_geometric, GeometricTransform};
pub(crate) use visual::reflect;
pub use visual::{brightness, gaussian_blur, gaussian_kernel, linear_contrast, VisualTransform};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::{GridError, Sample};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AugmentError {
    #[error("{transform:?} requires a square grid, got {height}x{width}")]
    NonSquare {
        transform: GeometricTransform,
        height: usize,
        width: usize,
    },
    #[error("blur sigma must be positive, got {0}")]
    InvalidSigma(f64),
    #[error("contrast alpha must be positive, got {0}")]
    InvalidAlpha(f64),
    #[error("brightness beta must lie in [-1, 1], got {0}")]
    InvalidBeta(f64),
    #[error("an augmentation must change something: both parts are identity")]
    BothIdentity,
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("duplicate catalog entry at position {0}")]
    DuplicateEntry(usize),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// One catalog member: a geometric step followed by a visual step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct AugmentationSpec {
    geometric: GeometricTransform,
    visual: VisualTransform,
}

#[derive(Deserialize)]
struct RawSpec {
    geometric: GeometricTransform,
    visual: VisualTransform,
}

impl TryFrom<RawSpec> for AugmentationSpec {
    type Error = AugmentError;
    fn try_from(raw: RawSpec) -> Result<Self, Self::Error> {
        AugmentationSpec::new(raw.geometric, raw.visual)
    }
}

impl AugmentationSpec {
    pub fn new(
        geometric: GeometricTransform,
        visual: VisualTransform,
    ) -> Result<Self, AugmentError> {
        if geometric.is_identity() && visual.is_identity() {
            return Err(AugmentError::BothIdentity);
        }
        visual.validate()?;
        Ok(Self { geometric, visual })
    }

    pub fn geometric(&self) -> GeometricTransform {
        self.geometric
    }

    pub fn visual(&self) -> VisualTransform {
        self.visual
    }
}

/// Geometric step first, then visual, on the post image and (if present)
/// the pre image. The truth mask is left in the original frame.
pub fn apply_spec(spec: &AugmentationSpec, sample: &Sample) -> Result<Sample, AugmentError> {
    let transform = |img: &crate::grid::Image| -> Result<_, AugmentError> {
        let moved = spec.geometric.apply(img)?;
        spec.visual.apply(&moved)
    };
    let post = transform(sample.post())?;
    let pre = sample.pre().map(transform).transpose()?;
    Ok(sample.with_images(post, pre)?)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i + 1 == n {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Blur sigmas, contrast alphas and brightness offsets, in catalog order.
pub fn visual_grid() -> Vec<VisualTransform> {
    let blurs = linspace(0.5, 3.0, 20)
        .into_iter()
        .map(|sigma| VisualTransform::GaussianBlur { sigma });
    let contrasts = linspace(0.7, 1.3, 10)
        .into_iter()
        .map(|alpha| VisualTransform::LinearContrast { alpha });
    let offsets = linspace(-0.2, 0.2, 10)
        .into_iter()
        .map(|beta| VisualTransform::Brightness { beta });
    blurs.chain(contrasts).chain(offsets).collect()
}

/// Ordered, duplicate-free list of augmentations.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Catalog {
    entries: Vec<AugmentationSpec>,
}

impl Catalog {
    pub fn new(entries: Vec<AugmentationSpec>) -> Result<Self, AugmentError> {
        if entries.is_empty() {
            return Err(AugmentError::EmptyCatalog);
        }
        for (i, entry) in entries.iter().enumerate() {
            if entries[..i].contains(entry) {
                return Err(AugmentError::DuplicateEntry(i));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[AugmentationSpec] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let entries: Vec<AugmentationSpec> =
            serde_json::from_str(text).map_err(|e| e.to_string())?;
        Catalog::new(entries).map_err(|e| e.to_string())
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn checksum(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("catalog serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// The canonical catalog: 240 geometric x visual pairs (geometric-major),
/// then the 6 geometric transforms alone, then the 40 visual ones alone.
pub fn build_catalog() -> Catalog {
    let visuals = visual_grid();
    let mut entries = Vec::with_capacity(286);
    for g in GeometricTransform::NON_IDENTITY {
        for v in &visuals {
            entries.push(AugmentationSpec {
                geometric: g,
                visual: *v,
            });
        }
    }
    for g in GeometricTransform::NON_IDENTITY {
        entries.push(AugmentationSpec {
            geometric: g,
            visual: VisualTransform::Identity,
        });
    }
    for v in &visuals {
        entries.push(AugmentationSpec {
            geometric: GeometricTransform::Identity,
            visual: *v,
        });
    }
    Catalog::new(entries).expect("canonical catalog is valid")
}
