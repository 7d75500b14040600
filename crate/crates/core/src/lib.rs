//! Confidence maps for binary segmentation and the tools to judge them.
//!
//! * [`grid`]: rasters and their PFM/PGM encodings.
//! * [`augment`]: the test-time augmentation catalog.
//! * [`confmap`]: pre-threshold, MC-dropout and TTA confidence maps.
//! * [`dataset`]: datasets on disk behind a `manifest.json`.
//! * [`eval`]: calibration, AUC, image-specific thresholding and IoU gains.
//! * [`report`]: evaluation reports as JSON, CSV and SVG.

pub mod augment;
pub mod confmap;
pub mod dataset;
pub mod eval;
pub mod grid;
pub mod report;
