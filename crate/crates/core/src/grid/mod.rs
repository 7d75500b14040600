//! Raster types shared by every stage of the pipeline.
//!
//! All three rasters are row-major and immutable once constructed. The
//! constructors are the only place where invariants are checked, so every
//! value in circulation has already been validated.

mod header;
mod pfm;
mod pgm;

pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm};
pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Single-image (post only) or multi-image (pre and post) segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Single,
    Multi,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Single => "single",
            Task::Multi => "multi",
        })
    }
}

impl std::str::FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(Task::Single),
            "multi" => Ok(Task::Multi),
            other => Err(format!("unknown task `{other}` (expected single or multi)")),
        }
    }
}

/// Construction-time validation failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("raster dimensions must be non-zero (got {height}x{width})")]
    EmptyDimensions { height: usize, width: usize },
    #[error("data length {len} does not match {height}x{width}x{channels}")]
    LengthMismatch {
        height: usize,
        width: usize,
        channels: usize,
        len: usize,
    },
    #[error("unsupported channel count {0}")]
    UnsupportedChannels(usize),
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("value {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f32 },
    #[error("mask value {value} at index {index} is not 0 or 1")]
    NotBinary { index: usize, value: u8 },
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
}

/// Byte-level decoding failures for PFM and PGM payloads.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormatError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported channel count (`PF` color maps are not accepted)")]
    UnsupportedChannelCount,
    #[error("unsupported maxval {0} (expected 255)")]
    UnsupportedMaxval(u32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("value {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f32 },
}

/// File-level failures; always carries the offending path.
#[derive(Debug, Error)]
pub enum RasterIoError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
}

/// Sample ids double as file names: non-empty ASCII letters, digits,
/// `.`, `_` or `-`, not starting with `.`.
pub fn validate_id(id: &str) -> Result<(), String> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.len() <= 128
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'));
    if ok {
        Ok(())
    } else {
        Err(format!("invalid sample id {id:?}"))
    }
}

fn check_dims(height: usize, width: usize) -> Result<(), GridError> {
    if height == 0 || width == 0 {
        return Err(GridError::EmptyDimensions { height, width });
    }
    Ok(())
}

fn check_unit_interval(data: &[f32]) -> Result<(), GridError> {
    for (index, &value) in data.iter().enumerate() {
        if !value.is_finite() {
            return Err(GridError::NonFinite { index });
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(GridError::OutOfRange { index, value });
        }
    }
    Ok(())
}

/// Multi-channel image with values normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self, GridError> {
        check_dims(height, width)?;
        if channels != 1 && channels != 3 {
            return Err(GridError::UnsupportedChannels(channels));
        }
        if data.len() != height * width * channels {
            return Err(GridError::LengthMismatch {
                height,
                width,
                channels,
                len: data.len(),
            });
        }
        check_unit_interval(&data)?;
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image from 8-bit samples, dividing each by 255.
    pub fn from_u8(
        height: usize,
        width: usize,
        channels: usize,
        bytes: &[u8],
    ) -> Result<Self, GridError> {
        let data = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        Self::new(height, width, channels, data)
    }

    /// Interleaves single-channel planes (1 or 3 of them) into one image.
    pub fn from_planes(planes: &[ScoreMap]) -> Result<Self, GridError> {
        let first = planes.first().ok_or(GridError::UnsupportedChannels(0))?;
        let (height, width) = first.dims();
        for plane in planes {
            if plane.dims() != (height, width) {
                return Err(GridError::DimensionMismatch {
                    expected: (height, width),
                    found: plane.dims(),
                });
            }
        }
        let channels = planes.len();
        let mut data = Vec::with_capacity(height * width * channels);
        for i in 0..height * width {
            data.extend(planes.iter().map(|p| p.data()[i]));
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    /// Extracts one channel as a plane.
    pub fn plane(&self, channel: usize) -> ScoreMap {
        assert!(channel < self.channels, "channel {channel} out of range");
        let data = self
            .data
            .iter()
            .skip(channel)
            .step_by(self.channels)
            .copied()
            .collect();
        ScoreMap {
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn planes(&self) -> Vec<ScoreMap> {
        (0..self.channels).map(|c| self.plane(c)).collect()
    }

    /// Applies `f` to every value and clamps the result back into `[0, 1]`.
    pub(crate) fn map_values(&self, f: impl Fn(f32) -> f32) -> Image {
        let data = self.data.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect();
        self.with_data(data)
    }

    pub(crate) fn with_data(&self, data: Vec<f32>) -> Image {
        debug_assert_eq!(data.len(), self.data.len());
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        }
    }
}

/// Per-pixel scores in `[0, 1]`: raw model outputs or stored confidence maps.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ScoreMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self, GridError> {
        check_dims(height, width)?;
        if data.len() != height * width {
            return Err(GridError::LengthMismatch {
                height,
                width,
                channels: 1,
                len: data.len(),
            });
        }
        check_unit_interval(&data)?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self, GridError> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// Binary labels; 1 is the positive (foreground) class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self, GridError> {
        check_dims(height, width)?;
        if data.len() != height * width {
            return Err(GridError::LengthMismatch {
                height,
                width,
                channels: 1,
                len: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(GridError::NotBinary { index, value });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Marks every pixel whose score is `>= threshold`.
    pub fn from_threshold(map: &[f64], height: usize, width: usize, threshold: f64) -> Self {
        assert_eq!(map.len(), height * width);
        Self {
            height,
            width,
            data: map.iter().map(|&v| u8::from(v >= threshold)).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn to_scores(&self) -> ScoreMap {
        ScoreMap {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }
}

/// One test case. `pre` is present only for the multi-image task.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    id: String,
    post: Image,
    pre: Option<Image>,
    truth: BinaryMask,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        post: Image,
        pre: Option<Image>,
        truth: BinaryMask,
    ) -> Result<Self, GridError> {
        let expected = post.dims();
        for found in pre
            .iter()
            .map(Image::dims)
            .chain(std::iter::once(truth.dims()))
        {
            if found != expected {
                return Err(GridError::DimensionMismatch { expected, found });
            }
        }
        Ok(Self {
            id: id.into(),
            post,
            pre,
            truth,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn post(&self) -> &Image {
        &self.post
    }

    pub fn pre(&self) -> Option<&Image> {
        self.pre.as_ref()
    }

    pub fn truth(&self) -> &BinaryMask {
        &self.truth
    }

    pub fn dims(&self) -> (usize, usize) {
        self.post.dims()
    }

    pub fn is_multi_image(&self) -> bool {
        self.pre.is_some()
    }

    pub fn task(&self) -> Task {
        if self.pre.is_some() {
            Task::Multi
        } else {
            Task::Single
        }
    }

    /// Drops the pre-event image, turning a multi-image sample into a
    /// single-image one.
    pub fn without_pre(self) -> Sample {
        Sample { pre: None, ..self }
    }

    /// Same id and truth, new images. Dimensions must be unchanged.
    pub fn with_images(&self, post: Image, pre: Option<Image>) -> Result<Sample, GridError> {
        Sample::new(self.id.clone(), post, pre, self.truth.clone())
    }
}

/// Rasters that can be re-indexed by a pixel permutation.
///
/// `permuted` copies every channel of source pixel `index[i]` to output
/// pixel `i`; the result has the given dimensions.
pub trait Raster: Sized {
    fn height(&self) -> usize;
    fn width(&self) -> usize;
    /// Same-shaped grid whose pixel `(row, col)` is input pixel `source(row, col)`.
    fn permuted(&self, source: impl Fn(usize, usize) -> usize) -> Self;
}

fn gather<T: Copy>(
    data: &[T],
    (height, width, channels): (usize, usize, usize),
    source: impl Fn(usize, usize) -> usize,
) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for row in 0..height {
        if channels == 1 {
            out.extend((0..width).map(|col| data[source(row, col)]));
        } else {
            for col in 0..width {
                let src = source(row, col) * channels;
                out.extend_from_slice(&data[src..src + channels]);
            }
        }
    }
    out
}

impl Raster for Image {
    fn height(&self) -> usize {
        self.height
    }
    fn width(&self) -> usize {
        self.width
    }
    fn permuted(&self, source: impl Fn(usize, usize) -> usize) -> Self {
        let shape = (self.height, self.width, self.channels);
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: gather(&self.data, shape, source),
        }
    }
}

impl Raster for ScoreMap {
    fn height(&self) -> usize {
        self.height
    }
    fn width(&self) -> usize {
        self.width
    }
    fn permuted(&self, source: impl Fn(usize, usize) -> usize) -> Self {
        ScoreMap {
            height: self.height,
            width: self.width,
            data: gather(&self.data, (self.height, self.width, 1), source),
        }
    }
}

impl Raster for BinaryMask {
    fn height(&self) -> usize {
        self.height
    }
    fn width(&self) -> usize {
        self.width
    }
    fn permuted(&self, source: impl Fn(usize, usize) -> usize) -> Self {
        BinaryMask {
            height: self.height,
            width: self.width,
            data: gather(&self.data, (self.height, self.width, 1), source),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructors_reject_length_mismatch() {
        assert!(matches!(
            ScoreMap::new(2, 2, vec![0.0; 3]),
            Err(GridError::LengthMismatch { .. })
        ));
        assert!(matches!(
            Image::new(2, 2, 3, vec![0.0; 4]),
            Err(GridError::LengthMismatch { .. })
        ));
        assert!(matches!(
            BinaryMask::new(1, 3, vec![0, 1]),
            Err(GridError::LengthMismatch { .. })
        ));
        assert!(matches!(
            ScoreMap::new(0, 2, vec![]),
            Err(GridError::EmptyDimensions { .. })
        ));
    }

    #[test]
    fn constructors_reject_bad_values() {
        assert_eq!(
            ScoreMap::new(1, 2, vec![0.5, f32::NAN]),
            Err(GridError::NonFinite { index: 1 })
        );
        assert_eq!(
            ScoreMap::new(1, 2, vec![1.5, 0.0]),
            Err(GridError::OutOfRange {
                index: 0,
                value: 1.5
            })
        );
        assert_eq!(
            BinaryMask::new(1, 2, vec![0, 2]),
            Err(GridError::NotBinary { index: 1, value: 2 })
        );
        assert_eq!(
            Image::new(1, 1, 2, vec![0.0, 0.0]),
            Err(GridError::UnsupportedChannels(2))
        );
    }

    #[test]
    fn u8_images_divide_by_255() {
        let img = Image::from_u8(1, 2, 1, &[255, 51]).unwrap();
        assert_eq!(img.data(), &[1.0, 51.0 / 255.0]);
    }

    #[test]
    fn planes_round_trip() {
        let img = Image::new(1, 2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let planes = img.planes();
        assert_eq!(planes[1].data(), &[0.2, 0.5]);
        assert_eq!(Image::from_planes(&planes).unwrap(), img);
    }

    #[test]
    fn sample_requires_matching_dims() {
        let post = Image::new(2, 2, 1, vec![0.0; 4]).unwrap();
        let pre = Image::new(1, 4, 1, vec![0.0; 4]).unwrap();
        let truth = BinaryMask::new(2, 2, vec![0; 4]).unwrap();
        assert!(Sample::new("a", post.clone(), None, truth.clone()).is_ok());
        assert!(matches!(
            Sample::new("a", post, Some(pre), truth),
            Err(GridError::DimensionMismatch { .. })
        ));
    }
}
