//! Seeded synthetic landslide scenes and a matching stand-in model.
//!
//! Scenes are green, smoothly varying terrain with a few brown elliptical
//! scars (the truth mask), some weaker brownish distractor patches that are
//! not in the mask, and per-pixel speckle. The pre-event image is the same
//! terrain without the scars or distractors.
//!
//! The scorer is a logistic in the red-green difference plus a local
//! contrast term. Its stochastic variant perturbs the logit with noise
//! hashed from `(sample id, pixel index, seed)`; the hash is spelled out
//! below so that out-of-process reimplementations can match it bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::scorer::{Capabilities, Scorer, ScorerError};
use crate::augment::reflect;
use crate::grid::{BinaryMask, Image, Sample, ScoreMap};

/// Logit gain on `R - G`.
pub const RED_GREEN_GAIN: f64 = 24.0;
/// Logit gain on local contrast (luminance minus its 3x3 mean).
pub const CONTRAST_GAIN: f64 = -4.0;
pub const LOGIT_BIAS: f64 = 1.4;
/// Half-width of the uniform logit perturbation in stochastic draws.
pub const STOCHASTIC_AMPLITUDE: f64 = 1.5;

const SCAR_COLOR: [f32; 3] = [0.58, 0.42, 0.28];
const SCAR_WEIGHT: f32 = 0.75;
const DISTRACTOR_WEIGHT: f32 = 0.4;
const MIN_FRACTION: f64 = 0.01;
const MAX_FRACTION: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SyntheticError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    /// Inclusive `[min, max]` number of scars per image.
    pub blob_count_range: [usize; 2],
    /// Half-width of the uniform per-channel speckle.
    pub noise_level: f64,
}

impl SyntheticSpec {
    pub fn new(seed: u64, count: usize, size: usize) -> Self {
        Self {
            seed,
            count,
            height: size,
            width: size,
            blob_count_range: [1, 4],
            noise_level: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        let bad = |msg: String| Err(SyntheticError::InvalidSpec(msg));
        if self.count == 0 {
            return bad("count must be >= 1".into());
        }
        if self.height != self.width {
            return bad(format!(
                "images must be square, got {}x{}",
                self.height, self.width
            ));
        }
        if self.height < 16 {
            return bad(format!("size must be >= 16, got {}", self.height));
        }
        let [lo, hi] = self.blob_count_range;
        if lo == 0 || lo > hi || hi > 16 {
            return bad(format!(
                "blob count range [{lo}, {hi}] must satisfy 1 <= min <= max <= 16"
            ));
        }
        if !(0.0..=0.5).contains(&self.noise_level) {
            return bad(format!(
                "noise level must lie in [0, 0.5], got {}",
                self.noise_level
            ));
        }
        Ok(())
    }
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(GOLDEN_GAMMA);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Independent child seed for stream `counter` of `seed`.
pub fn derive_seed(seed: u64, counter: u64) -> u64 {
    splitmix64(seed ^ splitmix64(counter))
}

/// Uniform in `[0, 1)` from `(id, pixel, seed)`: output `pixel` of the
/// SplitMix64 stream keyed by `splitmix64(fnv1a64(id) ^ splitmix64(seed))`,
/// top 53 bits scaled by `2^-53`.
pub fn hashed_uniform(id: &str, pixel: u64, seed: u64) -> f64 {
    uniform_at(stream_key(fnv1a64(id.as_bytes()), seed), pixel)
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn stream_key(id_hash: u64, seed: u64) -> u64 {
    splitmix64(id_hash ^ splitmix64(seed))
}

fn uniform_at(key: u64, pixel: u64) -> f64 {
    let bits = splitmix64(key.wrapping_add(pixel.wrapping_mul(GOLDEN_GAMMA))) >> 11;
    bits as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Bilinear value noise on a coarse lattice, smoothstepped, in `[0, 1]`.
fn value_noise(rng: &mut ChaCha8Rng, size: usize, cells: usize) -> Vec<f32> {
    let lattice: Vec<f32> = (0..(cells + 1) * (cells + 1)).map(|_| rng.gen()).collect();
    let at = |r: usize, c: usize| lattice[r * (cells + 1) + c];
    let smooth = |t: f32| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(size * size);
    for row in 0..size {
        let y = (row as f32 + 0.5) / size as f32 * cells as f32;
        let (r0, ty) = ((y.floor() as usize).min(cells - 1), smooth(y.fract()));
        for col in 0..size {
            let x = (col as f32 + 0.5) / size as f32 * cells as f32;
            let (c0, tx) = ((x.floor() as usize).min(cells - 1), smooth(x.fract()));
            let top = at(r0, c0) * (1.0 - tx) + at(r0, c0 + 1) * tx;
            let bottom = at(r0 + 1, c0) * (1.0 - tx) + at(r0 + 1, c0 + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Rasterizes `count` axis-aligned ellipses totalling roughly `fraction`
/// of the image, fully inside it.
fn ellipses(rng: &mut ChaCha8Rng, size: usize, count: usize, fraction: f64) -> Vec<u8> {
    let n = size as f64;
    let mut mask = vec![0u8; size * size];
    for _ in 0..count {
        let area = fraction * n * n / count as f64 * rng.gen_range(0.6..1.4);
        let ratio: f64 = rng.gen_range(0.5..2.0);
        let limit = n / 2.0 - 1.0;
        let ry = (area * ratio / std::f64::consts::PI)
            .sqrt()
            .clamp(1.0, limit);
        let rx = (area / (std::f64::consts::PI * ry)).clamp(1.0, limit);
        let cx = rng.gen_range(rx..n - rx);
        let cy = rng.gen_range(ry..n - ry);
        let rows = ((cy - ry).floor().max(0.0) as usize)..((cy + ry).ceil().min(n) as usize);
        for row in rows {
            let dy = (row as f64 + 0.5 - cy) / ry;
            for col in ((cx - rx).floor().max(0.0) as usize)..((cx + rx).ceil().min(n) as usize) {
                let dx = (col as f64 + 0.5 - cx) / rx;
                if dx * dx + dy * dy <= 1.0 {
                    mask[row * size + col] = 1;
                }
            }
        }
    }
    mask
}

fn truth_mask(rng: &mut ChaCha8Rng, size: usize, blobs: [usize; 2]) -> Vec<u8> {
    let total = (size * size) as f64;
    for _ in 0..64 {
        let count = rng.gen_range(blobs[0]..=blobs[1]);
        let fraction = rng.gen_range(0.02..0.12);
        let mask = ellipses(rng, size, count, fraction);
        let covered = mask.iter().filter(|&&v| v == 1).count() as f64 / total;
        if (MIN_FRACTION..=MAX_FRACTION).contains(&covered) {
            return mask;
        }
    }
    // Unreachable in practice; a centered disc covering ~5% keeps the
    // construction bound unconditional.
    let c = size as f64 / 2.0;
    let radius = (0.05 * total / std::f64::consts::PI).sqrt();
    (0..size * size)
        .map(|i| {
            let (dy, dx) = ((i / size) as f64 + 0.5 - c, (i % size) as f64 + 0.5 - c);
            u8::from(dx * dx + dy * dy <= radius * radius)
        })
        .collect()
}

fn speckled(rng: &mut ChaCha8Rng, base: &[[f32; 3]], noise: f64) -> Vec<f32> {
    let noise = noise as f32;
    let mut out = Vec::with_capacity(base.len() * 3);
    for px in base {
        for &v in px {
            let jitter = if noise > 0.0 {
                rng.gen_range(-noise..=noise)
            } else {
                0.0
            };
            out.push((v + jitter).clamp(0.0, 1.0));
        }
    }
    out
}

fn generate_one(spec: &SyntheticSpec, index: usize) -> Sample {
    let size = spec.height;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, index as u64));

    let truth = truth_mask(&mut rng, size, spec.blob_count_range);
    let distractor_count = rng.gen_range(0..=2);
    let distractors = if distractor_count > 0 {
        ellipses(&mut rng, size, distractor_count, 0.02)
    } else {
        vec![0; size * size]
    };

    let terrain = value_noise(&mut rng, size, 8);
    let tint: Vec<Vec<f32>> = (0..3).map(|_| value_noise(&mut rng, size, 4)).collect();
    let base: Vec<[f32; 3]> = (0..size * size)
        .map(|i| {
            let t = terrain[i];
            [
                0.22 + 0.10 * t + 0.08 * tint[0][i],
                0.40 + 0.12 * t + 0.08 * tint[1][i],
                0.20 + 0.08 * t + 0.06 * tint[2][i],
            ]
        })
        .collect();
    let shifted: Vec<[f32; 3]> = base
        .iter()
        .enumerate()
        .map(|(i, px)| {
            let w = if truth[i] == 1 {
                SCAR_WEIGHT
            } else if distractors[i] == 1 {
                DISTRACTOR_WEIGHT
            } else {
                0.0
            };
            std::array::from_fn(|c| px[c] * (1.0 - w) + SCAR_COLOR[c] * w)
        })
        .collect();

    let post = Image::new(
        size,
        size,
        3,
        speckled(&mut rng, &shifted, spec.noise_level),
    )
    .expect("values clamped");
    let pre = Image::new(size, size, 3, speckled(&mut rng, &base, spec.noise_level))
        .expect("values clamped");
    let truth = BinaryMask::new(size, size, truth).expect("binary by construction");
    Sample::new(format!("s{index:04}"), post, Some(pre), truth).expect("shared dimensions")
}

/// Samples `s0000, s0001, ...`, each with a pre-event image. Sample `i`
/// depends only on `(seed, i)`.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec) -> Result<Vec<Sample>, SyntheticError> {
    spec.validate()?;
    Ok((0..spec.count).map(|i| generate_one(spec, i)).collect())
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Sum over the reflect-padded 3x3 neighborhood of every pixel, taken as
/// three-wide row sums added top to bottom.
fn box3_sum(values: &[f64], height: usize, width: usize) -> Vec<f64> {
    let mut rows = vec![0f64; values.len()];
    for (src, dst) in values.chunks_exact(width).zip(rows.chunks_exact_mut(width)) {
        for (col, d) in dst.iter_mut().enumerate() {
            let left = src[reflect(col as isize - 1, width)];
            let right = src[reflect(col as isize + 1, width)];
            *d = left + src[col] + right;
        }
    }
    let mut out = vec![0f64; values.len()];
    for row in 0..height {
        let up = &rows[reflect(row as isize - 1, height) * width..][..width];
        let mid = &rows[row * width..][..width];
        let down = &rows[reflect(row as isize + 1, height) * width..][..width];
        let dst = &mut out[row * width..][..width];
        for (((d, &u), &m), &w) in dst.iter_mut().zip(up).zip(mid).zip(down) {
            *d = u + m + w;
        }
    }
    out
}

/// Deterministic score when `seed` is `None`; otherwise a stochastic draw
/// reproducible per `(sample id, pixel, seed)`.
pub fn synthetic_score(sample: &Sample, seed: Option<u64>) -> ScoreMap {
    let img = sample.post();
    let (height, width) = img.dims();
    let channels = img.channels();
    let luminance: Vec<f64> = img
        .data()
        .chunks_exact(channels)
        .map(|px| px.iter().map(|&v| v as f64).sum::<f64>() / channels as f64)
        .collect();
    let neighborhood = box3_sum(&luminance, height, width);
    let key = seed.map(|seed| stream_key(fnv1a64(sample.id().as_bytes()), seed));
    let out = img
        .data()
        .chunks_exact(channels)
        .zip(luminance.iter().zip(&neighborhood))
        .enumerate()
        .map(|(i, (px, (&lum, &sum)))| {
            let red_green = if channels == 3 {
                px[0] as f64 - px[1] as f64
            } else {
                0.0
            };
            let contrast = lum - sum / 9.0;
            let mut z = RED_GREEN_GAIN * red_green + CONTRAST_GAIN * contrast + LOGIT_BIAS;
            if let Some(key) = key {
                let u = uniform_at(key, i as u64);
                z += STOCHASTIC_AMPLITUDE * (2.0 * u - 1.0);
            }
            logistic(z).clamp(0.0, 1.0) as f32
        })
        .collect();
    ScoreMap::new(height, width, out).expect("logistic output lies in [0, 1]")
}

/// [`synthetic_score`] behind the [`Scorer`] contract.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticScorer;

impl Scorer for SyntheticScorer {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            deterministic: true,
            stochastic: true,
            multi_image: false,
            concurrent: true,
        }
    }

    fn score(&self, sample: &Sample) -> Result<ScoreMap, ScorerError> {
        Ok(synthetic_score(sample, None))
    }

    fn sample_stochastic(&self, sample: &Sample, seed: u64) -> Result<ScoreMap, ScorerError> {
        Ok(synthetic_score(sample, Some(seed)))
    }
}
