use serde::{Deserialize, Serialize};

use super::AugmentError;
use crate::grid::Image;

/// Photometric perturbations applied after the geometric step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum VisualTransform {
    Identity,
    GaussianBlur { sigma: f64 },
    LinearContrast { alpha: f64 },
    Brightness { beta: f64 },
}

impl VisualTransform {
    pub fn is_identity(&self) -> bool {
        matches!(self, VisualTransform::Identity)
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        match *self {
            VisualTransform::Identity => Ok(()),
            VisualTransform::GaussianBlur { sigma } => check_sigma(sigma),
            VisualTransform::LinearContrast { alpha } => check_alpha(alpha),
            VisualTransform::Brightness { beta } => check_beta(beta),
        }
    }

    pub fn apply(&self, img: &Image) -> Result<Image, AugmentError> {
        match *self {
            VisualTransform::Identity => Ok(img.clone()),
            VisualTransform::GaussianBlur { sigma } => gaussian_blur(img, sigma),
            VisualTransform::LinearContrast { alpha } => linear_contrast(img, alpha),
            VisualTransform::Brightness { beta } => brightness(img, beta),
        }
    }
}

fn check_sigma(sigma: f64) -> Result<(), AugmentError> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(AugmentError::InvalidSigma(sigma))
    }
}

fn check_alpha(alpha: f64) -> Result<(), AugmentError> {
    if alpha.is_finite() && alpha > 0.0 {
        Ok(())
    } else {
        Err(AugmentError::InvalidAlpha(alpha))
    }
}

fn check_beta(beta: f64) -> Result<(), AugmentError> {
    if (-1.0..=1.0).contains(&beta) {
        Ok(())
    } else {
        Err(AugmentError::InvalidBeta(beta))
    }
}

/// Half of the normalized kernel: `weights[j]` multiplies offsets `±j`.
/// The full kernel `w[|j|]` for `j in -r..=r` sums to 1.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut weights: Vec<f64> = (0..=radius)
        .map(|j| (-((j * j) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total = weights[0] + 2.0 * weights[1..].iter().sum::<f64>();
    for w in &mut weights {
        *w /= total;
    }
    weights
}

/// Mirror index without repeating the edge sample (`-1 -> 1`, `n -> n-2`).
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// One pass of the symmetric kernel along `len` cells of `block` adjacent
/// values each (the channel count for the horizontal pass, a whole row for
/// the vertical one). `src` holds consecutive lines of `len * block` values.
///
/// Symmetric taps are summed pairwise before weighting, which makes the
/// result bit-identical under reversal of the line.
fn convolve_pass(src: &[f32], kernel: &[f32], len: usize, block: usize) -> Vec<f32> {
    let radius = kernel.len() - 1;
    let line_len = len * block;
    let border = |p: usize| reflect(p as isize - radius as isize, len);
    let before: Vec<usize> = (0..radius).map(border).collect();
    let after: Vec<usize> = (radius + len..len + 2 * radius).map(border).collect();
    let mut padded = Vec::with_capacity(line_len + 2 * radius * block);
    let mut out = Vec::with_capacity(src.len());
    let mut acc = Vec::with_capacity(line_len);
    for line in src.chunks_exact(line_len) {
        padded.clear();
        for &cell in &before {
            padded.extend_from_slice(&line[cell * block..][..block]);
        }
        padded.extend_from_slice(line);
        for &cell in &after {
            padded.extend_from_slice(&line[cell * block..][..block]);
        }
        acc.clear();
        acc.extend(line.iter().map(|&c| kernel[0] * c));
        for (j, &w) in kernel.iter().enumerate().skip(1) {
            let left = &padded[(radius - j) * block..][..line_len];
            let right = &padded[(radius + j) * block..][..line_len];
            for ((a, &l), &r) in acc.iter_mut().zip(left).zip(right) {
                *a += w * (l + r);
            }
        }
        out.extend_from_slice(&acc);
    }
    out
}

/// Separable Gaussian blur, truncated at `ceil(3 sigma)`, reflect borders.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image, AugmentError> {
    check_sigma(sigma)?;
    let kernel: Vec<f32> = gaussian_kernel(sigma)
        .into_iter()
        .map(|w| w as f32)
        .collect();
    let (height, width, channels) = (img.height(), img.width(), img.channels());
    let horizontal = convolve_pass(img.data(), &kernel, width, channels);
    let out = convolve_pass(&horizontal, &kernel, height, width * channels);
    Ok(img.with_data(out.into_iter().map(|v| v.clamp(0.0, 1.0)).collect()))
}

/// `clamp(0.5 + alpha (v - 0.5))`: contrast about mid-gray.
///
/// Pointwise transforms work in `f32`, the storage precision.
pub fn linear_contrast(img: &Image, alpha: f64) -> Result<Image, AugmentError> {
    check_alpha(alpha)?;
    // Written as an offset from v so that alpha = 1 is an exact identity.
    Ok(img.map_values(|v| {
        let v = v as f64;
        (v + (alpha - 1.0) * (v - 0.5)) as f32
    }))
}

pub fn brightness(img: &Image, beta: f64) -> Result<Image, AugmentError> {
    check_beta(beta)?;
    let beta = beta as f32;
    Ok(img.map_values(|v| v + beta))
}
