//! Mask confidence: classification probability weighted by the mean
//! foreground probability of the mask.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::BINARIZE_THRESHOLD;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreParams {
    /// Exponent on the classification probability.
    pub alpha: f64,
    /// Exponent on the segmentation quality.
    pub beta: f64,
}

impl Default for ScoreParams {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 2.0 }
    }
}

impl ScoreParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) || !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::Param(format!("score exponents must be finite and >= 0, got alpha={alpha}, beta={beta}")));
        }
        Ok(Self { alpha, beta })
    }
}

/// Sum and count of the values strictly above the binarization threshold.
pub(crate) fn foreground_stats(values: &[f32]) -> (f64, usize) {
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for &v in values {
        if v > BINARIZE_THRESHOLD {
            sum += v as f64;
            count += 1;
        }
    }
    (sum, count)
}

/// Mean of the mask values above 0.5, or 0 when no pixel exceeds 0.5.
pub fn segmentation_quality(mask: ArrayView2<'_, f32>) -> f64 {
    let (sum, count) = match mask.as_slice() {
        Some(s) => foreground_stats(s),
        None => foreground_stats(&mask.iter().copied().collect::<Vec<_>>()),
    };
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// `p^alpha * q^beta` with `0^0 = 1`.
pub fn confidence_from_quality(p: f64, quality: f64, params: &ScoreParams) -> f64 {
    p.powf(params.alpha) * quality.powf(params.beta)
}

pub fn confidence(p: f64, mask: ArrayView2<'_, f32>, params: &ScoreParams) -> f64 {
    confidence_from_quality(p, segmentation_quality(mask), params)
}
