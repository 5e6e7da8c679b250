//! Sinusoidal positional encoding with coarse-to-fine band masking.
//!
//! A 3D point maps to `[x, Γ₀(x), …, Γ_{L-1}(x)] ∈ ℝ^{3+6L}` with
//! `Γ_m(x) = [cos(2^m π x), sin(2^m π x)]`, laid out per band as the cos
//! triple followed by the sin triple. During training a smooth mask ramps
//! the bands in from coarse to fine so pose alignment converges on
//! low-frequency structure before detail is fit.

use serde::{Deserialize, Serialize};

/// Number of frequency bands plus the iteration window over which the mask
/// parameter ramps from 0 to `num_bands`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub num_bands: usize,
    pub schedule_start: usize,
    pub schedule_end: usize,
}

impl EncodingConfig {
    pub fn new(num_bands: usize, schedule_start: usize, schedule_end: usize) -> Self {
        assert!(schedule_start <= schedule_end);
        Self {
            num_bands,
            schedule_start,
            schedule_end,
        }
    }

    /// Encoded length `3 + 6L`.
    pub fn output_len(&self) -> usize {
        3 + 6 * self.num_bands
    }

    /// Mask parameter at an iteration: 0 before the ramp, `num_bands` after,
    /// linear in between.
    pub fn alpha_at(&self, iteration: usize) -> f64 {
        let l = self.num_bands as f64;
        if iteration >= self.schedule_end {
            return l;
        }
        if iteration <= self.schedule_start || self.schedule_end == self.schedule_start {
            return if iteration >= self.schedule_end { l } else { 0.0 };
        }
        let span = (self.schedule_end - self.schedule_start) as f64;
        l * (iteration - self.schedule_start) as f64 / span
    }
}

/// Encoded point of length `3 + 6L`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPoint {
    pub values: Vec<f64>,
}

/// Per-band mask weights: 0 below the ramp, a half-cosine ramp across one
/// band width, 1 above.
pub fn band_weights(alpha: f64, num_bands: usize) -> Vec<f64> {
    (0..num_bands)
        .map(|m| {
            let s = alpha - m as f64;
            if s <= 0.0 {
                0.0
            } else if s < 1.0 {
                0.5 * (1.0 - (s * std::f64::consts::PI).cos())
            } else {
                1.0
            }
        })
        .collect()
}

/// Unmasked encoding `[x, Γ₀(x), …, Γ_{L-1}(x)]`.
pub fn encode(x: &[f64; 3], config: &EncodingConfig) -> EncodedPoint {
    encode_masked(x, config, config.num_bands as f64)
}

/// Encoding with band `m` scaled by `band_weights(alpha)[m]`; the raw
/// 3-vector prefix is never masked.
pub fn encode_masked(x: &[f64; 3], config: &EncodingConfig, alpha: f64) -> EncodedPoint {
    let mut values = Vec::with_capacity(config.output_len());
    values.extend_from_slice(x);
    let weights = band_weights(alpha, config.num_bands);
    for (m, w) in weights.iter().enumerate() {
        let freq = (1u64 << m) as f64 * std::f64::consts::PI;
        for k in 0..3 {
            values.push(w * (freq * x[k]).cos());
        }
        for k in 0..3 {
            values.push(w * (freq * x[k]).sin());
        }
    }
    EncodedPoint { values }
}

/// Writes `encode_masked` into a column slice of length `3 + 6L`; the hot
/// path used by the batched network forward.
pub fn encode_masked_into(x: &[f64; 3], weights: &[f64], out: &mut [f64]) {
    debug_assert_eq!(out.len(), 3 + 6 * weights.len());
    out[..3].copy_from_slice(x);
    let mut idx = 3;
    for (m, &w) in weights.iter().enumerate() {
        let freq = (1u64 << m) as f64 * std::f64::consts::PI;
        for k in 0..3 {
            out[idx + k] = w * (freq * x[k]).cos();
        }
        for k in 0..3 {
            out[idx + 3 + k] = w * (freq * x[k]).sin();
        }
        idx += 6;
    }
}

/// Accumulates `∂(encoded)/∂x ᵀ · g` into `gx` given the upstream gradient
/// `g` over one encoded column. Inverse companion of [`encode_masked_into`].
pub fn encode_backward_into(x: &[f64; 3], weights: &[f64], g: &[f64], gx: &mut [f64; 3]) {
    for k in 0..3 {
        gx[k] += g[k];
    }
    let mut idx = 3;
    for (m, &w) in weights.iter().enumerate() {
        let freq = (1u64 << m) as f64 * std::f64::consts::PI;
        for k in 0..3 {
            let (s, c) = (freq * x[k]).sin_cos();
            gx[k] += g[idx + k] * (-w * freq * s);
            gx[k] += g[idx + 3 + k] * (w * freq * c);
        }
        idx += 6;
    }
}
