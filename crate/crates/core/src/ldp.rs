//! Local differential privacy for uploaded weights.
//!
//! Each coordinate is clamped to `[-C, C]`, so two admissible values differ by
//! at most `Δs = 2C`. Adding independent `Laplace(0, b)` noise with
//! `b = Δs / ε` then satisfies ε-LDP for that coordinate:
//!
//! ```text
//! |ln p(x - v) - ln p(x - v')| = | |x - v'| - |x - v| | / b <= |v - v'| / b <= ε
//! ```
//!
//! The guarantee is per coordinate. Releasing all ~6k coordinates of a model
//! composes to a much larger total budget; no accountant is applied.
//!
//! Noise comes from a counter-based uniform stream: the `k`-th draw of seed
//! `s` is `splitmix64(s + (k + 1) * 0x9E3779B97F4A7C15)`, whose top 53 bits
//! map to `u = (m + 0.5) / 2^53 - 0.5`, strictly inside (-0.5, 0.5) and never
//! zero. The inverse CDF is `x = -b * sgn(u) * ln(1 - 2|u|)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::WeightsBundle;
use crate::seed::{mix, NoiseSeed};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LdpError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// Privacy budget and clip bound. `epsilon: None` is the noise-free mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: Option<f64>,
    pub clip: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: Option<f64>, clip: f64) -> Result<Self, LdpError> {
        let p = Self { epsilon, clip };
        p.validate()?;
        Ok(p)
    }

    pub fn noise_free(clip: f64) -> Result<Self, LdpError> {
        Self::new(None, clip)
    }

    pub fn validate(&self) -> Result<(), LdpError> {
        if !(self.clip.is_finite() && self.clip > 0.0) {
            return Err(LdpError::Config(format!("clip must be > 0, got {}", self.clip)));
        }
        if let Some(eps) = self.epsilon {
            if !(eps.is_finite() && eps > 0.0) {
                return Err(LdpError::Config(format!("epsilon must be > 0, got {eps}")));
            }
        }
        Ok(())
    }

    /// Per-coordinate sensitivity `Δs = 2C`.
    pub fn sensitivity(&self) -> f64 {
        2.0 * self.clip
    }

    /// Laplace scale `b = Δs / ε`; zero in noise-free mode.
    pub fn noise_scale(&self) -> f64 {
        match self.epsilon {
            Some(eps) => self.sensitivity() / eps,
            None => 0.0,
        }
    }
}

pub fn clip_weights(w: &WeightsBundle, clip: f64) -> Result<WeightsBundle, LdpError> {
    if !(clip.is_finite() && clip > 0.0) {
        return Err(LdpError::Config(format!("clip must be > 0, got {clip}")));
    }
    let c = clip as f32;
    Ok(w.map(|v| v.clamp(-c, c)))
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// The `k`-th uniform draw on (-0.5, 0.5) of a noise stream.
pub fn uniform_at(seed: NoiseSeed, k: u64) -> f64 {
    let bits = mix(seed.0.wrapping_add(k.wrapping_add(1).wrapping_mul(GOLDEN))) >> 11;
    (bits as f64 + 0.5) / (1u64 << 53) as f64 - 0.5
}

/// Inverse CDF of `Laplace(0, b)` at a centred uniform `u` in (-0.5, 0.5).
pub fn laplace_inverse_cdf(u: f64, b: f64) -> f64 {
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

pub fn laplace_sample(b: f64, seed: NoiseSeed, n: usize) -> Result<Vec<f64>, LdpError> {
    if !(b.is_finite() && b >= 0.0) {
        return Err(LdpError::Config(format!("laplace scale must be >= 0, got {b}")));
    }
    if b == 0.0 {
        return Ok(vec![0.0; n]);
    }
    Ok((0..n as u64)
        .map(|k| laplace_inverse_cdf(uniform_at(seed, k), b))
        .collect())
}

/// Clip, then add i.i.d. Laplace noise per coordinate in bundle order.
pub fn perturb(
    w: &WeightsBundle,
    p: &PrivacyParams,
    seed: NoiseSeed,
) -> Result<WeightsBundle, LdpError> {
    p.validate()?;
    let mut out = clip_weights(w, p.clip)?;
    let b = p.noise_scale();
    if b > 0.0 {
        let noise = laplace_sample(b, seed, out.num_params())?;
        for (v, n) in out.values_mut().zip(noise) {
            *v = (*v as f64 + n) as f32;
        }
    }
    Ok(out)
}

/// `ln` of the Laplace(0, b) density at `x`.
pub fn laplace_log_pdf(x: f64, b: f64) -> f64 {
    -(2.0 * b).ln() - x.abs() / b
}

/// Largest density log-ratio `|ln p(x - v) - ln p(x - v')|` over the grid of
/// `(v, v', x)` triples. Bounded by ε when every pair is admissible.
pub fn verify_ldp_ratio(p: &PrivacyParams, grid: &[(f64, f64, f64)]) -> Result<f64, LdpError> {
    p.validate()?;
    if p.epsilon.is_none() {
        return Err(LdpError::Precondition(
            "density ratio is undefined without noise".into(),
        ));
    }
    let b = p.noise_scale();
    let ds = p.sensitivity();
    let mut worst = 0.0f64;
    for &(v, v2, x) in grid {
        if v.abs() > p.clip || v2.abs() > p.clip {
            return Err(LdpError::Precondition(format!(
                "inputs ({v}, {v2}) outside [-{0}, {0}]",
                p.clip
            )));
        }
        if (v - v2).abs() > ds {
            return Err(LdpError::Precondition(format!(
                "|{v} - {v2}| exceeds sensitivity {ds}"
            )));
        }
        let ratio = (laplace_log_pdf(x - v, b) - laplace_log_pdf(x - v2, b)).abs();
        worst = worst.max(ratio);
    }
    Ok(worst)
}
