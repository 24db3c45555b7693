//! Differentially private SGD support: clipping, the Gaussian sanitizer and
//! a moments accountant for the sampled Gaussian mechanism.

mod accountant;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub use accountant::{
    calibrate_sigma, compose_eps, epsilon_for, log_moment, log_moments, MomentLedger,
    INTEGRATION_POINTS, INTEGRATION_RANGE, MAX_ORDER,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error("invalid privacy parameters: {0}")]
    InvalidSpec(String),
    #[error("cannot sanitize an empty lot")]
    EmptyLot,
    #[error("gradient lengths differ within the lot")]
    LengthMismatch,
    #[error("ledger has no recorded steps")]
    EmptyLedger,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("target epsilon {target} unreachable: sigma 64 still gives {eps_at_max}")]
    Unachievable { target: f64, eps_at_max: f64 },
}

pub type Result<T> = std::result::Result<T, DpError>;

/// DP-SGD hyperparameters for one training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacySpec {
    pub q: f64,
    pub sigma: f64,
    pub clip: f64,
    pub delta: f64,
    pub steps: u64,
}

impl PrivacySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(DpError::InvalidSpec(format!(
                "q must be in (0, 1], got {}",
                self.q
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(DpError::InvalidSpec(format!(
                "sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        if !(self.clip > 0.0) {
            return Err(DpError::InvalidSpec(format!(
                "clip norm must be > 0, got {}",
                self.clip
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(DpError::InvalidSpec(format!(
                "delta must be in (0, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }

    pub fn epsilon(&self) -> Result<f64> {
        self.validate()?;
        if self.sigma == 0.0 {
            return Ok(f64::INFINITY);
        }
        epsilon_for(self.q, self.sigma, self.steps, self.delta)
    }
}

pub fn l2_norm(g: &[f64]) -> f64 {
    g.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `g` down to L2 norm `clip` if it is longer.
pub fn clip_gradient(g: &[f64], clip: f64) -> Vec<f64> {
    let norm = l2_norm(g);
    if norm <= clip {
        return g.to_vec();
    }
    let s = clip / norm;
    g.iter().map(|x| x * s).collect()
}

/// Sum of clipped per-example gradients plus N(0, (sigma*clip)^2) noise per
/// coordinate. With `sigma == 0` no randomness is drawn.
pub fn sanitize_lot<R: Rng + ?Sized>(
    grads: &[Vec<f64>],
    clip: f64,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let first = grads.first().ok_or(DpError::EmptyLot)?;
    let mut sum = vec![0.0; first.len()];
    for g in grads {
        if g.len() != sum.len() {
            return Err(DpError::LengthMismatch);
        }
        for (s, c) in sum.iter_mut().zip(clip_gradient(g, clip)) {
            *s += c;
        }
    }
    if sigma > 0.0 {
        let normal =
            Normal::new(0.0, sigma * clip).map_err(|e| DpError::InvalidSpec(e.to_string()))?;
        for s in &mut sum {
            *s += normal.sample(rng);
        }
    }
    Ok(sum)
}
