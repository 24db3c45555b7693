//! Fixed-precision codec between `f64` and the ring Z_{2^62}.
//!
//! A real `x` is stored as `round(x * 2^p) mod Q`, negatives living in the
//! upper half of the ring. Products of two encodings carry `2p` fractional
//! bits and must be truncated back to `p`.

use thiserror::Error;

use crate::tensor::{ring_reduce, Tensor, TensorError, RING_BITS, RING_MODULUS};

pub const DEFAULT_FRAC_BITS: u32 = 16;
const HALF_RING: u64 = RING_MODULUS / 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FixedPointError {
    #[error("value {value} exceeds the representable magnitude 2^{max_log2}")]
    Overflow { value: f64, max_log2: u32 },
    #[error("fractional bits must be in 1..=30, got {0}")]
    InvalidConfig(u32),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Position of the binary point. Base and modulus are fixed at 2 and 2^62.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedPointConfig {
    frac_bits: u32,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig {
            frac_bits: DEFAULT_FRAC_BITS,
        }
    }
}

impl FixedPointConfig {
    pub fn new(frac_bits: u32) -> Result<Self, FixedPointError> {
        if !(1..=30).contains(&frac_bits) {
            return Err(FixedPointError::InvalidConfig(frac_bits));
        }
        Ok(FixedPointConfig { frac_bits })
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn scale(&self) -> f64 {
        (1u64 << self.frac_bits) as f64
    }

    /// log2 of the largest representable magnitude: 61 - p.
    pub fn max_magnitude_log2(&self) -> u32 {
        RING_BITS - 1 - self.frac_bits
    }

    pub fn encode_scalar(&self, x: f64) -> Result<u64, FixedPointError> {
        let bound = (1u64 << self.max_magnitude_log2()) as f64;
        if !x.is_finite() || x.abs() >= bound {
            return Err(FixedPointError::Overflow {
                value: x,
                max_log2: self.max_magnitude_log2(),
            });
        }
        // f64::round is half-away-from-zero, so encode(-x) = Q - encode(x).
        let scaled = (x * self.scale()).round() as i64;
        Ok(from_signed(scaled))
    }

    pub fn decode_scalar(&self, r: u64) -> f64 {
        to_signed(r) as f64 / self.scale()
    }

    /// Arithmetic right shift by `p` of the signed value, re-encoded.
    pub fn truncate_scalar(&self, r: u64) -> u64 {
        from_signed(to_signed(r) >> self.frac_bits)
    }

    pub fn encode(&self, t: &Tensor) -> Result<Tensor, FixedPointError> {
        let data = t
            .as_f64()?
            .iter()
            .map(|&x| self.encode_scalar(x))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Tensor::from_ring(t.shape().clone(), data)?)
    }

    pub fn decode(&self, t: &Tensor) -> Result<Tensor, FixedPointError> {
        let data = t
            .as_ring()?
            .iter()
            .map(|&r| self.decode_scalar(r))
            .collect();
        Ok(Tensor::from_f64(t.shape().clone(), data)?)
    }

    pub fn truncate(&self, t: &Tensor) -> Result<Tensor, FixedPointError> {
        let data = t
            .as_ring()?
            .iter()
            .map(|&r| self.truncate_scalar(r))
            .collect();
        Ok(Tensor::from_ring(t.shape().clone(), data)?)
    }
}

/// Signed view of a residue: values above Q/2 are negative.
#[inline]
pub fn to_signed(r: u64) -> i64 {
    if r > HALF_RING {
        r as i64 - RING_MODULUS as i64
    } else {
        r as i64
    }
}

#[inline]
pub fn from_signed(v: i64) -> u64 {
    ring_reduce(v as u64)
}
