//! Sinusoidal and rotary position encodings, and measurements of how
//! strongly each favours nearby positions.
//!
//! All analysis runs in `f64`.

mod rope;
mod sinusoidal;

pub use rope::{rope_attention_decay, rope_rotate, unit_vectors, RopeParams};
pub use sinusoidal::{cosine_similarity_curve, mean_similarity_at_offset, sinusoidal_pe, SinusoidalParams};

use thiserror::Error;

pub const DEFAULT_BASE: f64 = 10_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PeError {
    #[error("dimension must be even and positive, got {0}")]
    OddDimension(usize),
    #[error("base must be greater than 1, got {0}")]
    BadBase(f64),
    #[error("vector has {got} entries, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{0}")]
    BadArgument(String),
}

/// Inverse frequency of rotary/sinusoidal pair `i`: `base^(-2i / dim)`.
pub(crate) fn inv_freq(i: usize, dim: usize, base: f64) -> f64 {
    base.powf(-2.0 * i as f64 / dim as f64)
}

fn check_dim(dim: usize, base: f64) -> Result<(), PeError> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(PeError::OddDimension(dim));
    }
    if base.is_nan() || base <= 1.0 {
        return Err(PeError::BadBase(base));
    }
    Ok(())
}

/// CSV for a decay curve: header `delta,mean_score`.
pub fn decay_csv(curve: &[(usize, f64)]) -> String {
    let mut out = String::from("delta,mean_score\n");
    for (delta, score) in curve {
        out.push_str(&format!("{delta},{}\n", crate::fmt_f64(*score)));
    }
    out
}

/// CSV for a similarity matrix, row-major: header `pos_a,pos_b,cosine`.
pub fn similarity_csv(matrix: &[Vec<f64>]) -> String {
    let mut out = String::from("pos_a,pos_b,cosine\n");
    for (a, row) in matrix.iter().enumerate() {
        for (b, cos) in row.iter().enumerate() {
            out.push_str(&format!("{a},{b},{}\n", crate::fmt_f64(*cos)));
        }
    }
    out
}
