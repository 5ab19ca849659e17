//! Position layouts for soft-prompt context compression.
//!
//! Three parts:
//!
//! - [`layout`]: default (DPL) and enhanced (EPL = uniform + consistent)
//!   position-ID layouts for encoder and decoder sequences, a brute-force
//!   minimax oracle, and a layout validator.
//! - [`pe`]: sinusoidal and rotary position encodings plus locality
//!   measurements.
//! - [`toy`]: a small rotary attention model that consumes layouts at
//!   explicit position IDs, with chunked compression, AE/LM/QA losses and
//!   finite-difference gradient checking.

pub mod layout;
pub mod pe;
pub mod toy;

/// Formats a float with 17 significant digits, the CSV convention used
/// throughout this crate.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
