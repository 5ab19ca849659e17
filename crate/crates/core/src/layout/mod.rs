//! Position-ID layouts for soft-prompt compression frameworks.

mod builders;
mod config;
mod position;
mod uniform;
mod validate;

pub use builders::{decoder_layout, encoder_layout, partition_context, voco_layout};
pub use config::{Framework, LayoutConfig, Scheme, Task};
pub use position::{LayoutEntry, PositionLayout, TokenRole};
pub use uniform::{
    brute_force_optimal_minimax, minimax_bound, minimax_distance, round_half_even, uniform_memory_positions,
    MinimaxOptimum, UniformSpec, ORACLE_MAX_LEN,
};
pub use validate::{validate_layout, CheckResult, CheckStatus, ValidationReport};

/// Names of the validator's checks.
pub mod checks {
    pub use super::validate::{
        CARRIER_IDENTITY, CAUSAL_ORDER, ENTRY_COUNTS, LAYOUT_KIND, MEMORY_IN_RANGE, MINIMAX_OPTIMAL, NON_NEGATIVE,
        SEGMENT_ORDER, UNIQUE_MEMORY,
    };
}

use thiserror::Error;

/// Position IDs are plain signed integers so that malformed layouts can be
/// represented and reported by the validator.
pub type PositionId = i64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LayoutError {
    #[error("more memory tokens than context positions ({memory} > {span})")]
    TooManyMemoryTokens { memory: usize, span: usize },
    #[error("empty {0} sequence")]
    Empty(&'static str),
    #[error("oracle instance too large (L = {0}, limit {ORACLE_MAX_LEN})")]
    OracleTooLarge(usize),
    #[error("chunk index {index} out of range 1..={chunks}")]
    ChunkOutOfRange { index: usize, chunks: usize },
    #[error("invalid layout config: {0}")]
    InvalidConfig(String),
    #[error("layout serialization: {0}")]
    Serde(String),
}
