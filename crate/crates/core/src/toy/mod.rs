//! Toy rotary transformer that consumes explicit position IDs.
//!
//! Everything runs on a small reverse-mode tape ([`graph`]) so that the
//! task losses can be differentiated with respect to the memory embeddings
//! and checked against finite differences. Models are generic over
//! [`Real`]; `f64` is the default and `f32` is available through
//! [`ToyModel::cast`].

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;
use thiserror::Error;

use crate::layout::LayoutError;

mod gradcheck;
pub mod graph;
mod mask;
mod model;
mod pipeline;
mod run;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, EPS_RANGE};
pub use mask::{voco_attention_mask, AttentionMask};
pub use model::{
    ForwardInput, ForwardOutput, KvCarrier, LayerKv, LayerWeights, MemoryEmbeddings, ToyConfig, ToyModel, AE_ROW,
    INIT_STD, LM_ROW, RMS_EPS,
};
pub use pipeline::{
    ae_loss, compress_chunk, joint_loss, lm_loss, qa_loss, Carriers, CompressedChunk, Pipeline, PipelineGrads,
    TaskSample, JOINT_ALPHA,
};
pub use run::{attn_dump_csv, default_toy_layout, run_grad_check, run_loss, run_shift_test, AttnStage, RunSpec};
pub use tensor::Mat;

/// Scalar type of the toy model.
pub trait Real: Float + Sum + Debug + Display + Send + Sync + 'static {}

impl<T: Float + Sum + Debug + Display + Send + Sync + 'static> Real for T {}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ToyError {
    #[error("query row {row} attends to nothing")]
    EmptyAttentionRow { row: usize },
    #[error("no target tokens to score")]
    NoTargets,
    #[error("token {token} outside vocabulary of {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("layout does not fit the inputs: {0}")]
    LayoutMismatch(String),
    #[error("non-finite gradient")]
    NonFinite,
    #[error("finite-difference step {0} outside [1e-6, 1e-4]")]
    BadEpsilon(f64),
    #[error("invalid run spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Layout(#[from] LayoutError),
}
