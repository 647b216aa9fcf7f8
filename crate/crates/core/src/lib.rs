//! Temporal structure kit: differentiable temporal feature aggregation for
//! segmented multi-label sequence classification and continuous per-frame
//! activity detection over precomputed T×D feature sequences.
//!
//! The building blocks:
//!
//! * [`tensor`] — f64 tensors with a define-by-run tape for reverse-mode
//!   gradients;
//! * [`filters`] — learnable strided-Gaussian sub-event filters and Cauchy
//!   super-event structure filters;
//! * [`heads`] — the aggregation heads (max/mean pooling, temporal pyramid,
//!   temporal convolution, sub-events, bi-LSTM, per-frame baseline,
//!   super-events, sub+super) plus exact parameter counting;
//! * [`train`] — losses, Adam with step decay, deterministic training;
//! * [`eval`] — multi-label AP/mAP, per-frame mAP, accuracy, MAE/RMSE;
//! * [`data`] / [`dataset`] — the TSKF feature format, annotation schemas
//!   and synthetic planted-motif benchmarks;
//! * [`checkpoint`] — the TSKM model checkpoint format.

pub mod checkpoint;
pub mod data;
pub mod dataset;
pub mod eval;
pub mod filters;
pub mod heads;
pub mod tensor;
pub mod train;

use thiserror::Error as ThisError;

#[derive(Debug, ThisError)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] tensor::TensorError),
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error("config error: {0}")]
    Config(String),
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
