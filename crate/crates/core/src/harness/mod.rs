//! Experiment harness: run configuration, data preparation, training with
//! checkpoints, evaluation, ablations, gradient checking and dataset
//! generation.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod eval;
pub mod generate;
pub mod gradcheck;
pub mod train;

use crate::datastore::DataError;
use crate::seqbuild::SeqError;
use inttravel_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error("io {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("{0}")]
    Eval(String),
}

impl From<SeqError> for HarnessError {
    fn from(e: SeqError) -> Self {
        match e {
            SeqError::Data(d) => HarnessError::Data(d),
            other => HarnessError::Config(other.to_string()),
        }
    }
}
