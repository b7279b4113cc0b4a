//! S/I/F token sequences with per-task label channels, vocabularies and
//! padded batches.

mod batch;
mod sequence;
mod vocab;

pub use batch::{batchify, Batch, BatchOptions, TaskLabels};
pub use sequence::{
    build_labeled_sequence, derive_labels, when_bucket, LabeledSequence, Labels, SeqError, SeqToken, Token, TokenKind,
    TIME_BUCKETS,
};
pub use vocab::{Vocab, VocabSizes, Vocabularies};
