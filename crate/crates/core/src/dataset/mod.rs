//! Manifest ingestion, captioning, splits, tokenization and batching.

pub mod batch;
pub mod caption;
pub mod fvecs;
pub mod manifest;
pub mod split;
pub mod vocab;

pub use batch::{batch_indices, Batch, PairedSet, DEFAULT_BATCH_SIZE};
pub use caption::attach_captions;
pub use fvecs::{read_fvecs, write_fvecs};
pub use manifest::{
    class_names, load_manifest, read_manifest, resolve_features, write_manifest, Manifest,
    PairRecord, Sample, Split,
};
pub use split::{split_records, SplitRatios};
pub use vocab::{tokenize, Vocab, MAX_TOKENS, PAD_ID, UNK_ID};

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("corrupt fvecs record at byte offset {offset}")]
    CorruptRecord { offset: usize },
    #[error("dimension mismatch at record {record}: expected {expected}, found {found}")]
    DimMismatch {
        expected: usize,
        found: usize,
        record: usize,
    },
    #[error("manifest line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("manifest line {line}: missing field {key:?}")]
    MissingField { line: usize, key: String },
    #[error("record {id:?}: {path} has {available} vectors, index {index} requested")]
    UnresolvedFeature {
        id: String,
        path: String,
        index: usize,
        available: usize,
    },
    #[error("bad split ratios: {0}")]
    BadRatios(String),
    #[error("batch size {0} is below 2")]
    BatchTooSmall(usize),
    #[error("{images} image inputs but {texts} token sequences")]
    PairCountMismatch { images: usize, texts: usize },
    #[error("captioner exited with status {0}")]
    CaptionerFailed(i32),
    #[error("captioner produced an empty caption for {0:?}")]
    EmptyCaption(String),
    #[error("captioner produced {got} captions for {expected} inputs")]
    CaptionCountMismatch { expected: usize, got: usize },
}

impl DatasetError {
    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}
