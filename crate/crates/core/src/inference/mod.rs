//! Zero-shot classification, retrieval, report aggregation and embedding
//! export.

pub mod export;
pub mod report;
pub mod retrieval;
pub mod zero_shot;

pub use export::{embeddings_tsv, export_embeddings, parse_embeddings, read_embeddings, EmbeddingRow};
pub use report::{aggregate_report, fmt2, round2, EvalReport};
pub use retrieval::{
    avg_topk_cosine, build_index, embed_query, mean_topk_cosine, retrieve, Hit, Modality, Query,
    RetrievalIndex, RetrieveOptions,
};
pub use zero_shot::{
    argmax, class_probabilities, top1_accuracy, zero_shot_predict, Prediction, ProbabilityRule,
    PromptSet, ZeroShotClassifier, DEFAULT_TEMPLATE,
};

use thiserror::Error;

use crate::alignment::AlignError;
use crate::encoders::EncoderError;
use crate::numcore::NumError;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("record {id}: label {label:?} is not in the prompt class set")]
    UnknownLabel { id: String, label: String },
    #[error("template must contain exactly one {{CLS}} placeholder: {0:?}")]
    BadTemplate(String),
    #[error("prompt set has no classes")]
    NoClasses,
    #[error("duplicate class name {0:?}")]
    DuplicateClass(String),
    #[error("no samples")]
    NoSamples,
    #[error("literal probability rule needs positive similarities, got {0}")]
    NonPositiveSimilarity(f64),
    #[error("argmax differs between probability rules (softmax {softmax}, literal {literal})")]
    ArgmaxDisagreement { softmax: usize, literal: usize },
    #[error("unknown dataset name {0:?}")]
    UnknownDatasetName(String),
    #[error("duplicate dataset name {0:?}")]
    DuplicateDataset(String),
    #[error("k={k} exceeds the {size} available items")]
    KTooLarge { k: usize, size: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("duplicate index id {0:?}")]
    DuplicateId(String),
    #[error("index has {ids} ids but {rows} rows")]
    IndexShape { ids: usize, rows: usize },
    #[error("index row {id:?} has norm {norm}, expected 1")]
    NotUnitNorm { id: String, norm: f64 },
    #[error("query has dimension {found}, index has {expected}")]
    QueryDim { expected: usize, found: usize },
    #[error("record {0:?} has no caption")]
    MissingCaption(String),
    #[error("{field} contains a tab or newline: {value:?}")]
    InvalidField { field: String, value: String },
    #[error("malformed embedding TSV at line {line}")]
    BadTsv { line: usize },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Align(#[from] AlignError),
}

impl From<EncoderError> for InferenceError {
    fn from(e: EncoderError) -> Self {
        Self::Align(e.into())
    }
}

impl From<NumError> for InferenceError {
    fn from(e: NumError) -> Self {
        Self::Align(e.into())
    }
}
