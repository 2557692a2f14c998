// SPDX-License-Identifier: MIT OR Apache-2.0

//! Crate-wide error type.
//!
//! Every variant carries enough context to be reported as a structured
//! `{error_kind, detail}` pair by front ends; [`Error::kind`] returns the
//! stable kind string.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed tensor container: {detail}")]
    MalformedContainer { detail: String },

    #[error("missing tensor `{name}`")]
    MissingTensor { name: String },

    #[error("tensor `{name}` has shape {actual:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("tensor `{name}` contains NaN or infinite elements")]
    NonFiniteTensor { name: String },

    #[error("invalid model spec: {detail}")]
    InvalidSpec { detail: String },

    #[error("{what} is {len} tokens, exceeding the maximum of {max}")]
    SequenceTooLong { what: String, len: usize, max: usize },

    #[error("token id {token} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },

    #[error("malformed tokenizer file: {detail}")]
    MalformedTokenizer { detail: String },

    #[error("template slot error: {detail}")]
    TemplateSlotMissing { detail: String },

    #[error("invalid contrastive pair `{id}`: {detail}")]
    InvalidPair { id: String, detail: String },

    #[error("invalid task item: {detail}")]
    InvalidItem { detail: String },

    #[error("empty batch")]
    EmptyBatch,

    #[error("heterogeneous batch: {detail}")]
    HeterogeneousBatch { detail: String },

    #[error("K = {k} out of range, total unit count is {total}")]
    KOutOfRange { k: usize, total: usize },

    #[error("corrupt mask file: {detail}")]
    CorruptMaskFile { detail: String },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("mask layout does not match model: {detail}")]
    LayoutMismatch { detail: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("heterogeneous masks: {detail}")]
    HeterogeneousMasks { detail: String },

    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable kind string for structured error reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedContainer { .. } => "MalformedContainer",
            Error::MissingTensor { .. } => "MissingTensor",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::NonFiniteTensor { .. } => "NonFiniteTensor",
            Error::InvalidSpec { .. } => "InvalidSpec",
            Error::SequenceTooLong { .. } => "SequenceTooLong",
            Error::TokenOutOfRange { .. } => "TokenOutOfRange",
            Error::MalformedTokenizer { .. } => "MalformedTokenizer",
            Error::TemplateSlotMissing { .. } => "TemplateSlotMissing",
            Error::InvalidPair { .. } => "InvalidPair",
            Error::InvalidItem { .. } => "InvalidItem",
            Error::EmptyBatch => "EmptyBatch",
            Error::HeterogeneousBatch { .. } => "HeterogeneousBatch",
            Error::KOutOfRange { .. } => "KOutOfRange",
            Error::CorruptMaskFile { .. } => "CorruptMaskFile",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::LayoutMismatch { .. } => "LayoutMismatch",
            Error::EmptyDataset => "EmptyDataset",
            Error::HeterogeneousMasks { .. } => "HeterogeneousMasks",
            Error::Io(_) => "IoFailure",
            Error::Json(_) => "MalformedJson",
        }
    }
}
