//! Synthetic long-tailed video scene-graph corpora.
//!
//! The generator models the usual noise sources of video relationship data:
//! a Zipf-distributed predicate vocabulary, multi-label pairs, missing and
//! flipped annotations, drifting object appearance with occasional blur
//! bursts, and a noisy detector.

mod annotation;
mod config;
mod generate;

pub use annotation::{
    read_annotations, write_annotations, BoundingBox, Corpus, CorpusHeader, FrameRecord, LabelSource, ObjectRecord,
    PairRecord, VideoAnnotation, FORMAT_NAME, FORMAT_VERSION,
};
pub use config::{parse_kv, GeneratorConfig};
pub use generate::{generate, zipf_weights};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid config field `{field}`: {message}")]
    Config { field: &'static str, message: String },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
