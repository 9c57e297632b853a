//! Dynamic scene graph model: object sequence encoding, predicate embedding
//! generation, prototype memory diffusion and a Gaussian-mixture predicate
//! head, with training and evaluation drivers.

pub mod attention;
pub mod config;
pub mod eval;
pub mod gmm;
pub mod memory;
pub mod model;
pub mod ospu;
pub mod peg;
pub mod train;

pub use config::{ModelConfig, RunConfig, Toggles, TrainConfig};
pub use eval::{class_flips, evaluate_corpus, predict_corpus, OraclePredictor, Predictions, Predictor, VideoOutput};
pub use memory::MemoryBank;
pub use model::{compute_memory_bank, Model, Pass, VideoBatch};
pub use train::{train, EpochLog};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] dsgg_autodiff::Error),
    #[error(transparent)]
    Metrics(#[from] dsgg_metrics::Error),
    #[error(transparent)]
    Synth(#[from] dsgg_synth::Error),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid config field `{field}`: {message}")]
    Config { field: &'static str, message: String },
    #[error("numeric failure at epoch {epoch}, step {step}: {detail}")]
    Numeric { epoch: usize, step: u64, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Converts every video of `corpus` for `task`, training targets taken from
/// the observed labels.
pub fn corpus_batches(corpus: &dsgg_synth::Corpus, task: dsgg_metrics::TaskMode) -> Result<Vec<VideoBatch>> {
    corpus
        .videos
        .iter()
        .map(|v| {
            VideoBatch::from_annotation(v, task, corpus.header.predicate_classes, dsgg_synth::LabelSource::Observed)
        })
        .collect()
}
