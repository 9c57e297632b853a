//! Dense `f64` tensors, a per-pass computation graph with reverse-mode
//! differentiation, a finite-difference gradient checker, AdamW, and a
//! binary checkpoint container.

mod checkpoint;
mod gradcheck;
mod graph;
mod optim;
mod params;
pub mod seed;
mod tensor;

pub use checkpoint::Checkpoint;
pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport, ParamError, WorstCoordinate};
pub use graph::{Gradients, Graph, Var, PROB_CLAMP};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Binding, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("numeric error in {op}: {detail}")]
    Numeric { op: &'static str, detail: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
