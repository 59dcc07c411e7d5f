//! Deterministic differentiable numerics: tensors, a reverse-mode tape with
//! the layer primitives the model needs, a parameter store with frozen
//! flags, Adam, checkpoints and parameter accounting.

pub mod accounting;
pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod tensor;

use thiserror::Error;

pub use accounting::{count_params, ParamAccounting, ParamRow};
pub use config::{AdapterBlocks, HookPosition, ModelConfig};
pub use gradcheck::grad_check;
pub use graph::{Gradients, Graph, Var};
pub use optim::Adam;
pub use params::{Binder, Param, ParamStore};
pub use tensor::{Scalar, Tensor};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
