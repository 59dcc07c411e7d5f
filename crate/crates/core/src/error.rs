use thiserror::Error;

use crate::backbone::GridError;
use crate::data::DataError;
use crate::metrics::MetricError;
use crate::nn::NnError;
use crate::skeleton::SkeletonError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("frozen backbone changed: hash {before} became {after}")]
    FrozenViolation { before: String, after: String },
    #[error("mask {0} outside the latent grid")]
    MaskOutOfBounds(String),
    #[error("{0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn file(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::File {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
