//! Skeleton-conditioned voxel generation with a frozen flow-matching backbone.

pub mod adapter;
pub mod backbone;
pub mod config;
pub mod data;
pub mod encoder;
mod error;
pub mod flow;
pub mod layers;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod skeleton;
pub mod train;

pub use error::Error;
