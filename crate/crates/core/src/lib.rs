//! Dual-view fiber clustering: geometric and functional embeddings of
//! white-matter streamlines, fused by deep embedded clustering.

pub mod autodiff;
pub mod error;
pub mod fiberdata;
pub mod gradcheck;
pub mod finetune;
pub mod infer;
pub mod kmeans;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod pretrain;

pub use error::{Error, Result};
