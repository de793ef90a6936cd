//! Traffic-scenario clustering driven by random-forest activation patterns (RFAPs).
//!
//! The crate is organised along the processing chain:
//!
//! * [`scenario`] builds occupancy-grid scenario tensors (synthetic generator,
//!   highD ingestion, temporal shuffling, augmentation, splits, persistence).
//! * [`nn`] is a small 3D-CNN engine with exact backward passes, the training
//!   losses and an SGD optimiser.
//! * [`urf`] trains unsupervised random forests, indexes their nodes with the
//!   path-encoding digit scheme and turns terminal indices into similarities.
//! * [`pipeline`] runs self-supervised pre-training, fine-tuning and the
//!   iterative clustering loop.
//! * [`eval`] holds clustering accuracy, k-means, silhouette-based cluster
//!   count estimation and the alternative similarity measures.

pub mod error;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod scenario;
pub mod urf;

pub use error::{Error, Result};
