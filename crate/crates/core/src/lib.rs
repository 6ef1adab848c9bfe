//! Scalar reward models trained with margin-augmented Bradley-Terry objectives.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! - [`model`]: feed-forward reward scorer with hand-derived gradients
//! - [`losses`]: plain, fixed-margin, batch-adaptive and threshold-filtered objectives
//! - [`training`]: deterministic mini-batch AdamW training
//! - [`data`]: synthetic preferences from a ground-truth oracle, text featurizer, JSONL I/O
//! - [`analytics`]: accuracy, margin moments and histograms
//! - [`bestofn`]: Best-of-N selection judged by the oracle
//! - [`cli`]: config-driven experiment commands

pub mod analytics;
pub mod bestofn;
pub mod cli;
pub mod data;
pub mod error;
pub mod losses;
pub mod model;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
