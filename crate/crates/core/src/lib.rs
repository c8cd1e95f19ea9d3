//! Temporal-fusion segmentation for grayscale X-ray baggage screening.
//!
//! The pipeline: consecutive single-channel scans of one bag are stacked in
//! triples into 3-channel inputs ([`fusion`]), pushed through a multi-scale
//! residual encoder-decoder ([`network`]), trained under per-pixel
//! cross-entropy with SGD momentum ([`training`]), and evaluated with
//! pixel metrics and box-level mean average precision ([`metrics`]).
//! Predicted masks turn into detection boxes via connected components
//! ([`boxgen`]). [`dataset`] handles corpus layout, splits and synthetic
//! test data.

pub mod boxgen;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
