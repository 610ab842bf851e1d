//! Segmentation uncertainty toolkit: stochastic segmentation sampling,
//! evidential and variational losses, segmentation and uncertainty metrics,
//! ring-region features and the downstream clinical classifier.

pub mod classify;
pub mod error;
pub mod features;
pub mod grid;
pub mod losses;
pub mod seed;
pub mod seg_metrics;
pub mod special;
pub mod stochastic;
pub mod synth;
pub mod uq_metrics;
pub mod vgf;

pub use error::{Error, Result};
