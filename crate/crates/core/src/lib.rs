//! Open-world anomaly segmentation over precomputed vision-language
//! embeddings.
//!
//! Given a dense per-pixel embedding map and text embeddings for a known
//! vocabulary, the crate finds regions no known class explains, names them by
//! matching candidate labels against that region, extends the vocabulary with
//! the chosen names, and scores the result with the usual anomaly
//! segmentation metrics.

pub mod fixture;
pub mod graphcut;
pub mod metrics;
pub mod openworld;
pub mod pipeline;
pub mod simcore;
pub mod tagging;
pub mod tensor_io;
