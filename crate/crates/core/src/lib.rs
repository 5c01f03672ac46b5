//! Keypoint tracking with a frozen correlation tracker whose per-keypoint
//! appearance embedding is optimized against a few labeled frames.
//!
//! [`pipeline`] ties the pieces together. [`synth`] renders benchmark scenes
//! with exact ground truth, [`metrics`] scores tracks, and [`smooth`]
//! post-processes them.

// Validation writes `!(x > 0.0)` so NaN fails too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adam;
pub mod error;
pub mod features;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod smooth;
pub mod synth;
pub mod tracker;
pub mod ttopt;

pub use error::{Error, Result};
