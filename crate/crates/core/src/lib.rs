//! Sparse-to-dense action tube construction.
//!
//! A video's feature volume is augmented with long-range temporal context,
//! sampled at a per-proposal rate chosen from the predicted dynamic level,
//! detected sparsely, linked greedily through embedding and shift cues, and
//! interpolated back into dense per-frame tubes. The crate also ships the
//! video-mAP evaluator and a seeded synthetic scene generator that drive the
//! command-line pipeline.

pub mod dynamic_level;
pub mod error;
pub mod evaluation;
pub mod feature_plane;
pub mod pipeline;
pub mod spatial_detection;
pub mod synthgen;
pub mod tube_linking;
pub mod tube_model;

pub use error::{Error, Result};
pub use tube_model::{BoundingBox, TemporalProposal, Tube};
