//! Geometry and evaluation toolkit for rotated-region object detection.
//!
//! The crate covers the numeric core of a two-stage oriented detector that
//! turns horizontal proposals into rotated ones: exact rotated-box geometry,
//! offset encoding relative to a rotated anchor, rotated position-sensitive
//! RoI Align, proposal matching, rotated NMS, a small linear box learner,
//! DOTA-style annotation I/O with tiling, and rotated-IoU average precision.

pub mod assigner;
pub mod dota;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod learner;
pub mod nms;
pub mod pipeline;
pub mod roi_align;

pub use error::{Error, ParseError, Result};
