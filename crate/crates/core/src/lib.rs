//! In-context identity prediction for multi-object tracking.
//!
//! Detections carry appearance features. Each live trajectory owns a word from
//! a learnable dictionary, and a transformer decoder classifies every new
//! detection as one of those words or as a newborn.

pub mod checkpoint;
pub mod dataset;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod id_core;
pub mod inference;
pub mod kv;
pub mod mot;
mod par;
pub mod real;
pub mod scene;
pub mod training;

pub use error::{Error, Result};
pub use par::{map, map_range, ExecMode};
pub use real::Real;
