//! Earthquake damage-level assessment by fusing detector evidence.
//!
//! The pipeline per image: a [`detector_backend`] supplies the scene label
//! plus component and damage detections, [`fusion`] turns them into a rule
//! decision, an optional [`meta`] model refines it, and [`evaluate`] scores
//! the final levels against ground truth.

pub mod dataset_io;
pub mod detector_backend;
pub mod evaluate;
pub mod fusion;
pub mod meta;
pub mod pipeline;
pub mod synth;

pub use dataset_io::DamageLevel;
