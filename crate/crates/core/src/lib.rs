//! Synthetic traffic-sign benchmark factory and cross-design evaluation harness.

pub mod catalog;
pub mod config;
pub mod corruption;
pub mod dataset;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod placeholder;
pub mod raster;
pub mod rng;
pub mod synthesis;
pub mod xai;
