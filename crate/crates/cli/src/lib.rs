//! Command line pipeline, synthetic data generator and HTTP session
//! service built on `flim-core`.

pub mod commands;
pub mod config;
pub mod render;
pub mod service;
pub mod synth;

pub use config::PipelineConfig;
