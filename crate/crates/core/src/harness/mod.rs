//! Run configuration, artifact persistence and the end-to-end pipeline
//! behind the command-line tool.

pub mod artifacts;
pub mod commands;
mod config;
pub mod pipeline;

pub use config::{
    AdapterConfig, AllocateConfig, DataConfig, EvalConfig, FeatureSettings, GateConfig, ModelConfig, PretrainSettings,
    RefineSettings, RunConfig, SEED_STREAMS,
};
