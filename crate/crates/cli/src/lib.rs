//! Pipeline plumbing behind the `spikekit` command.

pub mod config;
pub mod embeddings;
pub mod exit;
pub mod fewshot;
pub mod frames;
pub mod model;
pub mod pipeline;
pub mod provenance;
pub mod synth;
