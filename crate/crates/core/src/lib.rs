//! Driving-scene question answering pipeline: corpus loading, key-object
//! augmentation, depth enrichment, prompt construction, two-stage inference
//! against a pluggable vision-language backend, multi-system fusion and
//! scoring.

pub mod augment;
pub mod config;
pub mod dataset;
pub mod depth;
pub mod fusion;
pub mod metrics;
pub mod normalize;
pub mod orchestrator;
pub mod par;
pub mod pipeline;
pub mod prompting;
