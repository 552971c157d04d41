//! Hallucination-detection data tooling: corpus loaders, an LLM gateway,
//! the perturbation pipeline, the detector evaluator and the CLI behind
//! them. Pure logic lives in `halludet-core`.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod evaluator;
pub mod gateway;
pub mod manifest;
pub mod perturb;

pub use halludet_core as core;
