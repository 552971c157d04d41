//! Allocation-only building blocks for synthesizing hallucination-detection
//! training data and scoring detectors.
//!
//! Everything here is pure: no IO, no clocks, no threads. The `halludet`
//! crate layers file formats, the LLM gateway and the CLI on top.

#![no_std]

extern crate alloc;

pub mod corpus;
pub mod metrics;
pub mod normalize;
pub mod perturb;
pub mod prompts;
pub mod repair;
pub mod retry;
pub mod throughput;
pub mod tokenize;

pub use corpus::{GoldSpan, LengthDistribution, Paragraph, QASample, RagTruthCase, TaskType};
pub use metrics::{ConfusionCounts, Metrics};
pub use perturb::{Branch, DatasetStats, PerturbedRecord};
pub use prompts::{PromptText, ReplySchema, StructuredReply};
pub use repair::{DetectorVerdict, RepairMethod, RepairOutcome};
pub use tokenize::{Tokenizer, WhitespacePunctTokenizer};
