//! Budget-aware refinement engine for multiple-choice QA datasets.
//!
//! Given a dataset, target topic and difficulty distributions, and a
//! token budget, the engine plans per-sample editing operations
//! (removal, expansion, generation, distractor rewriting, validation)
//! as a multiple-choice knapsack, executes the plan through a pluggable
//! LLM provider, and reports before/after alignment metrics.

pub mod assignment;
pub mod coverage;
pub mod data;
pub mod difficulty;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod provider;
pub mod synth;
pub mod validator;

pub use error::{Error, Result};
