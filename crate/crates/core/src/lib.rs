//! formrl: extract description→formulation pairs from LaTeX-bearing markdown,
//! distill labeled chain-of-thought datasets through an abstract LLM-client
//! boundary, and train a small autoregressive policy with supervised
//! fine-tuning (low-rank adapter) followed by rule-reward reinforcement
//! learning with a greedy-rollout baseline.
//!
//! The crate is organized as a pipeline:
//!
//! 1. [`corpus`] — markdown ingestion and pair extraction
//! 2. [`textmetrics`] — edit distance, n-gram tables, repetition scoring
//! 3. [`rewards`] — the rule-based reward engine
//! 4. [`distill`] — SFT/DPO/KTO dataset construction behind an LLM client trait
//! 5. [`tinylm`] — linear-softmax policy, LoRA-style adapter, SFT training
//! 6. [`cremax`] — greedy-baseline policy gradient with KL regularization
//! 7. [`cli`] — the `formrl` binary surface
//!
//! All numeric code is generic over the [`scalar::Real`] scalar (`f32` or
//! `f64`); the aliases below pin the common instantiations.

pub mod cli;
pub mod corpus;
pub mod cremax;
pub mod distill;
pub mod error;
pub mod rewards;
pub mod scalar;
pub mod seed;
pub mod textmetrics;
pub mod tinylm;

pub use error::{Error, Result};
pub use scalar::Real;

/// `f64` policy, the default for training and the CLI.
pub type TinyPolicy64 = tinylm::TinyPolicy<f64>;
/// `f32` policy, for memory-constrained experiments.
pub type TinyPolicy32 = tinylm::TinyPolicy<f32>;
/// `f64` reward configuration.
pub type RewardSpec64 = rewards::RewardSpec<f64>;
/// `f32` reward configuration.
pub type RewardSpec32 = rewards::RewardSpec<f32>;
/// `f64` reward breakdown.
pub type RewardBreakdown64 = rewards::RewardBreakdown<f64>;
/// `f64` RL configuration.
pub type CremaxConfig64 = cremax::CremaxConfig<f64>;
/// `f64` SFT configuration.
pub type SftConfig64 = tinylm::SftConfig<f64>;
