//! Perception-guided trigger-word tuning for street-view renewal edits.
//!
//! A street-view image with a detected disorder factor is edited with the
//! prompt `"{trigger} {target} in a street"`, scored by perception models for
//! safety, beauty and liveliness, and the trigger word is chosen by Bayesian
//! optimization over a word-embedding vocabulary.

pub mod embedding;
pub mod gateway;
pub mod metrics;
pub mod optimizer;
pub mod pipeline;
pub mod prompt;
pub mod seeds;
pub mod synthetic;
