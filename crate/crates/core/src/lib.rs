//! Similarity-based active learning for an ensemble text classifier.
//!
//! Confirmed prediction errors of a BiLSTM ensemble are expanded into an
//! unlabeled pool by exact k-nearest-neighbor search under three per-member
//! embedding functions. Entropy and random samplers serve as baselines, and
//! the harness replays swap and add experiments with oracle annotation.

pub mod cli;
pub mod corpus;
pub mod harness;
pub mod neural;
pub mod seeds;
pub mod selection;
