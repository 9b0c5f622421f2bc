//! GASC: a genre-aware dynamic Bayesian mixture model of word senses.
//!
//! The model describes occurrences of a polysemous target word as draws from
//! one of `K` senses. Each sense is a time-indexed distribution over context
//! words, and the prior probability of each sense depends on the text genre
//! of the document the occurrence came from. Both the per-genre sense weights
//! and the per-sense word weights evolve over discrete time slices as
//! Gaussian random walks on the unconstrained (pre-softmax) scale.
//!
//! The crate provides:
//!
//! - [`corpus`]: corpus and annotation ingestion, snippet extraction,
//!   vocabularies, genre mapping, train/test splits;
//! - [`model`]: parameter space, forward simulation, snippet likelihoods;
//! - [`inference`]: the blocked Gibbs sampler and a joint-distribution
//!   validation harness for its kernels;
//! - [`eval`]: held-out log-likelihood, sense matching against expert
//!   annotation, weighted precision/recall, rank correlations;
//! - [`cli`]: batch experiment drivers behind the `gasc` binary.

pub mod cli;
pub mod corpus;
pub mod eval;
pub mod inference;
pub mod model;

pub use corpus::{Corpus, ExpertAnnotation, Snippet, Vocabulary};
pub use model::{ModelConfig, ModelState, Preset, SampleSet, Variant};
