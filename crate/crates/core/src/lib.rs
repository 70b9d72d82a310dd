//! Toolkit for unified natural-language-explanation (NLE) work: a canonical
//! question-answer-explanation corpus format over seven vision and
//! vision-language tasks, LLM-driven dataset synthesis, a from-scratch NLG
//! metric suite (BLEU, METEOR, ROUGE-L, CIDEr-D) with filtered/unfiltered
//! protocols, a small segment-aware causal language model, and prompt-ensembled
//! zero-shot classification over precomputed embeddings.
//!
//! Numeric code is generic over the scalar type via [`num::Scalar`]
//! (`f32`/`f64`); the aliases below pin the concrete types the CLI uses.

pub mod corpus;
pub mod embedding;
pub mod metrics;
pub mod model;
pub mod num;
pub mod synth;
pub mod tokenizer;
pub mod zeroshot;

/// Model as trained and checkpointed (checkpoints store little-endian f32).
pub type Model32 = model::LanguageModel<f32>;
/// High-precision model used by the finite-difference gradient checker.
pub type Model64 = model::LanguageModel<f64>;
/// Embedding table matching the on-disk f32 format.
pub type EmbeddingTable32 = embedding::EmbeddingTable<f32>;
/// Scalar type metric scores are reported in.
pub type Score = f64;
