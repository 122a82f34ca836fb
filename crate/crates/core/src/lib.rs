//! Legal case retrieval via crime-anchored sub-fact matching.
//!
//! Long case documents are reformulated into short crime-titled sub-facts
//! through a knowledge-guided LLM prompting pipeline, embedded with a small
//! trainable encoder, and matched with a multi-vector MaxSim/Sum model that
//! is trained by dual-level contrastive learning. Lexical BM25/TF-IDF
//! rankers and MAP/P@k/NDCG@k evaluation round out the pipeline.

pub mod baselines;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod io;
pub mod labeling;
pub mod llm;
pub mod pipeline;
pub mod reformulate;
pub mod scoring;
pub mod synth;
pub mod text;
pub mod training;

/// Upper bound on sub-facts kept per case.
pub const MAX_SUBFACTS: usize = 4;

/// Word budget for each sub-fact field (cause, procedure, outcome).
pub const MAX_FIELD_WORDS: usize = 100;
