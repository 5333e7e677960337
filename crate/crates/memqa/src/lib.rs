//! A retrieval toolkit for question answering over stored personal memories.
//!
//! A corpus is a set of QA groups: one question plus every memory a user has
//! stored, each labeled relevant or irrelevant. Models score each
//! question-memory pair independently; quality is measured by per-group F1,
//! macro-averaged over groups. Besides plain cross-entropy training, the
//! toolkit optimizes the group F1 directly through REINFORCE policy gradients
//! (with an optional greedy-decoding baseline) and through a smooth
//! differentiable F1 surrogate.
//!
//! Module map:
//!
//! - [`corpus`]: QA group data model, JSONL I/O, text preprocessing, corpus
//!   statistics, and a synthetic corpus generator.
//! - [`embeddings`]: pretrained word-vector tables and padded feature
//!   encoding for words and characters.
//! - [`ndcore`]: dense `f64` tensors, reverse-mode autodiff, Adam, and a
//!   finite-difference gradient checker.
//! - [`models`]: cosine baselines, the character CNN word embedder, and the
//!   ChrWrdFF / TEFF / TEFFCH scorers.
//! - [`objectives`]: cross-entropy, REINFORCE (RV1/RV2), smooth F1, the MTL
//!   mixture, the shaped group reward, and an exact enumeration oracle.
//! - [`training`]: batching, the two-phase curriculum trainer, and binary
//!   checkpoints.
//! - [`evaluation`]: threshold sweeps and macro-averaged P/R/F1 reports.

pub mod corpus;
pub mod embeddings;
pub mod evaluation;
pub mod models;
pub mod ndcore;
pub mod objectives;
pub mod training;

mod error;

pub use error::{Error, Result};
