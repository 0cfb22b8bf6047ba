//! Text-to-SQL prompting pipeline with chain-of-thought exemplars,
//! sandbox self-correction and ensemble refinement, plus a Spider-style
//! evaluation harness (execution accuracy, clause matching, hardness and
//! error classification).
//!
//! Every model interaction goes through [`llm::Gateway`], which records a
//! content-addressed transcript for each request so complete runs can be
//! replayed offline.

pub mod correction;
pub mod cot;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod llm;
pub mod model;
pub mod pipeline;
pub mod prompt;
pub mod selection;
pub mod sql;

pub use error::{Error, Result};
