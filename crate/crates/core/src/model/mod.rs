//! Shared domain types: schemas, task instances, candidate queries,
//! prompting strategies and run configuration.

mod config;
mod schema;
mod spider;
mod strategy;
mod task;

pub use config::{Backend, LiveSettings, RunConfig, RunPaths, DEFAULT_MS_EPOCHS};
pub use schema::{validate_schema, Column, DatabaseSchema, ForeignKey, TableDef};
pub use spider::{load_schemas, load_spider_dataset, load_instances, schemas_to_spider_json};
pub use strategy::{CotMode, PromptStrategy, Representation, Selection};
pub use task::{CandidateQuery, Difficulty, Stage, TaskInstance};

/// Case-insensitive identifier equality.
pub fn ident_eq(a: &str, b: &str) -> bool {
    a.eq_ignore_ascii_case(b)
}

#[cfg(test)]
pub(crate) use schema::fixtures;
