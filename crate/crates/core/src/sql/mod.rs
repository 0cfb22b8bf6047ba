//! Embedded SQL harness: read-only execution against SQLite databases,
//! result comparison, and clause-level decomposition of queries.

mod decompose;
mod exec;
mod normalize;
mod shape;
mod value;

pub use decompose::{decompose, ClauseDecomposition, SetOperation};
pub use exec::{execute, Database, DatabasePool, DEFAULT_TIMEOUT};
pub use normalize::{has_top_level_order_by, parse_query, NormalizedQuery};
pub use shape::{classify_difficulty, QueryShape};
pub use value::{compare_results, ResultSet, SqlValue};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SqlError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("query exceeded the {0:?} statement timeout")]
    Timeout(std::time::Duration),
    #[error("write statements are rejected: {0}")]
    WriteRejected(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        message: String,
        line: u64,
        column: u64,
    },
    #[error("unsupported query form: {0}")]
    Unsupported(String),
    #[error("database error: {0}")]
    Database(String),
}
