use std::path::PathBuf;

use crate::llm::LlmError;
use crate::sql::SqlError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unparseable model reply for {stage}: {reply:?}")]
    Reply { stage: String, reply: String },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Sql(#[from] SqlError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn reply(stage: impl Into<String>, reply: impl Into<String>) -> Self {
        Error::Reply {
            stage: stage.into(),
            reply: reply.into(),
        }
    }
}
