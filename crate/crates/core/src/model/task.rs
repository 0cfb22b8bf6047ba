use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
    Extra,
}

impl Difficulty {
    pub const ALL: [Difficulty; 4] = [Self::Easy, Self::Medium, Self::Hard, Self::Extra];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Easy => "easy",
            Self::Medium => "medium",
            Self::Hard => "hard",
            Self::Extra => "extra",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "easy" => Ok(Self::Easy),
            "medium" => Ok(Self::Medium),
            "hard" => Ok(Self::Hard),
            "extra" | "extra hard" | "extra_hard" => Ok(Self::Extra),
            other => Err(format!("unknown difficulty {other:?}")),
        }
    }
}

/// One natural-language question over a database, with its optional gold
/// query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    /// Position in the source file.
    pub index: usize,
    pub question: String,
    pub db_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_query: Option<String>,
    /// Label carried by the source file, if any. Never trusted for scoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
}

impl TaskInstance {
    pub fn new(index: usize, db_id: impl Into<String>, question: impl Into<String>) -> Self {
        TaskInstance {
            index,
            question: question.into(),
            db_id: db_id.into(),
            gold_query: None,
            difficulty: None,
        }
    }

    pub fn with_gold(mut self, gold: impl Into<String>) -> Self {
        self.gold_query = Some(gold.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Initial,
    SelfCorrected,
    EnsembleFinal,
}

/// A generated SQL query with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateQuery {
    pub sql: String,
    pub strategy_id: String,
    pub stage: Stage,
    /// Ids of every transcript that contributed to this query.
    #[serde(default)]
    pub transcript_refs: Vec<String>,
    /// Final sandbox verdict, when self-correction ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<String>,
}

impl CandidateQuery {
    pub fn new(sql: impl Into<String>, strategy_id: impl Into<String>) -> Self {
        CandidateQuery {
            sql: sql.into(),
            strategy_id: strategy_id.into(),
            stage: Stage::Initial,
            transcript_refs: Vec::new(),
            verdict: None,
        }
    }
}
