//! Scoring: execution accuracy, clause matching, difficulty and error
//! classification, and report aggregation.

mod errors;
mod metrics;
mod report;

pub use errors::{classify_error, ErrorCategory};
pub use metrics::{component_match, execution_accuracy, ClauseReport};
pub use report::{aggregate, error_distribution_csv, write_error_csv, Bucket, EvaluationRecord, RunReport};

use crate::error::{Error, Result};
use crate::model::{DatabaseSchema, TaskInstance};
use crate::sql::{classify_difficulty, Database};

/// Scores one prediction against the instance's gold query.
pub fn evaluate_instance(
    instance: &TaskInstance,
    predicted: &str,
    db: &Database,
    schema: &DatabaseSchema,
) -> Result<EvaluationRecord> {
    let gold = instance
        .gold_query
        .as_deref()
        .ok_or_else(|| Error::Precondition(format!("instance {} has no gold query", instance.index)))?;
    let difficulty =
        classify_difficulty(gold).map_err(|e| Error::Integrity(format!("gold query does not parse: {e}")))?;
    let exec_match = execution_accuracy(gold, predicted, db)?;
    let clause_report = component_match(gold, predicted)?;
    let (error_category, error_subtype) = if exec_match {
        (None, None)
    } else {
        let (c, s) = classify_error(gold, predicted, schema)?;
        (Some(c), Some(s))
    };
    Ok(EvaluationRecord {
        index: instance.index,
        db_id: instance.db_id.clone(),
        question: instance.question.clone(),
        gold: gold.to_string(),
        predicted: predicted.to_string(),
        exec_match,
        clause_report,
        difficulty,
        error_category,
        error_subtype,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::singer_schema;
    use crate::model::Difficulty;

    #[test]
    fn record_invariants() {
        let db = Database::from_script(
            "CREATE TABLE singer (singer_id INTEGER PRIMARY KEY, name TEXT, country TEXT, age INTEGER);
             INSERT INTO singer VALUES (1, 'Ann', 'France', 30), (2, 'Bo', 'Spain', 41);",
        )
        .unwrap();
        let inst = TaskInstance::new(3, "singers", "Names of old singers?")
            .with_gold("SELECT name FROM singer WHERE age > 35");
        let ok = evaluate_instance(&inst, "SELECT name FROM singer WHERE 35 < age", &db, &singer_schema()).unwrap();
        assert!(ok.exec_match && ok.error_category.is_none());
        assert_eq!(ok.difficulty, Difficulty::Easy);
        let bad = evaluate_instance(&inst, "SELECT name, age FROM singer WHERE age > 35", &db, &singer_schema()).unwrap();
        assert!(!bad.exec_match);
        assert_eq!(bad.error_category, Some(ErrorCategory::Other));
        assert_eq!(bad.error_subtype.as_deref(), Some("select"));
        assert!(evaluate_instance(&TaskInstance::new(0, "s", "q"), "SELECT 1", &db, &singer_schema()).is_err());
    }
}
