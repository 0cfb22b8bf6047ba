//! Execution-validated self-correction: candidates run on a synthetic
//! sandbox database and failures are revised with a fixed list of tips.

mod sandbox;

pub use sandbox::{
    generate_sandbox, parse_expected_rows, parse_sandbox, validate_candidate, SandboxRecord, SandboxSpec,
    TableInserts, ValidationOutcome, Verdict, ROWS_PER_TABLE,
};

use crate::error::{Error, Result};
use crate::llm::{ChatRequest, Gateway};
use crate::model::{CandidateQuery, DatabaseSchema, Stage};
use crate::prompt::{extract_sql, schema_ddl, Templates};

pub const TIP_COUNT: usize = 7;

const STANDARD_TIPS: [&str; TIP_COUNT] = [
    "When using the 'GROUP BY' clause, consider prioritizing the primary key if it aligns logically with the requirements of question. Often, you may need to group by other columns to achieve meaningful data summaries and analyses.",
    "Use clauses 'LEFT JOIN', 'CAST', 'REPLACE', 'DATEDIFF', 'IN', and 'OR' judiciously, and replace '<>' with '!=' in your generation.",
    "Ensure that join operations are executed correctly by avoiding redundant joins, unnecessary nested queries, or missing essential joins between tables.",
    "Whenever possible, opt for join clauses instead of nested queries in your SQL statements.",
    "If applicable, prefer using COUNT(*) over COUNT(column_name) when you only need to count rows.",
    "For questions aimed at identifying extremes such as the youngest, oldest, or top minimum or maximum values, opt for employing LIMIT in conjunction with ORDER BY, or utilize the MIN or MAX functions directly. This avoids the complexity and performance issues associated with nested queries and is especially effective for managing large datasets efficiently.",
    "Please provide a case-insensitive SQL query by possibly incorporating the LOWER() or UPPER() functions within the SQL query.",
];

/// The revision tips, always exactly seven.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TipsList {
    tips: Vec<String>,
}

impl TipsList {
    pub fn standard() -> Self {
        TipsList { tips: STANDARD_TIPS.iter().map(|t| t.to_string()).collect() }
    }

    pub fn new(tips: Vec<String>) -> Result<Self> {
        if tips.len() != TIP_COUNT || tips.iter().any(|t| t.trim().is_empty()) {
            return Err(Error::Config(format!("expected {TIP_COUNT} non-empty tips, got {}", tips.len())));
        }
        Ok(TipsList { tips })
    }

    pub fn tips(&self) -> &[String] {
        &self.tips
    }

    /// Numbered list, one tip per line.
    pub fn render(&self) -> String {
        self.tips
            .iter()
            .enumerate()
            .map(|(i, t)| format!("{}. {t}", i + 1))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl Default for TipsList {
    fn default() -> Self {
        Self::standard()
    }
}

/// Asks for a corrected query given the failed one, what went wrong, and
/// the tips.
pub fn revise_with_tips(
    gateway: &Gateway,
    templates: &Templates,
    candidate: &CandidateQuery,
    schema: &DatabaseSchema,
    question: &str,
    outcome: &ValidationOutcome,
    tips: &TipsList,
) -> Result<CandidateQuery> {
    if outcome.verdict == Verdict::Pass {
        return Err(Error::Precondition("revision requested for a passing candidate".into()));
    }
    let prompt = templates.render(
        "revise",
        &[
            ("schema", &schema_ddl(schema)),
            ("question", question),
            ("query", &candidate.sql),
            ("detail", &outcome.detail),
            ("tips", &tips.render()),
        ],
    )?;
    let reply = gateway.complete(&ChatRequest::user("sc-revise", prompt))?;
    let sql = extract_sql(&reply.text).ok_or_else(|| Error::reply("sc-revise", reply.text.clone()))?;
    let mut revised = candidate.clone();
    revised.sql = sql;
    revised.stage = Stage::SelfCorrected;
    revised.transcript_refs.push(reply.transcript_id);
    Ok(revised)
}

/// Validate, then revise and re-validate up to `max_rounds` times. A
/// candidate that passes is returned with its SQL untouched; the final
/// verdict is recorded on the returned candidate either way.
#[allow(clippy::too_many_arguments)]
pub fn self_correct_loop(
    gateway: &Gateway,
    templates: &Templates,
    candidate: &CandidateQuery,
    schema: &DatabaseSchema,
    question: &str,
    sandbox: &SandboxSpec,
    tips: &TipsList,
    max_rounds: usize,
) -> Result<CandidateQuery> {
    if max_rounds == 0 {
        return Err(Error::Precondition("max_rounds must be at least 1".into()));
    }
    let mut current = candidate.clone();
    current.transcript_refs.extend(sandbox.transcript_refs.iter().cloned());
    let mut outcome = validate_candidate(&current, sandbox)?;
    for _ in 0..max_rounds {
        if outcome.verdict == Verdict::Pass {
            break;
        }
        current = revise_with_tips(gateway, templates, &current, schema, question, &outcome, tips)?;
        outcome = validate_candidate(&current, sandbox)?;
    }
    current.verdict = Some(outcome.verdict.as_str().to_string());
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::singer_schema;

    fn sandbox() -> SandboxSpec {
        parse_sandbox(&sandbox::tests::reply("[\"Bo\"]\n[\"Di\"]"), &singer_schema()).unwrap()
    }

    fn failing() -> ValidationOutcome {
        ValidationOutcome {
            verdict: Verdict::SyntaxError,
            detail: "near SELEC".into(),
            actual_rows: Default::default(),
        }
    }

    #[test]
    fn tips_are_seven() {
        assert_eq!(TipsList::standard().tips().len(), 7);
        assert!(TipsList::new(vec!["a".into()]).is_err());
        assert_eq!(TipsList::standard().render().lines().count(), 7);
    }

    #[test]
    fn revision_prompt_carries_everything() {
        let gw = Gateway::mock(|r| Some(format!("```sql\nSELECT 1\n```\n{}", r.prompt())));
        let cand = CandidateQuery::new("SELEC name FROM singer", "zero-shot-cr");
        let revised =
            revise_with_tips(&gw, &Templates::builtin(), &cand, &singer_schema(), "Who is old?", &failing(), &TipsList::standard())
                .unwrap();
        assert_eq!(revised.stage, Stage::SelfCorrected);
        assert_eq!(revised.sql, "SELECT 1");
        let prompt = gw.store().all()[0].request.prompt().to_string();
        for tip in STANDARD_TIPS {
            assert!(prompt.contains(tip));
        }
        for needle in ["COUNT(*)", "LIMIT in conjunction with ORDER BY", "SELEC name FROM singer", "near SELEC", "Who is old?", "CREATE TABLE singer"] {
            assert!(prompt.contains(needle), "{needle}");
        }
        let pass = ValidationOutcome { verdict: Verdict::Pass, ..failing() };
        assert!(revise_with_tips(&gw, &Templates::builtin(), &cand, &singer_schema(), "q", &pass, &TipsList::standard()).is_err());
    }

    #[test]
    fn passing_candidate_is_untouched() {
        let gw = Gateway::mock(|_| Some("SELECT 1".into()));
        let cand = CandidateQuery::new("SELECT name  FROM singer WHERE age > 40", "s");
        let out = self_correct_loop(&gw, &Templates::builtin(), &cand, &singer_schema(), "q", &sandbox(), &TipsList::standard(), 1)
            .unwrap();
        assert_eq!(out.sql, cand.sql);
        assert_eq!(out.stage, Stage::Initial);
        assert_eq!(out.verdict.as_deref(), Some("pass"));
        assert_eq!(gw.requests_tagged("sc-revise"), 0);
    }

    #[test]
    fn bounded_rounds() {
        let gw = Gateway::mock(|r| {
            let n = r.prompt().matches("WHERE age > ").count();
            Some(format!("SELECT name FROM singer WHERE age > {}", 100 + n))
        });
        let cand = CandidateQuery::new("SELECT name FROM singer WHERE age > 99", "s");
        let out = self_correct_loop(&gw, &Templates::builtin(), &cand, &singer_schema(), "q", &sandbox(), &TipsList::standard(), 2)
            .unwrap();
        assert_eq!(gw.requests_tagged("sc-revise"), 2);
        assert_eq!(out.verdict.as_deref(), Some("mismatch"));
    }

    #[test]
    fn scripted_fix_flips_to_pass() {
        let gw = Gateway::mock(|_| Some("SELECT name FROM singer WHERE age > 40;".into()));
        let cand = CandidateQuery::new("SELECT name FROM singer WHERE age < 40", "s");
        let out = self_correct_loop(&gw, &Templates::builtin(), &cand, &singer_schema(), "q", &sandbox(), &TipsList::standard(), 3)
            .unwrap();
        assert_eq!(gw.requests_tagged("sc-revise"), 1);
        assert_eq!(out.verdict.as_deref(), Some("pass"));
        assert_eq!(out.stage, Stage::SelfCorrected);
        assert_eq!(out.sql, "SELECT name FROM singer WHERE age > 40");
    }
}
