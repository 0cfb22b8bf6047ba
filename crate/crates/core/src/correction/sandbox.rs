use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use sqlparser::ast::{ObjectName, SetExpr, Statement};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::parser::Parser;

use crate::error::{Error, Result};
use crate::llm::{ChatRequest, Gateway, Message, Role};
use crate::model::{CandidateQuery, DatabaseSchema};
use crate::prompt::{quote_ident, schema_ddl, Templates};
use crate::sql::{compare_results, Database, ResultSet, SqlError, SqlValue};

pub const ROWS_PER_TABLE: usize = 5;

const OUTCOME_MARKER: &str = "expected outcome:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableInserts {
    pub table: String,
    pub statements: Vec<String>,
}

/// Synthetic rows for every table plus the model's stated answer on them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxSpec {
    /// In schema table order.
    pub inserts: Vec<TableInserts>,
    /// Raw text the model gave as the expected outcome.
    pub expected_outcome: String,
    /// The outcome as rows, when it was a literal row list.
    pub expected_rows: Option<Vec<Vec<SqlValue>>>,
    pub rows_per_table: usize,
    #[serde(default)]
    pub transcript_refs: Vec<String>,
    /// Schema DDL the inserts are loaded against.
    pub ddl: String,
}

impl SandboxSpec {
    pub fn statement_count(&self) -> usize {
        self.inserts.iter().map(|t| t.statements.len()).sum()
    }

    /// Builds a private in-memory database holding the synthetic rows.
    pub fn load(&self) -> Result<Database> {
        load_script(&self.ddl, &self.inserts)
            .map_err(|e| Error::Integrity(format!("sandbox does not load: {e}")))
    }
}

/// Foreign keys are checked separately so insert order does not matter.
fn load_script(ddl: &str, inserts: &[TableInserts]) -> Result<Database, SqlError> {
    let mut script = format!("PRAGMA foreign_keys = OFF;\n{ddl}");
    for t in inserts {
        for s in &t.statements {
            script.push_str(s);
            script.push_str(";\n");
        }
    }
    Database::from_script(&script)
}

/// Audit line for the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxRecord {
    pub db_id: String,
    pub question_hash: String,
    pub inserts: Vec<TableInserts>,
    pub expected_outcome: String,
}

impl SandboxRecord {
    pub fn new(db_id: &str, question: &str, spec: &SandboxSpec) -> Self {
        SandboxRecord {
            db_id: db_id.to_string(),
            question_hash: hex::encode(Sha256::digest(question.as_bytes())),
            inserts: spec.inserts.clone(),
            expected_outcome: spec.expected_outcome.clone(),
        }
    }
}

fn strip_fences(text: &str) -> String {
    text.lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Splits on semicolons outside quoted strings and identifiers.
fn split_statements(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut quote: Option<char> = None;
    for c in text.chars() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None if c == '\'' || c == '"' || c == '`' => quote = Some(c),
            None if c == ';' => {
                out.push(std::mem::take(&mut current));
                continue;
            }
            None => {}
        }
        current.push(c);
    }
    out.push(current);
    out
}

/// Statement text starting at the first line that opens with INSERT.
fn insert_text(piece: &str) -> Option<String> {
    let lines: Vec<&str> = piece.lines().collect();
    let start = lines
        .iter()
        .position(|l| l.trim_start().to_ascii_uppercase().starts_with("INSERT"))?;
    Some(lines[start..].join("\n").trim().to_string())
}

fn last_ident(name: &ObjectName) -> String {
    name.0
        .last()
        .and_then(|p| p.as_ident())
        .map(|i| i.value.clone())
        .unwrap_or_default()
}

/// Checks one INSERT against the schema and returns (table, row count).
fn check_insert(text: &str, schema: &DatabaseSchema) -> Result<(String, usize), String> {
    let parsed = Parser::parse_sql(&SQLiteDialect {}, text).map_err(|e| format!("cannot parse {text:?}: {e}"))?;
    let [Statement::Insert(insert)] = parsed.as_slice() else {
        return Err(format!("not a single INSERT statement: {text:?}"));
    };
    let sqlparser::ast::TableObject::TableName(name) = &insert.table else {
        return Err(format!("unsupported INSERT target in {text:?}"));
    };
    let name = last_ident(name);
    let table = schema.table(&name).ok_or_else(|| format!("table {name} is not in the schema"))?;
    let width = if insert.columns.is_empty() {
        table.columns.len()
    } else {
        for col in &insert.columns {
            let col = last_ident(col);
            if table.column(&col).is_none() {
                return Err(format!("column {name}.{col} is not in the schema"));
            }
        }
        insert.columns.len()
    };
    let Some(SetExpr::Values(values)) = insert.source.as_ref().map(|q| q.body.as_ref()) else {
        return Err(format!("INSERT into {name} has no VALUES list"));
    };
    if let Some(row) = values.rows.iter().find(|r| r.content.len() != width) {
        return Err(format!(
            "INSERT into {name} gives {} values for {width} columns",
            row.content.len()
        ));
    }
    Ok((table.name.clone(), values.rows.len()))
}

fn json_cell(v: &Value) -> SqlValue {
    match v {
        Value::Null => SqlValue::Null,
        Value::Bool(b) => SqlValue::Integer(i64::from(*b)),
        Value::Number(n) => n
            .as_i64()
            .map(SqlValue::Integer)
            .unwrap_or_else(|| SqlValue::Real(n.as_f64().unwrap_or(f64::NAN))),
        Value::String(s) => SqlValue::Text(s.clone()),
        other => SqlValue::Text(other.to_string()),
    }
}

fn json_row(v: &Value) -> Option<Vec<SqlValue>> {
    v.as_array().map(|cells| cells.iter().map(json_cell).collect())
}

/// Reads a literal row list: either one JSON array of arrays, or one JSON
/// array per line. Anything else is not a row list.
pub fn parse_expected_rows(text: &str) -> Option<Vec<Vec<SqlValue>>> {
    let text = strip_fences(text);
    let text = text.trim();
    if text.is_empty() {
        return None;
    }
    if let Ok(Value::Array(items)) = serde_json::from_str::<Value>(text) {
        if items.is_empty() {
            return Some(Vec::new());
        }
        if items.iter().all(Value::is_array) {
            return items.iter().map(json_row).collect();
        }
    }
    text.lines()
        .map(|l| l.trim().trim_end_matches(','))
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_str::<Value>(l).ok().as_ref().and_then(json_row))
        .collect()
}

fn split_reply(reply: &str) -> (&str, &str) {
    let lower = reply.to_ascii_lowercase();
    match lower.rfind(OUTCOME_MARKER) {
        Some(i) => {
            let line_start = reply[..i].rfind('\n').map_or(0, |j| j + 1);
            (&reply[..line_start], &reply[i + OUTCOME_MARKER.len()..])
        }
        None => (reply, ""),
    }
}

/// Parses a data-generation reply and checks it loads with every foreign
/// key satisfied. The error string is fed back to the model on retry.
pub fn parse_sandbox(reply: &str, schema: &DatabaseSchema) -> Result<SandboxSpec, String> {
    let (data, outcome) = split_reply(reply);
    let mut inserts: Vec<TableInserts> = schema
        .tables
        .iter()
        .map(|t| TableInserts { table: t.name.clone(), statements: Vec::new() })
        .collect();
    let mut counts = vec![0usize; inserts.len()];
    for piece in split_statements(&strip_fences(data)) {
        let Some(text) = insert_text(&piece) else { continue };
        let (table, rows) = check_insert(&text, schema)?;
        let i = inserts.iter().position(|t| t.table == table).expect("table from schema");
        inserts[i].statements.push(text);
        counts[i] += rows;
    }
    let wrong: Vec<String> = inserts
        .iter()
        .zip(&counts)
        .filter(|(_, &n)| n != ROWS_PER_TABLE)
        .map(|(t, n)| format!("{} has {n} rows", t.table))
        .collect();
    if !wrong.is_empty() {
        return Err(format!("expected {ROWS_PER_TABLE} rows per table, but {}", wrong.join(", ")));
    }
    let ddl = schema_ddl(schema);
    let db = load_script(&ddl, &inserts).map_err(|e| format!("the rows do not load: {e}"))?;
    for fk in &schema.foreign_keys {
        let (Some(child), Some(parent)) = (schema.table(&fk.from_table), schema.table(&fk.to_table)) else {
            continue;
        };
        let (Some(from), Some(to)) = (child.column(&fk.from_column), parent.column(&fk.to_column)) else {
            continue;
        };
        let check = format!(
            "SELECT count(*) FROM {c} WHERE {f} IS NOT NULL AND {f} NOT IN (SELECT {t} FROM {p})",
            c = quote_ident(&child.name),
            f = quote_ident(&from.name),
            t = quote_ident(&to.name),
            p = quote_ident(&parent.name),
        );
        let rs = db.execute(&check).map_err(|e| e.to_string())?;
        if !matches!(rs.rows.first().and_then(|r| r.first()), Some(SqlValue::Integer(0))) {
            return Err(format!(
                "{}.{} has values missing from {}.{}",
                child.name, from.name, parent.name, to.name
            ));
        }
    }
    let expected_outcome = outcome.trim().to_string();
    Ok(SandboxSpec {
        expected_rows: parse_expected_rows(&expected_outcome),
        expected_outcome,
        inserts,
        rows_per_table: ROWS_PER_TABLE,
        transcript_refs: Vec::new(),
        ddl,
    })
}

/// Asks the model for synthetic rows and an expected outcome, with one
/// regeneration when the reply breaks the sandbox invariants.
pub fn generate_sandbox(
    gateway: &Gateway,
    templates: &Templates,
    schema: &DatabaseSchema,
    question: &str,
) -> Result<SandboxSpec> {
    let invalid = crate::model::validate_schema(schema);
    if !invalid.is_empty() {
        return Err(Error::Precondition(format!("invalid schema: {}", invalid.join("; "))));
    }
    let prompt = templates.render("sandbox", &[("schema", &schema_ddl(schema)), ("question", question)])?;
    let mut request = ChatRequest::user("sc-sandbox", prompt);
    let first = gateway.complete(&request)?;
    let mut refs = vec![first.transcript_id.clone()];
    let problem = match parse_sandbox(&first.text, schema) {
        Ok(mut spec) => {
            spec.transcript_refs = refs;
            return Ok(spec);
        }
        Err(p) => p,
    };
    log::debug!("sandbox rejected, retrying: {problem}");
    request.strategy_tag = "sc-sandbox-retry".into();
    request.messages.push(Message { role: Role::Assistant, content: first.text });
    request.messages.push(Message {
        role: Role::User,
        content: templates.render("sandbox_retry", &[("problem", &problem)])?,
    });
    let second = gateway.complete(&request)?;
    refs.push(second.transcript_id.clone());
    let mut spec = parse_sandbox(&second.text, schema)
        .map_err(|p| Error::Integrity(format!("sandbox rejected after retry: {p}")))?;
    spec.transcript_refs = refs;
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Mismatch,
    SyntaxError,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Mismatch => "mismatch",
            Verdict::SyntaxError => "syntax_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub verdict: Verdict,
    pub detail: String,
    pub actual_rows: ResultSet,
}

fn preview(rows: &[Vec<SqlValue>]) -> String {
    let shown: Vec<String> = rows
        .iter()
        .take(5)
        .map(|r| format!("({})", r.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")))
        .collect();
    let more = if rows.len() > 5 { format!(" and {} more", rows.len() - 5) } else { String::new() };
    format!("{}{more}", shown.join(" "))
}

/// Runs the candidate on a fresh copy of the sandbox. With a literal
/// expected row list the results must match it; otherwise only an empty
/// result counts as a mismatch.
pub fn validate_candidate(candidate: &CandidateQuery, sandbox: &SandboxSpec) -> Result<ValidationOutcome> {
    let db = sandbox.load()?;
    let actual = match db.execute(&candidate.sql) {
        Ok(rs) => rs,
        Err(SqlError::Timeout(d)) => {
            return Ok(ValidationOutcome {
                verdict: Verdict::Mismatch,
                detail: format!("the query did not finish within {d:?} on five rows per table"),
                actual_rows: ResultSet::default(),
            })
        }
        Err(e) => {
            return Ok(ValidationOutcome {
                verdict: Verdict::SyntaxError,
                detail: format!("the query failed to execute: {e}"),
                actual_rows: ResultSet::default(),
            })
        }
    };
    let (verdict, detail) = match &sandbox.expected_rows {
        Some(rows) => {
            let expected = ResultSet::new(Vec::new(), rows.clone(), actual.ordered);
            if compare_results(&expected, &actual) {
                (Verdict::Pass, String::new())
            } else {
                (
                    Verdict::Mismatch,
                    format!(
                        "expected {} rows: {}; the query returned {} rows: {}",
                        rows.len(),
                        preview(rows),
                        actual.rows.len(),
                        preview(&actual.rows)
                    ),
                )
            }
        }
        None if actual.is_empty() => (
            Verdict::Mismatch,
            "the query returned no rows although the data contains an answer".to_string(),
        ),
        None => (Verdict::Pass, String::new()),
    };
    Ok(ValidationOutcome { verdict, detail, actual_rows: actual })
}
