//! Prompt rendering: the schema as `CREATE TABLE` statements, the question
//! as a trailing SQL comment, optional few-shot example blocks, and the
//! editable template set used by every model-facing stage.

mod reply;
mod templates;

use serde::{Deserialize, Serialize};

pub use reply::{extract_sql, labeled};
pub use templates::Templates;

use crate::error::{Error, Result};
use crate::llm::{ChatRequest, Gateway};
use crate::model::{validate_schema, DatabaseSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartKind {
    SchemaDdl,
    SchemaExplanation,
    Examples,
    CotBlocks,
    QuestionComment,
    Instructions,
    /// Separators and headings between labeled parts.
    Layout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPart {
    pub kind: PartKind,
    pub text: String,
}

/// A prompt body and its labeled spans; the spans concatenate to `text`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub parts: Vec<PromptPart>,
}

impl RenderedPrompt {
    fn from_parts(parts: Vec<PromptPart>) -> Self {
        let text = parts.iter().map(|p| p.text.as_str()).collect();
        RenderedPrompt { text, parts }
    }

    fn push(&mut self, kind: PartKind, text: impl Into<String>) {
        let text = text.into();
        self.text.push_str(&text);
        self.parts.push(PromptPart { kind, text });
    }

    pub fn spans(&self, kind: PartKind) -> Vec<&str> {
        self.parts.iter().filter(|p| p.kind == kind).map(|p| p.text.as_str()).collect()
    }

    pub fn reassembles(&self) -> bool {
        self.parts.iter().map(|p| p.text.as_str()).collect::<String>() == self.text
    }

    /// Inserts a schema explanation right after the DDL.
    pub fn with_schema_explanation(&self, explanation: &str) -> Self {
        let mut parts = Vec::with_capacity(self.parts.len() + 2);
        let mut inserted = false;
        for p in &self.parts {
            parts.push(p.clone());
            if !inserted && p.kind == PartKind::SchemaDdl {
                parts.push(PromptPart {
                    kind: PartKind::SchemaExplanation,
                    text: format!("/* Schema explanation:\n{}\n*/\n", comment_safe(explanation.trim())),
                });
                inserted = true;
            }
        }
        Self::from_parts(parts)
    }

    pub fn with_instructions(&self, instructions: &str) -> Self {
        let mut out = self.clone();
        out.push(PartKind::Instructions, format!("{}\n", instructions.trim_end()));
        out
    }
}

const RESERVED: [&str; 32] = [
    "and", "as", "by", "case", "check", "default", "else", "end", "foreign", "from", "group", "in",
    "index", "is", "join", "limit", "not", "on", "or", "order", "primary", "references", "select",
    "table", "then", "to", "transaction", "union", "unique", "values", "when", "where",
];

/// Quotes an identifier when it is not a plain word or collides with a keyword.
pub fn quote_ident(name: &str) -> String {
    let plain = name.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
    if plain && !RESERVED.contains(&name.to_ascii_lowercase().as_str()) {
        name.to_string()
    } else {
        format!("\"{}\"", name.replace('"', "\"\""))
    }
}

/// Maps source type strings to SQLite type names for display.
pub fn display_type(sql_type: &str) -> String {
    match sql_type.trim().to_ascii_lowercase().as_str() {
        "" | "text" | "others" => "TEXT".into(),
        "number" => "NUMERIC".into(),
        "time" => "DATETIME".into(),
        "boolean" => "BOOLEAN".into(),
        _ => sql_type.trim().to_ascii_uppercase(),
    }
}

/// `CREATE TABLE` statements for every table: column types, an inline
/// PRIMARY KEY for single-column keys (a table-level clause for composite
/// ones) and table-level FOREIGN KEY clauses.
pub fn schema_ddl(schema: &DatabaseSchema) -> String {
    let mut out = String::new();
    for table in &schema.tables {
        let pk: Vec<&str> = table.primary_key().map(|c| c.name.as_str()).collect();
        let mut lines: Vec<String> = table
            .columns
            .iter()
            .map(|c| {
                let mut line = format!("  {} {}", quote_ident(&c.name), display_type(&c.sql_type));
                if pk.len() == 1 && c.is_primary_key {
                    line.push_str(" PRIMARY KEY");
                }
                line
            })
            .collect();
        if pk.len() > 1 {
            let cols: Vec<String> = pk.iter().map(|c| quote_ident(c)).collect();
            lines.push(format!("  PRIMARY KEY ({})", cols.join(", ")));
        }
        for fk in schema.foreign_keys_from(&table.name) {
            lines.push(format!(
                "  FOREIGN KEY ({}) REFERENCES {}({})",
                quote_ident(&fk.from_column),
                quote_ident(&fk.to_table),
                quote_ident(&fk.to_column)
            ));
        }
        out.push_str(&format!("CREATE TABLE {} (\n{}\n);\n", quote_ident(&table.name), lines.join(",\n")));
    }
    out
}

fn comment_safe(text: &str) -> String {
    text.replace("*/", "* /")
}

fn question_comment(question: &str) -> String {
    question.trim().lines().map(|l| format!("-- {}\n", l.trim())).collect()
}

fn check_inputs(schema: &DatabaseSchema, question: &str) -> Result<()> {
    if question.trim().is_empty() {
        return Err(Error::Precondition("question is empty".into()));
    }
    let violations = validate_schema(schema);
    if !violations.is_empty() {
        return Err(Error::Precondition(format!("schema {}: {}", schema.db_id, violations.join("; "))));
    }
    Ok(())
}

/// Schema DDL followed by the question as a SQL comment.
pub fn render_code_representation(schema: &DatabaseSchema, question: &str) -> Result<RenderedPrompt> {
    check_inputs(schema, question)?;
    let mut p = RenderedPrompt::default();
    p.push(PartKind::SchemaDdl, schema_ddl(schema));
    p.push(PartKind::Layout, "\n");
    p.push(PartKind::QuestionComment, question_comment(question));
    Ok(p)
}

/// Asks the model for a prose explanation of the schema. Returns the
/// explanation and its transcript id.
pub fn render_schema_explanation(
    gateway: &Gateway,
    templates: &Templates,
    schema: &DatabaseSchema,
) -> Result<(String, String)> {
    if schema.tables.is_empty() {
        return Err(Error::Precondition(format!("schema {} has no tables", schema.db_id)));
    }
    let prompt = templates.render("schema_explanation", &[("schema", &schema_ddl(schema))])?;
    let c = gateway.complete(&ChatRequest::user("schema-explanation", prompt))?;
    Ok((c.text.trim().to_string(), c.transcript_id))
}

/// One demonstration: an example question on its own schema, an optional
/// reasoning block and the gold query.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotExample {
    pub schema: DatabaseSchema,
    pub question: String,
    pub cot: Option<String>,
    pub gold: String,
}

/// Places the examples, in the given order, before the target prompt and
/// appends the instruction footer.
pub fn assemble_few_shot(prompt: &RenderedPrompt, examples: &[FewShotExample], instructions: &str) -> Result<RenderedPrompt> {
    let mut out = RenderedPrompt::default();
    for (i, ex) in examples.iter().enumerate() {
        check_inputs(&ex.schema, &ex.question)?;
        out.push(PartKind::Layout, format!("/* Example {} */\n", i + 1));
        out.push(PartKind::Examples, format!("{}\n{}", schema_ddl(&ex.schema), question_comment(&ex.question)));
        if let Some(cot) = &ex.cot {
            out.push(PartKind::CotBlocks, format!("/* Reasoning:\n{}\n*/\n", comment_safe(cot.trim())));
        }
        out.push(PartKind::Examples, format!("{};\n", ex.gold.trim().trim_end_matches(';')));
        out.push(PartKind::Layout, "\n");
    }
    if !examples.is_empty() {
        out.push(PartKind::Layout, "/* Target question */\n");
    }
    for p in &prompt.parts {
        out.push(p.kind, p.text.clone());
    }
    Ok(out.with_instructions(instructions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Column, TableDef};
    use crate::model::fixtures::singer_schema;

    fn one_table() -> DatabaseSchema {
        DatabaseSchema {
            db_id: "s".into(),
            tables: vec![TableDef {
                name: "singer".into(),
                columns: vec![
                    Column { name: "id".into(), sql_type: "INT".into(), is_primary_key: true },
                    Column { name: "name".into(), sql_type: "TEXT".into(), is_primary_key: false },
                ],
            }],
            foreign_keys: vec![],
        }
    }

    #[test]
    fn code_representation_layout() {
        let p = render_code_representation(&one_table(), "How many singers are there?").unwrap();
        assert!(p.text.contains("CREATE TABLE singer (\n  id INT PRIMARY KEY,\n  name TEXT\n);"));
        let ddl_at = p.text.find("CREATE TABLE").unwrap();
        let q_at = p.text.find("-- How many singers are there?").unwrap();
        assert!(ddl_at < q_at);
        assert!(p.reassembles());
        assert!(render_code_representation(&one_table(), "  ").is_err());
    }

    #[test]
    fn foreign_keys_render() {
        let p = render_code_representation(&singer_schema(), "q").unwrap();
        assert!(p.text.contains("FOREIGN KEY (singer_id) REFERENCES singer(singer_id)"), "{}", p.text);
        let schema = singer_schema();
        for t in &schema.tables {
            assert!(p.text.contains(&t.name));
            for c in &t.columns {
                assert!(p.text.contains(&c.name));
            }
        }
    }

    #[test]
    fn few_shot_structure() {
        let target = render_code_representation(&one_table(), "How many singers?").unwrap();
        let zero = assemble_few_shot(&target, &[], "-- SQL only.").unwrap();
        assert_eq!(zero.text, format!("{}-- SQL only.\n", target.text));

        let ex = |q: &str, cot: Option<&str>| FewShotExample {
            schema: singer_schema(),
            question: q.into(),
            cot: cot.map(str::to_string),
            gold: "SELECT count(*) FROM singer".into(),
        };
        let one = assemble_few_shot(&target, &[ex("Count singers.", Some("Objective: count rows."))], "-- x").unwrap();
        assert_eq!(one.spans(PartKind::CotBlocks).len(), 1);
        let q = one.text.find("-- Count singers.").unwrap();
        let cot = one.text.find("Objective: count rows.").unwrap();
        let sql = one.text.find("SELECT count(*) FROM singer;").unwrap();
        assert!(q < cot && cot < sql);
        assert!(one.reassembles());

        let three = assemble_few_shot(&target, &[ex("A?", None), ex("B?", None), ex("C?", None)], "-- x").unwrap();
        let positions: Vec<usize> = ["-- A?", "-- B?", "-- C?"].iter().map(|s| three.text.find(s).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert!(positions[2] < three.text.find("-- How many singers?").unwrap());
    }

    #[test]
    fn explanation_is_requested_and_inserted() {
        let gw = Gateway::mock(|_| Some("The singer table lists singers; song lists their songs.".into()));
        let (text, id) = render_schema_explanation(&gw, &Templates::builtin(), &singer_schema()).unwrap();
        assert_eq!(text, "The singer table lists singers; song lists their songs.");
        assert!(gw.store().contains(&id));
        let p = render_code_representation(&singer_schema(), "q").unwrap().with_schema_explanation(&text);
        assert_eq!(p.spans(PartKind::SchemaExplanation).len(), 1);
        assert!(p.text.find("Schema explanation").unwrap() < p.text.find("-- q").unwrap());
        let empty = DatabaseSchema { db_id: "e".into(), tables: vec![], foreign_keys: vec![] };
        assert!(render_schema_explanation(&gw, &Templates::builtin(), &empty).is_err());
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = render_code_representation(&singer_schema(), "q").unwrap();
        let b = render_code_representation(&singer_schema(), "q").unwrap();
        assert_eq!(a, b);
        assert_eq!(quote_ident("order"), "\"order\"");
        assert_eq!(quote_ident("Song Name"), "\"Song Name\"");
    }
}
