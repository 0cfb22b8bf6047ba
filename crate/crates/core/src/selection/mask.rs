use serde::{Deserialize, Serialize};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::keywords::Keyword;
use sqlparser::tokenizer::{Token, Tokenizer};

use crate::error::{Error, Result};
use crate::model::{ident_eq, DatabaseSchema, TaskInstance};
use crate::prompt::display_type;

pub const TABLE_MARK: &str = "<TABLE>";
pub const COL_MARK: &str = "<COL>";
pub const VAL_MARK: &str = "<VAL>";

/// Question and query with every schema-specific token replaced by a
/// placeholder, plus a name-free description of the schema's shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedInstance {
    pub masked_question: String,
    /// Absent for targets, whose query is unknown at selection time.
    pub masked_query: Option<String>,
    pub schema_text: String,
}

fn is_table(schema: &DatabaseSchema, w: &str) -> bool {
    schema.table(w).is_some()
}

fn is_column(schema: &DatabaseSchema, w: &str) -> bool {
    schema.tables.iter().any(|t| t.column(w).is_some())
}

/// Masks a query token by token so already-masked text passes through
/// unchanged.
pub fn mask_query(sql: &str, schema: &DatabaseSchema) -> Result<String> {
    let dialect = SQLiteDialect {};
    let tokens = Tokenizer::new(&dialect, sql)
        .tokenize()
        .map_err(|e| Error::parse("masking query", e))?;
    let significant: Vec<usize> = (0..tokens.len())
        .filter(|&i| !matches!(tokens[i], Token::Whitespace(_)))
        .collect();
    let prev = |i: usize| -> Option<&Token> {
        let p = significant.iter().position(|&j| j == i)?;
        p.checked_sub(1).map(|q| &tokens[significant[q]])
    };
    let next = |i: usize| -> Option<&Token> {
        let p = significant.iter().position(|&j| j == i)?;
        significant.get(p + 1).map(|&q| &tokens[q])
    };
    let mut out = String::with_capacity(sql.len());
    for (i, tok) in tokens.iter().enumerate() {
        let replacement = match tok {
            Token::Number(..) | Token::SingleQuotedString(_) | Token::DoubleQuotedString(_) => Some(VAL_MARK),
            Token::Word(w) => {
                let bracketed = matches!(prev(i), Some(Token::Lt)) && matches!(next(i), Some(Token::Gt));
                let call = matches!(next(i), Some(Token::LParen));
                let after_from = matches!(prev(i), Some(Token::Word(p)) if matches!(p.keyword, Keyword::FROM | Keyword::JOIN));
                let qualifier = matches!(next(i), Some(Token::Period));
                if bracketed || call {
                    None
                } else if is_table(schema, &w.value) && (after_from || qualifier || !is_column(schema, &w.value)) {
                    Some(TABLE_MARK)
                } else if is_column(schema, &w.value) {
                    Some(COL_MARK)
                } else if w.quote_style == Some('"') {
                    Some(VAL_MARK)
                } else {
                    None
                }
            }
            _ => None,
        };
        match replacement {
            Some(r) => out.push_str(r),
            None => out.push_str(&tok.to_string()),
        }
    }
    Ok(out)
}

fn literal_values(sql: &str) -> Vec<String> {
    let dialect = SQLiteDialect {};
    let Ok(tokens) = Tokenizer::new(&dialect, sql).tokenize() else {
        return Vec::new();
    };
    tokens
        .into_iter()
        .filter_map(|t| match t {
            Token::SingleQuotedString(s) | Token::DoubleQuotedString(s) => Some(s),
            Token::Word(w) if w.quote_style == Some('"') => Some(w.value),
            Token::Number(n, _) => Some(n),
            _ => None,
        })
        .map(|s| s.trim_matches('%').to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Exact match, or a simple plural of a single-word name.
fn word_matches(part: &str, word: &str, single: bool) -> bool {
    part == word || (single && part.len() > 3 && word.strip_suffix('s').is_some_and(|w| ident_eq(w, part)))
}

/// Replaces schema names and literal values in a question. Multi-word
/// names match with spaces or underscores; values come from the query's
/// literals and from bare numbers.
pub fn mask_question(question: &str, schema: &DatabaseSchema, literals: &[String]) -> String {
    let mut phrases: Vec<(Vec<String>, &str)> = Vec::new();
    let split = |s: &str| -> Vec<String> {
        s.split(|c: char| c == '_' || c.is_whitespace())
            .filter(|p| !p.is_empty())
            .map(str::to_lowercase)
            .collect()
    };
    for v in literals {
        phrases.push((split(v), VAL_MARK));
    }
    for t in &schema.tables {
        phrases.push((split(&t.name), TABLE_MARK));
        for c in &t.columns {
            phrases.push((split(&c.name), COL_MARK));
        }
    }
    phrases.retain(|(p, _)| !p.is_empty());
    // Longest phrases first so `song name` beats `name`.
    phrases.sort_by(|a, b| b.0.len().cmp(&a.0.len()));

    // Tokens keep their trailing punctuation separate.
    let mut words: Vec<(String, String)> = Vec::new();
    for raw in question.split_whitespace() {
        let core_end = raw.trim_end_matches(|c: char| matches!(c, '.' | ',' | '?' | '!' | ';' | ':' | '"' | '\'')).len();
        let core_start = raw.len() - raw.trim_start_matches(['"', '\'']).len();
        let core_start = core_start.min(core_end);
        words.push((raw[core_start..core_end].to_string(), format!("{}|{}", &raw[..core_start], &raw[core_end..])));
    }
    let lowered: Vec<String> = words.iter().map(|(w, _)| w.to_lowercase()).collect();
    let mut out: Vec<String> = Vec::new();
    let mut i = 0;
    while i < words.len() {
        let (core, affix) = &words[i];
        let (lead, trail) = affix.split_once('|').unwrap_or(("", ""));
        if core.starts_with('<') && core.ends_with('>') {
            out.push(format!("{lead}{core}{trail}"));
            i += 1;
            continue;
        }
        let hit = phrases.iter().find(|(p, _)| {
            i + p.len() <= lowered.len()
                && p.iter().zip(&lowered[i..]).all(|(part, word)| word_matches(part, word, p.len() == 1))
        });
        if let Some((p, mark)) = hit {
            let last_trail = words[i + p.len() - 1].1.split_once('|').map_or("", |(_, t)| t).to_string();
            out.push(format!("{lead}{mark}{last_trail}"));
            i += p.len();
        } else if !core.is_empty() && core.parse::<f64>().is_ok() {
            out.push(format!("{lead}{VAL_MARK}{trail}"));
            i += 1;
        } else {
            out.push(format!("{lead}{core}{trail}"));
            i += 1;
        }
    }
    out.join(" ")
}

/// Shape of a schema without names: per table the column types and key
/// positions, then the foreign-key count.
pub fn schema_text(schema: &DatabaseSchema) -> String {
    let mut parts = Vec::new();
    for t in &schema.tables {
        let types: Vec<String> = t.columns.iter().map(|c| display_type(&c.sql_type).to_lowercase()).collect();
        let pk: Vec<String> = t
            .columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_primary_key)
            .map(|(i, _)| (i + 1).to_string())
            .collect();
        parts.push(format!(
            "table with {} columns ({}) primary key at {}",
            t.columns.len(),
            types.join(" "),
            if pk.is_empty() { "none".to_string() } else { pk.join(" ") }
        ));
    }
    parts.push(format!("{} tables {} foreign keys", schema.tables.len(), schema.foreign_keys.len()));
    parts.join("; ")
}

/// Masks a pool instance; its gold query must be present and parseable.
pub fn mask_for_fis(instance: &TaskInstance, schema: &DatabaseSchema) -> Result<MaskedInstance> {
    let gold = instance
        .gold_query
        .as_deref()
        .ok_or_else(|| Error::Precondition(format!("instance {} has no gold query", instance.index)))?;
    if !gold.contains(VAL_MARK) && !gold.contains(COL_MARK) && !gold.contains(TABLE_MARK) {
        crate::sql::parse_query(gold)?;
    }
    let literals = literal_values(gold);
    Ok(MaskedInstance {
        masked_question: mask_question(&instance.question, schema, &literals),
        masked_query: Some(mask_query(gold, schema)?),
        schema_text: schema_text(schema),
    })
}

/// The target side of FIS: no query is available.
pub fn mask_target(question: &str, schema: &DatabaseSchema) -> MaskedInstance {
    MaskedInstance {
        masked_question: mask_question(question, schema, &[]),
        masked_query: None,
        schema_text: schema_text(schema),
    }
}
