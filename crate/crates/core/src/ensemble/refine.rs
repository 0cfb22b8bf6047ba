use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::{ChatRequest, Gateway, Message, Role};
use crate::model::{CandidateQuery, DatabaseSchema, Stage};
use crate::prompt::{extract_sql, labeled, schema_ddl, Templates};

pub const MAX_CANDIDATES: usize = 8;
pub const ARBITER_TEMPERATURE: f64 = 0.3;
pub const NEW_QUERY_STRATEGY: &str = "ensemble-new";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionMode {
    SelectedExisting,
    NewlyGenerated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDecision {
    pub chosen: CandidateQuery,
    pub mode: DecisionMode,
    pub rationale_text: String,
    /// Set when the arbiter never gave a usable answer and the first
    /// candidate was taken.
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArbitrationPolicy {
    /// Skip the arbiter when only one distinct query is on offer.
    pub short_circuit: bool,
}

impl Default for ArbitrationPolicy {
    fn default() -> Self {
        ArbitrationPolicy { short_circuit: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Choice {
    Existing(usize),
    New(String),
}

/// Reads `CHOICE: <n>` (1-based, within `count`) or `CHOICE: NONE` with a
/// following query.
fn parse_choice(reply: &str, count: usize) -> Option<Choice> {
    let choice = labeled(reply, "choice")?;
    let token = choice.split_whitespace().next()?.trim_matches(|c: char| !c.is_ascii_alphanumeric());
    if token.eq_ignore_ascii_case("none") {
        let sql = labeled(reply, "sql")
            .and_then(|s| extract_sql(&format!("SQL: {s}")))
            .or_else(|| extract_sql(reply))?;
        return Some(Choice::New(sql));
    }
    let n: usize = token.parse().ok()?;
    (1..=count).contains(&n).then(|| Choice::Existing(n - 1))
}

/// First occurrence of each distinct query, with its original position.
fn distinct(candidates: &[CandidateQuery]) -> Vec<(usize, &CandidateQuery)> {
    let mut out: Vec<(usize, &CandidateQuery)> = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        if !out.iter().any(|(_, seen)| seen.sql.trim() == c.sql.trim()) {
            out.push((i, c));
        }
    }
    out
}

fn finalize(mut chosen: CandidateQuery, refs: &[String]) -> CandidateQuery {
    chosen.stage = Stage::EnsembleFinal;
    chosen.transcript_refs.extend(refs.iter().cloned());
    chosen
}

/// Shows the candidates to the model and takes its pick, or its new
/// query when it rejects them all.
pub fn refine(
    gateway: &Gateway,
    templates: &Templates,
    candidates: &[CandidateQuery],
    schema: &DatabaseSchema,
    question: &str,
    policy: ArbitrationPolicy,
) -> Result<EnsembleDecision> {
    if candidates.is_empty() || candidates.len() > MAX_CANDIDATES {
        return Err(Error::Precondition(format!(
            "ensemble needs 1 to {MAX_CANDIDATES} candidates, got {}",
            candidates.len()
        )));
    }
    let unique = distinct(candidates);
    if policy.short_circuit && unique.len() == 1 {
        return Ok(EnsembleDecision {
            chosen: finalize(candidates[0].clone(), &[]),
            mode: DecisionMode::SelectedExisting,
            rationale_text: "single distinct candidate".into(),
            fallback: false,
        });
    }
    let listing = unique
        .iter()
        .map(|(i, c)| format!("Candidate {}:\n{}", i + 1, c.sql.trim()))
        .collect::<Vec<_>>()
        .join("\n\n");
    let prompt = templates.render(
        "ensemble",
        &[("schema", &schema_ddl(schema)), ("question", question), ("candidates", &listing)],
    )?;
    let mut request = ChatRequest::user("ensemble", prompt).with_temperature(ARBITER_TEMPERATURE);
    let mut refs = Vec::new();
    let mut replies = Vec::new();
    for attempt in 0..2 {
        if attempt == 1 {
            request.strategy_tag = "ensemble-reformat".into();
            request.messages.push(Message { role: Role::Assistant, content: replies.last().cloned().unwrap_or_default() });
            request.messages.push(Message { role: Role::User, content: templates.render("ensemble_reformat", &[])? });
        }
        let reply = gateway.complete(&request)?;
        refs.push(reply.transcript_id);
        replies.push(reply.text);
        let text = replies.last().expect("just pushed");
        match parse_choice(text, candidates.len()) {
            Some(Choice::Existing(i)) => {
                return Ok(EnsembleDecision {
                    chosen: finalize(candidates[i].clone(), &refs),
                    mode: DecisionMode::SelectedExisting,
                    rationale_text: text.clone(),
                    fallback: false,
                })
            }
            Some(Choice::New(sql)) => {
                let mut fresh = CandidateQuery::new(sql, NEW_QUERY_STRATEGY);
                fresh.transcript_refs = candidates.iter().flat_map(|c| c.transcript_refs.iter().cloned()).collect();
                return Ok(EnsembleDecision {
                    chosen: finalize(fresh, &refs),
                    mode: DecisionMode::NewlyGenerated,
                    rationale_text: text.clone(),
                    fallback: false,
                });
            }
            None => log::debug!("unparseable arbiter reply: {text:?}"),
        }
    }
    Ok(EnsembleDecision {
        chosen: finalize(candidates[0].clone(), &refs),
        mode: DecisionMode::SelectedExisting,
        rationale_text: format!("fallback to candidate 1; last reply: {}", replies.last().map_or("", String::as_str)),
        fallback: true,
    })
}
