use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::{ChatRequest, Completion, Gateway, Message, Role};
use crate::model::DatabaseSchema;
use crate::prompt::{extract_sql, labeled, schema_ddl, Templates};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Validated,
    EpochCap,
}

/// Sub-questions and their queries, built one step at a time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MsChain {
    pub sub_questions: Vec<String>,
    pub sub_queries: Vec<String>,
    pub terminated_by: Termination,
    pub transcript_refs: Vec<String>,
}

impl MsChain {
    /// The last sub-query, which answers the full question.
    pub fn final_query(&self) -> &str {
        self.sub_queries.last().map_or("", String::as_str)
    }

    pub fn len(&self) -> usize {
        self.sub_questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sub_questions.is_empty()
    }
}

fn steps_text(subs: &[String], sqls: &[String]) -> String {
    subs.iter()
        .zip(sqls)
        .enumerate()
        .map(|(i, (q, s))| format!("Step {}: {q}\nSQL: {s}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Numbered steps with the last query marked as the answer.
pub fn ms_chain_to_cot_block(chain: &MsChain) -> Result<String> {
    if chain.is_empty() {
        return Err(Error::Precondition("empty sub-question chain".into()));
    }
    Ok(format!(
        "{}\nFinal SQL: {}",
        steps_text(&chain.sub_questions, &chain.sub_queries),
        chain.final_query()
    ))
}

fn parse_step(reply: &str) -> Option<(String, String)> {
    let sub = labeled(reply, "subquestion")?;
    let sql = labeled(reply, "sql").or_else(|| extract_sql(reply))?;
    let sql = sql.trim().trim_end_matches(';').trim().to_string();
    (!sql.is_empty()).then_some((sub, sql))
}

struct Step<'a> {
    gateway: &'a Gateway,
    templates: &'a Templates,
    refs: Vec<String>,
}

impl Step<'_> {
    fn call(&mut self, request: &ChatRequest) -> Result<Completion> {
        let c = self.gateway.complete(request)?;
        self.refs.push(c.transcript_id.clone());
        Ok(c)
    }

    /// One sub-question step; one reformat request if the labels are missing.
    fn generate(&mut self, request: ChatRequest) -> Result<(String, String)> {
        let reply = self.call(&request)?;
        if let Some(step) = parse_step(&reply.text) {
            return Ok(step);
        }
        let mut retry = request;
        retry.strategy_tag = "ms-reformat".into();
        retry.messages.push(Message { role: Role::Assistant, content: reply.text });
        retry.messages.push(Message { role: Role::User, content: self.templates.render("ms_reformat", &[])? });
        let again = self.call(&retry)?;
        parse_step(&again.text).ok_or_else(|| Error::reply("ms-step", again.text))
    }

    fn judge(&mut self, request: ChatRequest) -> Result<bool> {
        let reply = self.call(&request)?;
        let head = reply.text.trim_start().trim_start_matches(['*', '"', '\'']).to_ascii_lowercase();
        Ok(head.starts_with("yes"))
    }
}

fn with_demos(demos: &str, prompt: String) -> String {
    if demos.trim().is_empty() {
        prompt
    } else {
        format!("{}\n\n{prompt}", demos.trim_end())
    }
}

/// Builds the sub-question chain: a first step, then further steps while
/// the judge rejects the chain and fewer than `max_epochs` steps exist.
/// `demos` (possibly empty) is prepended to the generation prompts.
pub fn run_ms_chain(
    gateway: &Gateway,
    templates: &Templates,
    schema: &DatabaseSchema,
    question: &str,
    max_epochs: usize,
    demos: &str,
) -> Result<MsChain> {
    if max_epochs == 0 {
        return Err(Error::Precondition("max_epochs must be at least 1".into()));
    }
    let ddl = schema_ddl(schema);
    let mut step = Step { gateway, templates, refs: Vec::new() };
    let mut subs = Vec::new();
    let mut sqls = Vec::new();

    let first = templates.render("ms_first", &[("schema", &ddl), ("question", question)])?;
    let (q_sub, q_sql) = step.generate(ChatRequest::user("ms-first", with_demos(demos, first)))?;
    subs.push(q_sub);
    sqls.push(q_sql);
    let judge_prompt = |subs: &[String], sqls: &[String]| {
        templates.render(
            "ms_valid",
            &[("schema", &ddl), ("question", question), ("chain", &steps_text(subs, sqls))],
        )
    };
    let mut valid = step.judge(ChatRequest::user("ms-valid", judge_prompt(&subs, &sqls)?))?;
    let mut epoch = 1;
    while !valid && epoch < max_epochs {
        let next = templates.render(
            "ms_next",
            &[("schema", &ddl), ("question", question), ("chain", &steps_text(&subs, &sqls))],
        )?;
        let (q_sub, q_sql) = step.generate(ChatRequest::user("ms-next", with_demos(demos, next)))?;
        subs.push(q_sub);
        sqls.push(q_sql);
        valid = step.judge(ChatRequest::user("ms-valid", judge_prompt(&subs, &sqls)?))?;
        epoch += 1;
    }
    Ok(MsChain {
        sub_questions: subs,
        sub_queries: sqls,
        terminated_by: if valid { Termination::Validated } else { Termination::EpochCap },
        transcript_refs: step.refs,
    })
}
