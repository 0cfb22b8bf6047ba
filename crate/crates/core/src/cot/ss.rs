use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::{ChatRequest, Gateway};
use crate::model::{DatabaseSchema, TaskInstance};
use crate::prompt::{schema_ddl, Templates};
use crate::sql::{decompose, ClauseDecomposition};

/// Reasoning attached to an exemplar: the restated objective, the schema
/// elements the gold query uses, and how they combine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SsCotBlock {
    pub paraphrased_objective: String,
    pub matched_tables: Vec<String>,
    pub matched_columns: Vec<(String, String)>,
    pub composition_note: String,
}

impl SsCotBlock {
    pub fn render(&self) -> String {
        let cols: Vec<String> = self.matched_columns.iter().map(|(t, c)| format!("{t}.{c}")).collect();
        format!(
            "Objective: {}\nTables: {}\nColumns: {}\nComposition: {}",
            self.paraphrased_objective,
            self.matched_tables.join(", "),
            cols.join(", "),
            self.composition_note
        )
    }
}

/// Builds the block for an exemplar. Only the objective comes from the
/// model; tables, columns and the composition note are read off the gold
/// query. Returns the block and the objective's transcript id.
pub fn build_ss_cot(
    gateway: &Gateway,
    templates: &Templates,
    example: &TaskInstance,
    schema: &DatabaseSchema,
) -> Result<(SsCotBlock, String)> {
    let gold = example
        .gold_query
        .as_deref()
        .ok_or_else(|| Error::Precondition(format!("exemplar {} has no gold query", example.index)))?;
    let d = decompose(gold)?;
    let prompt = templates.render("objective", &[("schema", &schema_ddl(schema)), ("question", &example.question)])?;
    let reply = gateway.complete(&ChatRequest::user("ss-objective", prompt))?;
    let (matched_tables, matched_columns) = matched_elements(&d, schema);
    Ok((
        SsCotBlock {
            paraphrased_objective: reply.text.trim().to_string(),
            matched_tables,
            matched_columns,
            composition_note: composition_note(&d),
        },
        reply.transcript_id,
    ))
}

/// Tables and columns of the query, spelled as in the schema and listed in
/// schema order.
pub fn matched_elements(d: &ClauseDecomposition, schema: &DatabaseSchema) -> (Vec<String>, Vec<(String, String)>) {
    let used_tables = d.all_tables();
    let tables: Vec<String> = schema
        .tables
        .iter()
        .filter(|t| used_tables.iter().any(|u| u.eq_ignore_ascii_case(&t.name)))
        .map(|t| t.name.clone())
        .collect();
    let mut wanted: Vec<(String, String)> = Vec::new();
    for reference in d.all_columns() {
        let (table, column) = match reference.split_once('.') {
            Some((t, c)) => (Some(t.to_string()), c.to_string()),
            None => (None, reference.clone()),
        };
        let owner = match table {
            Some(t) => tables.iter().find(|x| x.eq_ignore_ascii_case(&t)).cloned(),
            None => {
                let owners: Vec<&String> = tables
                    .iter()
                    .filter(|t| schema.has_column(t, &column))
                    .collect();
                (owners.len() == 1).then(|| owners[0].clone())
            }
        };
        if let Some(owner) = owner {
            if let Some(col) = schema.table(&owner).and_then(|t| t.column(&column)) {
                wanted.push((owner, col.name.clone()));
            }
        }
    }
    if star_projection(d) && tables.len() == 1 {
        wanted.push((tables[0].clone(), "*".into()));
    }
    let mut columns = Vec::new();
    for t in &schema.tables {
        if wanted.iter().any(|(o, c)| o == &t.name && c == "*") {
            columns.push((t.name.clone(), "*".to_string()));
        }
        for c in &t.columns {
            let pair = (t.name.clone(), c.name.clone());
            if wanted.contains(&pair) && !columns.contains(&pair) {
                columns.push(pair);
            }
        }
    }
    (tables, columns)
}

fn star_projection(d: &ClauseDecomposition) -> bool {
    d.select_items.iter().any(|s| s == "*" || s.contains("(*)"))
}

/// Plain-language account of how the clauses form the query.
pub fn composition_note(d: &ClauseDecomposition) -> String {
    let mut steps = Vec::new();
    let tables: Vec<&str> = d.tables_with_joins.iter().map(String::as_str).collect();
    match tables.as_slice() {
        [] => {}
        [one] => steps.push(format!("read from {one}")),
        many => {
            let preds: Vec<&str> = d.join_predicates.iter().map(String::as_str).collect();
            if preds.is_empty() {
                steps.push(format!("combine {}", many.join(", ")));
            } else {
                steps.push(format!("join {} on {}", many.join(", "), preds.join(" and ")));
            }
        }
    }
    if !d.nested_subqueries.is_empty() {
        steps.push(format!(
            "compute {} nested {} first",
            d.nested_subqueries.len(),
            if d.nested_subqueries.len() == 1 { "query" } else { "queries" }
        ));
    }
    if !d.where_predicates.is_empty() {
        steps.push(format!("keep rows where {}", d.where_predicates.iter().cloned().collect::<Vec<_>>().join(" and ")));
    }
    if !d.group_by_items.is_empty() {
        steps.push(format!("group by {}", d.group_by_items.iter().cloned().collect::<Vec<_>>().join(", ")));
    }
    if !d.having_predicates.is_empty() {
        steps.push(format!("keep groups where {}", d.having_predicates.iter().cloned().collect::<Vec<_>>().join(" and ")));
    }
    steps.push(format!(
        "return {}{}",
        if d.distinct { "distinct " } else { "" },
        d.select_items.join(", ")
    ));
    for op in &d.set_ops {
        steps.push(format!("{} the result of a second query", op.op));
    }
    if !d.order_by_items.is_empty() {
        steps.push(format!("sort by {}", d.order_by_items.join(", ")));
    }
    if let Some(limit) = &d.limit_value {
        steps.push(format!("keep the first {limit} rows"));
    }
    let mut note = steps.join(", then ");
    if let Some(first) = note.get(..1) {
        note = format!("{}{}.", first.to_uppercase(), &note[1..]);
    }
    note
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::singer_schema;

    #[test]
    fn count_singers_block() {
        let gw = Gateway::mock(|_| Some("Count all singers.".into()));
        let ex = TaskInstance::new(0, "singers", "How many singers are there?").with_gold("SELECT count(*) FROM singer");
        let (block, _) = build_ss_cot(&gw, &Templates::builtin(), &ex, &singer_schema()).unwrap();
        assert_eq!(block.paraphrased_objective, "Count all singers.");
        assert_eq!(block.matched_tables, vec!["singer"]);
        assert_eq!(block.matched_columns, vec![("singer".to_string(), "*".to_string())]);
        assert_eq!(block.composition_note, "Read from singer, then return count(*).");
        let (again, _) = build_ss_cot(&gw, &Templates::builtin(), &ex, &singer_schema()).unwrap();
        assert_eq!(block.render(), again.render());
    }

    #[test]
    fn join_matches_both_tables() {
        let gw = Gateway::mock(|_| Some("Titles of songs by old singers.".into()));
        let ex = TaskInstance::new(0, "singers", "Titles of songs by singers older than 40?").with_gold(
            "SELECT T2.title FROM singer AS T1 JOIN song AS T2 ON T1.singer_id = T2.singer_id WHERE T1.age > 40",
        );
        let (block, _) = build_ss_cot(&gw, &Templates::builtin(), &ex, &singer_schema()).unwrap();
        assert_eq!(block.matched_tables, vec!["singer", "song"]);
        assert!(block.matched_columns.contains(&("singer".into(), "age".into())));
        assert!(block.matched_columns.contains(&("song".into(), "title".into())));
        assert!(block.composition_note.starts_with("Join singer, song on singer.singer_id = song.singer_id"));
    }

    #[test]
    fn gold_is_required() {
        let gw = Gateway::mock(|_| Some("x".into()));
        let ex = TaskInstance::new(0, "singers", "q");
        assert!(build_ss_cot(&gw, &Templates::builtin(), &ex, &singer_schema()).is_err());
        let bad = TaskInstance::new(0, "singers", "q").with_gold("SELECT FROM WHERE");
        assert!(build_ss_cot(&gw, &Templates::builtin(), &bad, &singer_schema()).is_err());
    }
}
