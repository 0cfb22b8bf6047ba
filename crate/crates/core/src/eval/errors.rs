use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DatabaseSchema;
use crate::sql::{decompose, ClauseDecomposition};

use super::metrics::clause_report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    SchemaLinking,
    Join,
    GroupBy,
    Nested,
    Other,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 5] = [Self::SchemaLinking, Self::Join, Self::GroupBy, Self::Nested, Self::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SchemaLinking => "schema_linking",
            Self::Join => "join",
            Self::GroupBy => "group_by",
            Self::Nested => "nested",
            Self::Other => "other",
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Bare column name of a `table.column` reference.
fn column_name(c: &str) -> &str {
    c.rsplit('.').next().unwrap_or(c)
}

/// Membership that tolerates one side lacking a table qualifier.
fn column_in(set: &BTreeSet<String>, c: &str) -> bool {
    set.contains(c)
        || set.iter().any(|g| {
            (!g.contains('.') || !c.contains('.')) && column_name(g) == column_name(c)
        })
}

fn column_exists(schema: &DatabaseSchema, c: &str) -> Option<bool> {
    match c.split_once('.') {
        Some((t, col)) => Some(schema.has_column(t, col)),
        // Bare names may be output aliases, so their existence is unknown.
        None => schema.tables_with_column(c).next().map(|_| true),
    }
}

fn deep_join_predicates(d: &ClauseDecomposition) -> BTreeSet<String> {
    let mut out = d.join_predicates.clone();
    for n in &d.nested_subqueries {
        out.extend(deep_join_predicates(n));
    }
    for op in &d.set_ops {
        out.extend(deep_join_predicates(&op.query));
    }
    out
}

fn endpoint(side: &str) -> Option<(&str, &str)> {
    let (t, c) = side.trim().split_once('.')?;
    let plain = |s: &str| !s.is_empty() && s.chars().all(|ch| ch.is_alphanumeric() || ch == '_');
    (plain(t) && plain(c)).then_some((t, c))
}

fn flipped(pred: &str) -> String {
    match pred.split_once(" = ") {
        Some((a, b)) => format!("{b} = {a}"),
        None => pred.to_string(),
    }
}

fn schema_linking(g: &ClauseDecomposition, p: &ClauseDecomposition, schema: &DatabaseSchema) -> Option<&'static str> {
    let gold_tables = g.all_tables();
    let pred_tables = p.all_tables();
    let superset = gold_tables.is_subset(&pred_tables);
    for t in pred_tables.difference(&gold_tables) {
        let linked = gold_tables.iter().any(|gt| schema.tables_linked(gt, t));
        if schema.table(t).is_none() || !linked || !superset {
            return Some("table");
        }
    }
    let gold_cols = g.all_columns();
    let unknown = p.all_columns().iter().any(|c| column_exists(schema, c) == Some(false));
    let misread = p
        .where_columns
        .iter()
        .any(|c| column_exists(schema, c).is_some() && !column_in(&gold_cols, c));
    if unknown || misread {
        return Some("column");
    }
    let gold_joins = deep_join_predicates(g);
    for pred in deep_join_predicates(p) {
        if gold_joins.contains(&pred) || gold_joins.contains(&flipped(&pred)) {
            continue;
        }
        let Some((a, b)) = pred.split_once(" = ") else { continue };
        if let (Some(a), Some(b)) = (endpoint(a), endpoint(b)) {
            if !schema.foreign_keys.iter().any(|fk| fk.links(a, b)) {
                return Some("foreign_key");
            }
        }
    }
    None
}

fn join(g: &ClauseDecomposition, p: &ClauseDecomposition) -> Option<&'static str> {
    let (gt, pt) = (g.all_tables(), p.all_tables());
    if pt.len() < gt.len() && pt.is_subset(&gt) {
        Some("missing")
    } else if pt.len() > gt.len() && gt.is_subset(&pt) {
        Some("unnecessary")
    } else {
        None
    }
}

fn group_by(g: &ClauseDecomposition, p: &ClauseDecomposition) -> Option<&'static str> {
    let names = |d: &ClauseDecomposition| -> BTreeSet<String> {
        d.group_by_items.iter().map(|i| column_name(i).to_string()).collect()
    };
    (!g.group_by_items.is_empty() && !p.group_by_items.is_empty() && names(g) != names(p)).then_some("wrong_column")
}

fn nested(g: &ClauseDecomposition, p: &ClauseDecomposition) -> Option<&'static str> {
    let ops = |d: &ClauseDecomposition| d.set_ops.iter().map(|o| o.op.clone()).collect::<Vec<_>>();
    if ops(g) != ops(p) {
        return Some("set_operation");
    }
    let (gn, pn) = (g.nesting_count(), p.nesting_count());
    if pn > gn {
        return Some("unnecessary");
    }
    if pn < gn {
        return Some("missing");
    }
    let texts = |d: &ClauseDecomposition| d.nested_subqueries.iter().map(|n| n.text.clone()).collect::<BTreeSet<_>>();
    let set_texts = |d: &ClauseDecomposition| d.set_ops.iter().map(|o| o.query.text.clone()).collect::<Vec<_>>();
    (texts(g) != texts(p) || set_texts(g) != set_texts(p)).then_some("incorrect_subquery")
}

fn swap_min_max(s: &str) -> String {
    s.replace("min(", "\u{0}").replace("max(", "min(").replace('\u{0}', "max(")
}

fn flip_direction(item: &str) -> String {
    if let Some(e) = item.strip_suffix(" asc") {
        format!("{e} desc")
    } else if let Some(e) = item.strip_suffix(" desc") {
        format!("{e} asc")
    } else {
        item.to_string()
    }
}

const STRING_MARKERS: [&str; 9] = ["'", "like", "upper(", "lower(", "replace(", "cast(", "instr(", "trim(", "substr("];

fn other(g: &ClauseDecomposition, p: &ClauseDecomposition) -> &'static str {
    let report = clause_report(g, p);
    let select_lower: Vec<String> = p.select_items.iter().map(|s| s.to_ascii_lowercase()).collect();
    let gold_lower: Vec<String> = g.select_items.iter().map(|s| s.to_ascii_lowercase()).collect();
    let min_max = !report.select
        && select_lower.iter().map(|s| swap_min_max(s)).collect::<Vec<_>>() == gold_lower
        && report.where_;
    let inverted = report.select
        && report.where_
        && !p.order_by_items.is_empty()
        && p.order_by_items.iter().map(|i| flip_direction(i)).collect::<Vec<_>>() == g.order_by_items;
    if min_max || inverted {
        return "misunderstanding";
    }
    if !report.select {
        return "select";
    }
    if !report.where_ {
        let differing = g.where_predicates.symmetric_difference(&p.where_predicates);
        if differing.into_iter().any(|w| {
            let w = w.to_ascii_lowercase();
            STRING_MARKERS.iter().any(|m| w.contains(m))
        }) {
            return "string_matching";
        }
    }
    "unclassified"
}

/// Assigns a failed prediction to exactly one category, checking schema
/// linking, then joins, grouping, nesting, and finally everything else.
pub fn classify_error(gold: &str, predicted: &str, schema: &DatabaseSchema) -> Result<(ErrorCategory, String)> {
    let g = decompose(gold).map_err(|e| Error::Integrity(format!("gold query does not parse: {e}")))?;
    let Ok(p) = decompose(predicted) else {
        return Ok((ErrorCategory::Other, "unparsed".into()));
    };
    let (category, subtype) = if let Some(s) = schema_linking(&g, &p, schema) {
        (ErrorCategory::SchemaLinking, s)
    } else if let Some(s) = join(&g, &p) {
        (ErrorCategory::Join, s)
    } else if let Some(s) = group_by(&g, &p) {
        (ErrorCategory::GroupBy, s)
    } else if let Some(s) = nested(&g, &p) {
        (ErrorCategory::Nested, s)
    } else {
        (ErrorCategory::Other, other(&g, &p))
    };
    Ok((category, subtype.to_string()))
}
