use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sql::{compare_results, decompose, ClauseDecomposition, Database};

/// True iff both queries return equivalent results. A failing prediction
/// is simply wrong; a failing gold query is a corpus error.
pub fn execution_accuracy(gold: &str, predicted: &str, db: &Database) -> Result<bool> {
    let expected = db
        .execute(gold)
        .map_err(|e| Error::Integrity(format!("gold query fails on {}: {e}", db.label())))?;
    Ok(match db.execute(predicted) {
        Ok(actual) => compare_results(&expected, &actual),
        Err(e) => {
            log::debug!("prediction failed to execute: {e}");
            false
        }
    })
}

/// Per-clause agreement between a prediction and the gold query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClauseReport {
    pub select: bool,
    #[serde(rename = "where")]
    pub where_: bool,
    pub group_by: bool,
    pub order_by: bool,
    pub keywords: bool,
    /// The prediction did not parse; every clause is false.
    pub unparsed: bool,
}

impl ClauseReport {
    pub const CLAUSES: [&'static str; 5] = ["select", "where", "group_by", "order_by", "keywords"];

    pub fn get(&self, clause: &str) -> bool {
        match clause {
            "select" => self.select,
            "where" => self.where_,
            "group_by" => self.group_by,
            "order_by" => self.order_by,
            "keywords" => self.keywords,
            _ => false,
        }
    }

    pub fn all(&self) -> bool {
        Self::CLAUSES.iter().all(|c| self.get(c))
    }
}

pub(crate) fn clause_report(g: &ClauseDecomposition, p: &ClauseDecomposition) -> ClauseReport {
    let set = |v: &[String]| v.iter().cloned().collect::<std::collections::BTreeSet<_>>();
    ClauseReport {
        select: set(&g.select_items) == set(&p.select_items),
        where_: g.where_predicates == p.where_predicates,
        group_by: g.group_by_items == p.group_by_items && g.having_predicates == p.having_predicates,
        order_by: g.order_by_items == p.order_by_items && g.limit_value == p.limit_value,
        keywords: g.keywords == p.keywords,
        unparsed: false,
    }
}

/// Compares the canonical clause components of the two queries.
pub fn component_match(gold: &str, predicted: &str) -> Result<ClauseReport> {
    let g = decompose(gold).map_err(|e| Error::Integrity(format!("gold query does not parse: {e}")))?;
    Ok(match decompose(predicted) {
        Ok(p) => clause_report(&g, &p),
        Err(_) => ClauseReport { unparsed: true, ..Default::default() },
    })
}
