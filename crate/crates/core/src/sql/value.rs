use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

const FLOAT_TOLERANCE: f64 = 1e-6;

/// A scalar cell in a result set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SqlValue {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl SqlValue {
    fn as_f64(&self) -> Option<f64> {
        match self {
            SqlValue::Integer(i) => Some(*i as f64),
            SqlValue::Real(r) => Some(*r),
            _ => None,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            SqlValue::Null => 0,
            SqlValue::Integer(_) | SqlValue::Real(_) => 1,
            SqlValue::Text(_) => 2,
            SqlValue::Blob(_) => 3,
        }
    }

    /// Equality with a `1e-6` tolerance when either side is a float.
    pub fn matches(&self, other: &SqlValue) -> bool {
        match (self, other) {
            (SqlValue::Integer(a), SqlValue::Integer(b)) => a == b,
            (SqlValue::Null, SqlValue::Null) => true,
            (SqlValue::Text(a), SqlValue::Text(b)) => a == b,
            (SqlValue::Blob(a), SqlValue::Blob(b)) => a == b,
            (a, b) => match (a.as_f64(), b.as_f64()) {
                (Some(x), Some(y)) => (x - y).abs() <= FLOAT_TOLERANCE || x == y,
                _ => false,
            },
        }
    }

    fn total_cmp(&self, other: &SqlValue) -> Ordering {
        match (self, other) {
            (SqlValue::Text(a), SqlValue::Text(b)) => a.cmp(b),
            (SqlValue::Blob(a), SqlValue::Blob(b)) => a.cmp(b),
            (SqlValue::Integer(a), SqlValue::Integer(b)) => a.cmp(b),
            (a, b) => match (a.as_f64(), b.as_f64()) {
                (Some(x), Some(y)) => x.total_cmp(&y),
                _ => a.rank().cmp(&b.rank()),
            },
        }
    }
}

impl fmt::Display for SqlValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SqlValue::Null => f.write_str("NULL"),
            SqlValue::Integer(i) => write!(f, "{i}"),
            SqlValue::Real(r) => write!(f, "{r}"),
            SqlValue::Text(s) => write!(f, "'{}'", s.replace('\'', "''")),
            SqlValue::Blob(b) => write!(f, "X'{}'", hex::encode(b)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultSet {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<SqlValue>>,
    /// Whether the producing query had a top-level ORDER BY.
    pub ordered: bool,
}

impl ResultSet {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<SqlValue>>, ordered: bool) -> Self {
        ResultSet { columns, rows, ordered }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.rows.first().map_or(self.columns.len(), Vec::len)
    }
}

fn rows_match(a: &[SqlValue], b: &[SqlValue]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.matches(y))
}

fn row_cmp(a: &[SqlValue], b: &[SqlValue]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

/// Result equivalence: multiset row equality ignoring column names, with
/// ordered comparison only when both sides come from ordered queries.
pub fn compare_results(a: &ResultSet, b: &ResultSet) -> bool {
    if a.rows.len() != b.rows.len() {
        return false;
    }
    if a.rows.is_empty() {
        return true;
    }
    if a.width() != b.width() {
        return false;
    }
    if a.ordered && b.ordered {
        return a.rows.iter().zip(&b.rows).all(|(x, y)| rows_match(x, y));
    }
    let mut left: Vec<&Vec<SqlValue>> = a.rows.iter().collect();
    let mut right: Vec<&Vec<SqlValue>> = b.rows.iter().collect();
    left.sort_by(|x, y| row_cmp(x, y));
    right.sort_by(|x, y| row_cmp(x, y));
    if left.iter().zip(&right).all(|(x, y)| rows_match(x, y)) {
        return true;
    }
    // Floats within tolerance may sort differently; fall back to matching.
    let has_real = |rows: &[&Vec<SqlValue>]| {
        rows.iter().any(|r| r.iter().any(|v| matches!(v, SqlValue::Real(_))))
    };
    if !has_real(&left) && !has_real(&right) {
        return false;
    }
    let mut used = vec![false; right.len()];
    left.iter().all(|row| {
        let hit = right
            .iter()
            .enumerate()
            .position(|(j, other)| !used[j] && rows_match(row, other));
        match hit {
            Some(j) => {
                used[j] = true;
                true
            }
            None => false,
        }
    })
}
