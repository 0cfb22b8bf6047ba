use serde::{Deserialize, Serialize};
use sqlparser::ast::{
    BinaryOperator, Expr, FunctionArguments, GroupByExpr, JoinConstraint, ObjectNamePart,
    OrderByKind, Query, Select, SelectItem, SetExpr,
};

use super::decompose::{is_like, is_negated, leaf_conditions};
use super::normalize::{join_constraint, parse_query, unnest};
use super::SqlError;
use crate::model::Difficulty;

/// Structural complexity counts used to bucket a query into a difficulty
/// level. Only the leading block of a set operation is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QueryShape {
    /// Clause count: where, group by, order by, limit, extra table units,
    /// `or` connectors and LIKE conditions.
    pub component1: usize,
    /// Nested subqueries used as condition operands plus set operations.
    pub component2: usize,
    /// Multiplicity flags: several aggregates, select items, where
    /// conditions or grouping keys.
    pub others: usize,
}

impl QueryShape {
    pub fn of_sql(sql: &str) -> Result<Self, SqlError> {
        Ok(Self::of_query(&parse_query(sql)?))
    }

    pub fn of_query(query: &Query) -> Self {
        let (select, has_set_op, tail) = leading_block(query);
        let Some(select) = select else {
            return Self::default();
        };
        // A trailing ORDER BY / LIMIT after a set operation belongs to the
        // last operand, not to the measured block.
        let (order_items, has_limit) = if has_set_op {
            (Vec::new(), false)
        } else {
            tail
        };

        let mut from_conds = Vec::new();
        let mut where_conds = Vec::new();
        let mut having_conds = Vec::new();
        let mut ors = 0;
        let mut table_units = 0;
        for twj in &select.from {
            table_units += 1 + twj.joins.len();
            for join in &twj.joins {
                if let Some(JoinConstraint::On(on)) = join_constraint(&join.join_operator) {
                    leaf_conditions(on, &mut from_conds, &mut ors);
                }
            }
        }
        if let Some(w) = &select.selection {
            leaf_conditions(w, &mut where_conds, &mut ors);
        }
        let mut having_connectors = 0;
        if let Some(h) = &select.having {
            let before = ors;
            let mut local_ors = 0;
            leaf_conditions(h, &mut having_conds, &mut local_ors);
            ors = before + local_ors;
            having_connectors = having_conds.len().saturating_sub(1);
        }
        let group_items = match &select.group_by {
            GroupByExpr::Expressions(items, _) => items.len(),
            GroupByExpr::All(_) => 1,
        };

        let mut c1 = 0;
        c1 += usize::from(!where_conds.is_empty());
        c1 += usize::from(group_items > 0);
        c1 += usize::from(!order_items.is_empty());
        c1 += usize::from(has_limit);
        c1 += table_units.saturating_sub(1);
        c1 += ors;
        c1 += from_conds
            .iter()
            .chain(&where_conds)
            .chain(&having_conds)
            .filter(|c| is_like(c))
            .count();

        let mut c2 = from_conds
            .iter()
            .chain(&where_conds)
            .chain(&having_conds)
            .map(subquery_operands)
            .sum::<usize>();
        c2 += usize::from(has_set_op);

        let select_exprs: Vec<&Expr> = select
            .projection
            .iter()
            .filter_map(|item| match item {
                SelectItem::UnnamedExpr(e) | SelectItem::ExprWithAlias { expr: e, .. } => Some(e),
                _ => None,
            })
            .collect();
        let mut aggs = select_exprs.iter().filter(|e| is_aggregate(e)).count();
        aggs += where_conds.iter().filter(|c| is_negated(c)).count();
        aggs += order_items.iter().map(|e| aggregate_sides(e)).sum::<usize>();
        aggs += having_conds.iter().filter(|c| is_negated(c)).count() + having_connectors;

        let mut others = 0;
        others += usize::from(aggs > 1);
        others += usize::from(select.projection.len() > 1);
        others += usize::from(where_conds.len() > 1);
        others += usize::from(group_items > 1);

        Self {
            component1: c1,
            component2: c2,
            others,
        }
    }

    pub fn difficulty(&self) -> Difficulty {
        let (c1, c2, o) = (self.component1, self.component2, self.others);
        if c1 <= 1 && o == 0 && c2 == 0 {
            Difficulty::Easy
        } else if (o <= 2 && c1 <= 1 && c2 == 0) || (c1 <= 2 && o < 2 && c2 == 0) {
            Difficulty::Medium
        } else if (o > 2 && c1 <= 2 && c2 == 0)
            || (2 < c1 && c1 <= 3 && o <= 2 && c2 == 0)
            || (c1 <= 1 && o == 0 && c2 <= 1)
        {
            Difficulty::Hard
        } else {
            Difficulty::Extra
        }
    }
}

/// Classifies a query string by structural difficulty.
pub fn classify_difficulty(sql: &str) -> Result<Difficulty, SqlError> {
    Ok(QueryShape::of_sql(sql)?.difficulty())
}

type Tail = (Vec<Expr>, bool);

fn leading_block(query: &Query) -> (Option<&Select>, bool, Tail) {
    let order: Vec<Expr> = match &query.order_by {
        Some(o) => match &o.kind {
            OrderByKind::Expressions(items) => items.iter().map(|i| i.expr.clone()).collect(),
            OrderByKind::All(_) => Vec::new(),
        },
        None => Vec::new(),
    };
    let tail = (order, query.limit_clause.is_some());
    match query.body.as_ref() {
        SetExpr::Select(s) => (Some(s), false, tail),
        SetExpr::SetOperation { left, .. } => (first_select(left), true, tail),
        SetExpr::Query(q) => leading_block(q),
        _ => (None, false, tail),
    }
}

fn first_select(body: &SetExpr) -> Option<&Select> {
    match body {
        SetExpr::Select(s) => Some(s),
        SetExpr::SetOperation { left, .. } => first_select(left),
        SetExpr::Query(q) => first_select(&q.body),
        _ => None,
    }
}

fn is_subquery(e: &Expr) -> bool {
    matches!(unnest(e), Expr::Subquery(_))
}

/// Counts the nested queries that serve as value operands of a condition.
fn subquery_operands(cond: &Expr) -> usize {
    match cond {
        Expr::InSubquery { .. } => 1,
        Expr::BinaryOp { right, .. } => usize::from(is_subquery(right)),
        Expr::Between { low, high, .. } => usize::from(is_subquery(low)) + usize::from(is_subquery(high)),
        Expr::Like { pattern, .. } | Expr::ILike { pattern, .. } => usize::from(is_subquery(pattern)),
        Expr::UnaryOp { expr, .. } => subquery_operands(unnest(expr)),
        Expr::Exists { .. } => 1,
        _ => 0,
    }
}

const AGGREGATES: [&str; 5] = ["count", "sum", "avg", "min", "max"];

fn is_aggregate(e: &Expr) -> bool {
    match unnest(e) {
        Expr::Function(f) => {
            let name = match f.name.0.last() {
                Some(ObjectNamePart::Identifier(id)) => id.value.to_lowercase(),
                _ => return false,
            };
            AGGREGATES.contains(&name.as_str()) && !matches!(f.args, FunctionArguments::None)
        }
        _ => false,
    }
}

fn aggregate_sides(e: &Expr) -> usize {
    match unnest(e) {
        Expr::BinaryOp {
            left,
            op: BinaryOperator::Plus | BinaryOperator::Minus | BinaryOperator::Multiply | BinaryOperator::Divide,
            right,
        } => usize::from(is_aggregate(left)) + usize::from(is_aggregate(right)),
        other => usize::from(is_aggregate(other)),
    }
}
