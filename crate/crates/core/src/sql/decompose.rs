use std::collections::{BTreeSet, HashMap};
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use sqlparser::ast::{
    BinaryOperator, Distinct, Expr, GroupByExpr, JoinConstraint, LimitClause, ObjectNamePart,
    OrderByKind, OrderBySort, Query, Select, SelectItem, SetExpr, SetOperator, TableFactor,
    TableWithJoins, UnaryOperator, Visit, Visitor,
};

use super::normalize::{join_constraint, render, unnest, NormalizedQuery};
use super::SqlError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetOperation {
    /// `union`, `union all`, `intersect` or `except`.
    pub op: String,
    pub query: ClauseDecomposition,
}

/// Clause-level view of a query in canonical form. Clause components are
/// stored as sets where order is irrelevant to meaning (conjuncts, grouping
/// keys) and as sequences where it matters (projection, ordering).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClauseDecomposition {
    /// Canonical text of the whole query.
    pub text: String,
    pub distinct: bool,
    pub select_items: Vec<String>,
    /// Canonical FROM clause body.
    pub from_clause: String,
    /// Base tables of the FROM clause (joined tables included).
    pub tables_with_joins: BTreeSet<String>,
    pub join_predicates: BTreeSet<String>,
    pub where_predicates: BTreeSet<String>,
    pub group_by_items: BTreeSet<String>,
    pub having_predicates: BTreeSet<String>,
    pub order_by_items: Vec<String>,
    pub limit_value: Option<String>,
    pub set_ops: Vec<SetOperation>,
    pub nested_subqueries: Vec<ClauseDecomposition>,
    /// Top-level keyword bucket (where, group by, order by, limit, distinct,
    /// set operators, or, not, in, like, asc/desc).
    pub keywords: BTreeSet<String>,
    /// Column references of this block, `table.column` when the table is
    /// known, bare otherwise.
    pub column_refs: BTreeSet<String>,
    /// Column references of the projection only.
    #[serde(default)]
    pub select_columns: BTreeSet<String>,
    /// Column references outside the projection (join, where, group by,
    /// having, order by).
    #[serde(default)]
    pub filter_columns: BTreeSet<String>,
    /// Columns of WHERE and HAVING conditions that contain no subquery.
    #[serde(default)]
    pub where_columns: BTreeSet<String>,
}

/// Decomposes a query into canonical clause components.
pub fn decompose(sql: &str) -> Result<ClauseDecomposition, SqlError> {
    let normalized = NormalizedQuery::parse(sql)?;
    decompose_query(&normalized.query)
}

pub(crate) fn decompose_query(query: &Query) -> Result<ClauseDecomposition, SqlError> {
    let mut blocks = Vec::new();
    flatten_set_expr(&query.body, None, &mut blocks)?;
    let mut iter = blocks.into_iter();
    let (_, first) = iter.next().expect("set expression has at least one block");
    let mut out = decompose_select(first)?;
    for (op, select) in iter {
        let mut right = decompose_select(select)?;
        right.text = render(select);
        out.keywords.insert(op.clone());
        out.set_ops.push(SetOperation { op, query: right });
    }
    if let Some(order_by) = &query.order_by {
        if let OrderByKind::Expressions(items) = &order_by.kind {
            for item in items {
                let dir = match item.options.sort {
                    Some(OrderBySort::Desc) => "desc",
                    _ => "asc",
                };
                out.order_by_items.push(format!("{} {dir}", render(&item.expr)));
                out.keywords.insert(dir.to_string());
            }
            out.keywords.insert("order by".into());
            let scope = block_tables(first_select(&query.body));
            collect_columns(items.iter().map(|i| &i.expr), &scope, &mut out.column_refs);
            collect_columns(items.iter().map(|i| &i.expr), &scope, &mut out.filter_columns);
        }
    }
    if let Some(limit) = &query.limit_clause {
        let value = match limit {
            LimitClause::LimitOffset { limit: Some(l), offset, .. } => Some(match offset {
                Some(o) => format!("{} offset {}", render(l), render(&o.value)),
                None => render(l),
            }),
            LimitClause::LimitOffset { limit: None, .. } => None,
            LimitClause::OffsetCommaLimit { offset, limit } => {
                Some(format!("{} offset {}", render(limit), render(offset)))
            }
        };
        if value.is_some() {
            out.keywords.insert("limit".into());
        }
        out.limit_value = value;
    }
    out.text = render(query);
    Ok(out)
}

fn first_select(body: &SetExpr) -> Option<&Select> {
    match body {
        SetExpr::Select(s) => Some(s),
        SetExpr::SetOperation { left, .. } => first_select(left),
        SetExpr::Query(q) => first_select(&q.body),
        _ => None,
    }
}

fn flatten_set_expr<'a>(
    body: &'a SetExpr,
    op: Option<String>,
    out: &mut Vec<(String, &'a Select)>,
) -> Result<(), SqlError> {
    match body {
        SetExpr::Select(select) => {
            out.push((op.unwrap_or_default(), select));
            Ok(())
        }
        SetExpr::Query(q) if q.order_by.is_none() && q.limit_clause.is_none() => {
            flatten_set_expr(&q.body, op, out)
        }
        SetExpr::SetOperation {
            op: set_op,
            set_quantifier,
            left,
            right,
        } => {
            flatten_set_expr(left, op, out)?;
            let mut name = match set_op {
                SetOperator::Union => "union",
                SetOperator::Intersect => "intersect",
                SetOperator::Except | SetOperator::Minus => "except",
            }
            .to_string();
            let quantifier = set_quantifier.to_string().to_lowercase();
            if !quantifier.is_empty() {
                name = format!("{name} {quantifier}");
            }
            flatten_set_expr(right, Some(name), out)
        }
        other => Err(SqlError::Unsupported(format!(
            "query body {}",
            render(other).split_whitespace().next().unwrap_or("")
        ))),
    }
}

/// Splits a predicate into its top-level AND conjuncts.
pub(crate) fn conjuncts(e: &Expr) -> Vec<&Expr> {
    match unnest(e) {
        Expr::BinaryOp {
            left,
            op: BinaryOperator::And,
            right,
        } => {
            let mut out = conjuncts(left);
            out.extend(conjuncts(right));
            out
        }
        other => vec![other],
    }
}

fn predicate_text(e: &Expr) -> String {
    let e = unnest(e);
    if let Expr::BinaryOp {
        left,
        op: BinaryOperator::Eq,
        right,
    } = e
    {
        let is_col = |x: &Expr| matches!(x, Expr::Identifier(_) | Expr::CompoundIdentifier(_));
        if is_col(left) && is_col(right) {
            let (mut a, mut b) = (render(left.as_ref()), render(right.as_ref()));
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            return format!("{a} = {b}");
        }
    }
    render(e)
}

/// alias-or-table qualifier -> base table, plus the base tables in order.
pub(crate) struct BlockTables {
    pub qualifiers: HashMap<String, String>,
    pub tables: Vec<String>,
}

pub(crate) fn block_tables(select: Option<&Select>) -> BlockTables {
    let mut bt = BlockTables {
        qualifiers: HashMap::new(),
        tables: Vec::new(),
    };
    let Some(select) = select else { return bt };
    for twj in &select.from {
        for f in std::iter::once(&twj.relation).chain(twj.joins.iter().map(|j| &j.relation)) {
            if let TableFactor::Table { name, alias, .. } = f {
                if let Some(ObjectNamePart::Identifier(id)) = name.0.last() {
                    let table = id.value.clone();
                    if let Some(a) = alias {
                        bt.qualifiers.insert(a.name.value.clone(), table.clone());
                    }
                    bt.qualifiers.insert(table.clone(), table.clone());
                    bt.tables.push(table);
                }
            }
        }
    }
    bt
}

/// Collects column references at depth 0 (not inside nested queries).
struct ColumnCollector<'a> {
    scope: &'a BlockTables,
    depth: usize,
    out: &'a mut BTreeSet<String>,
}

impl Visitor for ColumnCollector<'_> {
    type Break = ();

    fn pre_visit_query(&mut self, _q: &Query) -> ControlFlow<()> {
        self.depth += 1;
        ControlFlow::Continue(())
    }

    fn post_visit_query(&mut self, _q: &Query) -> ControlFlow<()> {
        self.depth -= 1;
        ControlFlow::Continue(())
    }

    fn pre_visit_expr(&mut self, expr: &Expr) -> ControlFlow<()> {
        if self.depth > 0 {
            return ControlFlow::Continue(());
        }
        match expr {
            Expr::Identifier(id) => {
                let name = match self.scope.tables.as_slice() {
                    [only] => format!("{only}.{}", id.value),
                    _ => id.value.clone(),
                };
                self.out.insert(name);
            }
            Expr::CompoundIdentifier(parts) if parts.len() >= 2 => {
                let q = &parts[parts.len() - 2].value;
                let table = self.scope.qualifiers.get(q).unwrap_or(q);
                self.out.insert(format!("{table}.{}", parts[parts.len() - 1].value));
            }
            _ => {}
        }
        ControlFlow::Continue(())
    }
}

fn collect_columns<'e>(
    exprs: impl IntoIterator<Item = &'e Expr>,
    scope: &BlockTables,
    out: &mut BTreeSet<String>,
) {
    for e in exprs {
        let mut c = ColumnCollector { scope, depth: 0, out };
        let _ = e.visit(&mut c);
    }
}

/// Collects directly nested queries (not the ones nested inside those).
#[derive(Default)]
pub(crate) struct SubqueryCollector {
    depth: usize,
    pub found: Vec<Query>,
}

impl SubqueryCollector {
    pub fn scan<T: Visit>(&mut self, node: &T) {
        let _ = node.visit(self);
    }
}

impl Visitor for SubqueryCollector {
    type Break = ();

    fn pre_visit_query(&mut self, q: &Query) -> ControlFlow<()> {
        if self.depth == 0 {
            self.found.push(q.clone());
        }
        self.depth += 1;
        ControlFlow::Continue(())
    }

    fn post_visit_query(&mut self, _q: &Query) -> ControlFlow<()> {
        self.depth -= 1;
        ControlFlow::Continue(())
    }
}

pub(crate) fn leaf_conditions(e: &Expr, out: &mut Vec<Expr>, ors: &mut usize) {
    match unnest(e) {
        Expr::BinaryOp {
            left,
            op: op @ (BinaryOperator::And | BinaryOperator::Or),
            right,
        } => {
            if *op == BinaryOperator::Or {
                *ors += 1;
            }
            leaf_conditions(left, out, ors);
            leaf_conditions(right, out, ors);
        }
        other => out.push(other.clone()),
    }
}

pub(crate) fn is_negated(e: &Expr) -> bool {
    matches!(
        e,
        Expr::InSubquery { negated: true, .. }
            | Expr::InList { negated: true, .. }
            | Expr::Between { negated: true, .. }
            | Expr::Like { negated: true, .. }
            | Expr::ILike { negated: true, .. }
            | Expr::Exists { negated: true, .. }
            | Expr::UnaryOp { op: UnaryOperator::Not, .. }
    )
}

pub(crate) fn is_like(e: &Expr) -> bool {
    matches!(e, Expr::Like { .. } | Expr::ILike { .. })
}

pub(crate) fn is_in(e: &Expr) -> bool {
    matches!(e, Expr::InSubquery { .. } | Expr::InList { .. })
}

fn render_from(from: &[TableWithJoins]) -> String {
    from.iter().map(render).collect::<Vec<_>>().join(", ")
}

fn decompose_select(select: &Select) -> Result<ClauseDecomposition, SqlError> {
    let scope = block_tables(Some(select));
    let mut d = ClauseDecomposition {
        distinct: matches!(select.distinct, Some(Distinct::Distinct)),
        ..Default::default()
    };
    if d.distinct {
        d.keywords.insert("distinct".into());
    }
    let mut exprs: Vec<&Expr> = Vec::new();
    for item in &select.projection {
        d.select_items.push(match item {
            SelectItem::UnnamedExpr(e) => {
                exprs.push(e);
                render(e)
            }
            SelectItem::ExprWithAlias { expr, .. } => {
                exprs.push(expr);
                render(expr)
            }
            other => render(other),
        });
    }
    let projected = exprs.len();
    d.from_clause = render_from(&select.from);
    d.tables_with_joins = scope.tables.iter().cloned().collect();

    let mut conditions: Vec<Expr> = Vec::new();
    let mut ors = 0usize;
    for twj in &select.from {
        for join in &twj.joins {
            if let Some(JoinConstraint::On(on)) = join_constraint(&join.join_operator) {
                d.join_predicates.extend(conjuncts(on).into_iter().map(predicate_text));
                leaf_conditions(on, &mut conditions, &mut ors);
                exprs.push(on);
            }
        }
    }
    if let Some(w) = &select.selection {
        d.keywords.insert("where".into());
        d.where_predicates = conjuncts(w).into_iter().map(predicate_text).collect();
        leaf_conditions(w, &mut conditions, &mut ors);
        exprs.push(w);
    }
    if let GroupByExpr::Expressions(items, _) = &select.group_by {
        if !items.is_empty() {
            d.keywords.insert("group by".into());
        }
        d.group_by_items = items.iter().map(render).collect();
        exprs.extend(items.iter());
    }
    if let Some(h) = &select.having {
        d.keywords.insert("having".into());
        d.having_predicates = conjuncts(h).into_iter().map(predicate_text).collect();
        leaf_conditions(h, &mut conditions, &mut ors);
        exprs.push(h);
    }
    if ors > 0 {
        d.keywords.insert("or".into());
    }
    if conditions.iter().any(is_negated) {
        d.keywords.insert("not".into());
    }
    if conditions.iter().any(is_in) {
        d.keywords.insert("in".into());
    }
    if conditions.iter().any(is_like) {
        d.keywords.insert("like".into());
    }
    collect_columns(exprs.iter().copied(), &scope, &mut d.column_refs);
    collect_columns(exprs[..projected].iter().copied(), &scope, &mut d.select_columns);
    collect_columns(exprs[projected..].iter().copied(), &scope, &mut d.filter_columns);
    let mut plain_leaves = Vec::new();
    for e in select.selection.iter().chain(select.having.iter()) {
        leaf_conditions(e, &mut plain_leaves, &mut 0);
    }
    plain_leaves.retain(|leaf| {
        let mut sub = SubqueryCollector::default();
        sub.scan(leaf);
        sub.found.is_empty()
    });
    collect_columns(plain_leaves.iter(), &scope, &mut d.where_columns);

    let mut sub = SubqueryCollector::default();
    for item in &select.projection {
        sub.scan(item);
    }
    for twj in &select.from {
        sub.scan(twj);
    }
    if let Some(w) = &select.selection {
        sub.scan(w);
    }
    if let Some(h) = &select.having {
        sub.scan(h);
    }
    for q in &sub.found {
        d.nested_subqueries.push(decompose_query(q)?);
    }
    d.text = render(select);
    Ok(d)
}

fn join_preds(preds: &BTreeSet<String>) -> String {
    let wrap = preds.len() > 1;
    preds
        .iter()
        .map(|p| if wrap && p.contains(" or ") { format!("({p})") } else { p.clone() })
        .collect::<Vec<_>>()
        .join(" and ")
}

impl ClauseDecomposition {
    fn core_sql(&self) -> String {
        let mut s = String::from("select ");
        if self.distinct {
            s.push_str("distinct ");
        }
        s.push_str(&self.select_items.join(", "));
        if !self.from_clause.is_empty() {
            s.push_str(" from ");
            s.push_str(&self.from_clause);
        }
        if !self.where_predicates.is_empty() {
            s.push_str(" where ");
            s.push_str(&join_preds(&self.where_predicates));
        }
        if !self.group_by_items.is_empty() {
            s.push_str(" group by ");
            s.push_str(&self.group_by_items.iter().cloned().collect::<Vec<_>>().join(", "));
        }
        if !self.having_predicates.is_empty() {
            s.push_str(" having ");
            s.push_str(&join_preds(&self.having_predicates));
        }
        s
    }

    /// Rebuilds a query from the components.
    pub fn to_sql(&self) -> String {
        let mut s = self.core_sql();
        for op in &self.set_ops {
            s.push(' ');
            s.push_str(&op.op);
            s.push(' ');
            s.push_str(&op.query.core_sql());
        }
        if !self.order_by_items.is_empty() {
            s.push_str(" order by ");
            s.push_str(&self.order_by_items.join(", "));
        }
        if let Some(limit) = &self.limit_value {
            s.push_str(" limit ");
            s.push_str(limit);
        }
        s
    }

    /// Every base table referenced anywhere in the query.
    pub fn all_tables(&self) -> BTreeSet<String> {
        let mut out = self.tables_with_joins.clone();
        for n in &self.nested_subqueries {
            out.extend(n.all_tables());
        }
        for op in &self.set_ops {
            out.extend(op.query.all_tables());
        }
        out
    }

    /// Every column reference anywhere in the query.
    pub fn all_columns(&self) -> BTreeSet<String> {
        let mut out = self.column_refs.clone();
        for n in &self.nested_subqueries {
            out.extend(n.all_columns());
        }
        for op in &self.set_ops {
            out.extend(op.query.all_columns());
        }
        out
    }

    /// Total number of nested subqueries at any depth.
    pub fn nesting_count(&self) -> usize {
        self.nested_subqueries.iter().map(|n| 1 + n.nesting_count()).sum::<usize>()
            + self.set_ops.iter().map(|o| o.query.nesting_count()).sum::<usize>()
    }
}
