//! Parsing and canonicalization of SQLite queries: identifiers are
//! lower-cased, unambiguous table aliases are resolved to base table names,
//! and double-quoted identifiers in expressions are read as string literals
//! (the convention in Spider gold queries).

use std::collections::HashMap;
use std::ops::ControlFlow;

use sqlparser::ast::{
    Expr, Ident, JoinConstraint, JoinOperator, ObjectName, ObjectNamePart, Query, Select,
    SelectItem, SelectItemQualifiedWildcardKind, SetExpr, Statement, TableFactor, Value,
    VisitMut, VisitorMut,
};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::parser::Parser;

use super::SqlError;

fn position_of(message: &str) -> (u64, u64) {
    let grab = |key: &str| {
        message
            .rfind(key)
            .map(|i| &message[i + key.len()..])
            .and_then(|rest| {
                rest.trim_start()
                    .chars()
                    .take_while(char::is_ascii_digit)
                    .collect::<String>()
                    .parse()
                    .ok()
            })
            .unwrap_or(0)
    };
    (grab("Line:"), grab("Column:"))
}

/// Parses exactly one SELECT-style query.
pub fn parse_query(sql: &str) -> Result<Query, SqlError> {
    let trimmed = sql.trim().trim_end_matches(';').trim();
    let statements = Parser::parse_sql(&SQLiteDialect {}, trimmed).map_err(|e| {
        let message = e.to_string();
        let (line, column) = position_of(&message);
        SqlError::Parse {
            message,
            line,
            column,
        }
    })?;
    match <[Statement; 1]>::try_from(statements) {
        Ok([Statement::Query(q)]) => Ok(*q),
        Ok([other]) => Err(SqlError::Unsupported(format!(
            "expected a query, found {}",
            other.to_string().split_whitespace().next().unwrap_or("")
        ))),
        Err(v) => Err(SqlError::Unsupported(format!("expected one statement, found {}", v.len()))),
    }
}

/// Whether the statement's outermost query carries an ORDER BY.
pub fn has_top_level_order_by(sql: &str) -> bool {
    match parse_query(sql) {
        Ok(q) => q.order_by.is_some(),
        Err(_) => {
            // Depth-0 textual scan for statements the parser rejects.
            let lower = sql.to_ascii_lowercase();
            let bytes = lower.as_bytes();
            let mut depth = 0i32;
            let mut quote: Option<u8> = None;
            for i in 0..bytes.len() {
                let c = bytes[i];
                match quote {
                    Some(q) if c == q => quote = None,
                    Some(_) => {}
                    None => match c {
                        b'\'' | b'"' => quote = Some(c),
                        b'(' => depth += 1,
                        b')' => depth -= 1,
                        b'o' if depth == 0 && lower[i..].starts_with("order by") => return true,
                        _ => {}
                    },
                }
            }
            false
        }
    }
}

/// Lower-cases everything outside single-quoted literals and collapses
/// whitespace.
pub(crate) fn canonical(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_quote = false;
    let mut last_space = false;
    for c in text.chars() {
        if c == '\'' {
            in_quote = !in_quote;
        }
        if !in_quote && c.is_whitespace() {
            if !last_space && !out.is_empty() {
                out.push(' ');
            }
            last_space = true;
            continue;
        }
        last_space = false;
        if in_quote {
            out.push(c);
        } else {
            out.extend(c.to_lowercase());
        }
    }
    out.trim_end().to_string()
}

pub(crate) fn render<T: std::fmt::Display>(node: &T) -> String {
    canonical(&node.to_string())
}

/// Strips redundant parentheses around an expression.
pub(crate) fn unnest(mut e: &Expr) -> &Expr {
    while let Expr::Nested(inner) = e {
        e = inner;
    }
    e
}

fn object_tail(name: &ObjectName) -> Option<String> {
    match name.0.last()? {
        ObjectNamePart::Identifier(id) => Some(id.value.clone()),
        _ => None,
    }
}

fn needs_quotes(s: &str) -> bool {
    s.is_empty()
        || !s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        || s.starts_with(|c: char| c.is_ascii_digit())
}

struct Canonicalize;

impl VisitorMut for Canonicalize {
    type Break = ();

    fn pre_visit_expr(&mut self, expr: &mut Expr) -> ControlFlow<()> {
        if let Expr::Identifier(id) = expr {
            if id.quote_style == Some('"') {
                *expr = Expr::value(Value::SingleQuotedString(id.value.clone()));
            }
        }
        ControlFlow::Continue(())
    }

    fn post_visit_ident(&mut self, ident: &mut Ident) -> ControlFlow<()> {
        ident.value = ident.value.to_lowercase();
        if !needs_quotes(&ident.value) {
            ident.quote_style = None;
        }
        ControlFlow::Continue(())
    }

    fn post_visit_query(&mut self, query: &mut Query) -> ControlFlow<()> {
        resolve_query_aliases(query);
        ControlFlow::Continue(())
    }
}

/// Scope of one SELECT block: which qualifiers map to which base tables.
#[derive(Default)]
struct Scope {
    /// qualifier (alias or table name) -> base table, `None` when ambiguous
    qualifiers: HashMap<String, Option<String>>,
    single_table: Option<String>,
}

impl Scope {
    fn of(select: &Select) -> Scope {
        let mut factors: Vec<&TableFactor> = Vec::new();
        for twj in &select.from {
            factors.push(&twj.relation);
            factors.extend(twj.joins.iter().map(|j| &j.relation));
        }
        let mut table_uses: HashMap<String, usize> = HashMap::new();
        for f in &factors {
            if let TableFactor::Table { name, .. } = f {
                if let Some(t) = object_tail(name) {
                    *table_uses.entry(t).or_default() += 1;
                }
            }
        }
        let mut scope = Scope::default();
        for f in &factors {
            match f {
                TableFactor::Table { name, alias, .. } => {
                    let Some(table) = object_tail(name) else { continue };
                    let unique = table_uses[&table] == 1;
                    let base = unique.then(|| table.clone());
                    if let Some(a) = alias {
                        scope.qualifiers.insert(a.name.value.clone(), base);
                    }
                    if unique {
                        scope.qualifiers.entry(table.clone()).or_insert(Some(table));
                    }
                }
                other => {
                    if let Some(a) = table_factor_alias(other) {
                        scope.qualifiers.insert(a, None);
                    }
                }
            }
        }
        if let [TableFactor::Table { name, .. }] = factors.as_slice() {
            scope.single_table = object_tail(name);
        }
        scope
    }

    fn rewrite(&self, expr: &mut Expr) {
        if let Expr::CompoundIdentifier(parts) = expr {
            if parts.len() != 2 {
                return;
            }
            let Some(Some(base)) = self.qualifiers.get(&parts[0].value) else {
                return;
            };
            if self.single_table.as_deref() == Some(base.as_str()) {
                *expr = Expr::Identifier(parts[1].clone());
            } else {
                parts[0] = Ident::new(base.clone());
            }
        }
    }
}

fn table_factor_alias(f: &TableFactor) -> Option<String> {
    match f {
        TableFactor::Derived { alias, .. } => alias.as_ref().map(|a| a.name.value.clone()),
        TableFactor::NestedJoin { alias, .. } => alias.as_ref().map(|a| a.name.value.clone()),
        _ => None,
    }
}

/// Applies a scope to expressions without entering nested queries, which
/// have already been resolved against their own scope.
struct ScopedRewrite<'a> {
    scope: &'a Scope,
    depth: usize,
}

impl VisitorMut for ScopedRewrite<'_> {
    type Break = ();

    fn pre_visit_query(&mut self, _q: &mut Query) -> ControlFlow<()> {
        self.depth += 1;
        ControlFlow::Continue(())
    }

    fn post_visit_query(&mut self, _q: &mut Query) -> ControlFlow<()> {
        self.depth -= 1;
        ControlFlow::Continue(())
    }

    fn post_visit_expr(&mut self, expr: &mut Expr) -> ControlFlow<()> {
        if self.depth == 0 {
            self.scope.rewrite(expr);
        }
        ControlFlow::Continue(())
    }
}

pub(crate) fn join_constraint_mut(op: &mut JoinOperator) -> Option<&mut JoinConstraint> {
    use JoinOperator::*;
    match op {
        Join(c) | Inner(c) | Left(c) | LeftOuter(c) | Right(c) | RightOuter(c) | FullOuter(c)
        | CrossJoin(c) | Semi(c) | LeftSemi(c) | RightSemi(c) | Anti(c) | LeftAnti(c)
        | RightAnti(c) | StraightJoin(c) => Some(c),
        _ => None,
    }
}

pub(crate) fn join_constraint(op: &JoinOperator) -> Option<&JoinConstraint> {
    use JoinOperator::*;
    match op {
        Join(c) | Inner(c) | Left(c) | LeftOuter(c) | Right(c) | RightOuter(c) | FullOuter(c)
        | CrossJoin(c) | Semi(c) | LeftSemi(c) | RightSemi(c) | Anti(c) | LeftAnti(c)
        | RightAnti(c) | StraightJoin(c) => Some(c),
        _ => None,
    }
}

fn resolve_select(select: &mut Select) -> Scope {
    let scope = Scope::of(select);
    let mut rw = ScopedRewrite {
        scope: &scope,
        depth: 0,
    };
    for item in &mut select.projection {
        match item {
            SelectItem::UnnamedExpr(e) | SelectItem::ExprWithAlias { expr: e, .. } => {
                let _ = e.visit(&mut rw);
            }
            SelectItem::QualifiedWildcard(SelectItemQualifiedWildcardKind::ObjectName(name), _) => {
                if let Some(q) = object_tail(name) {
                    if let Some(Some(base)) = scope.qualifiers.get(&q) {
                        *name = ObjectName::from(vec![Ident::new(base.clone())]);
                    }
                }
            }
            _ => {}
        }
    }
    for twj in &mut select.from {
        for join in &mut twj.joins {
            if let Some(JoinConstraint::On(e)) = join_constraint_mut(&mut join.join_operator) {
                let _ = e.visit(&mut rw);
            }
        }
    }
    if let Some(e) = &mut select.selection {
        let _ = e.visit(&mut rw);
    }
    let _ = select.group_by.visit(&mut rw);
    if let Some(e) = &mut select.having {
        let _ = e.visit(&mut rw);
    }
    // Drop aliases that now resolve to their base table.
    for twj in &mut select.from {
        let factors = std::iter::once(&mut twj.relation).chain(twj.joins.iter_mut().map(|j| &mut j.relation));
        for f in factors {
            if let TableFactor::Table { name, alias, .. } = f {
                let resolved = alias.as_ref().is_some_and(|a| {
                    matches!(scope.qualifiers.get(&a.name.value), Some(Some(base)) if Some(base) == object_tail(name).as_ref())
                });
                if resolved {
                    *alias = None;
                }
            }
        }
    }
    scope
}

fn resolve_set_expr(body: &mut SetExpr) -> Option<Scope> {
    match body {
        SetExpr::Select(select) => Some(resolve_select(select)),
        SetExpr::SetOperation { left, right, .. } => {
            let scope = resolve_set_expr(left);
            resolve_set_expr(right);
            scope
        }
        _ => None,
    }
}

fn resolve_query_aliases(query: &mut Query) {
    let scope = resolve_set_expr(&mut query.body);
    if let (Some(scope), Some(order_by)) = (scope, &mut query.order_by) {
        let mut rw = ScopedRewrite {
            scope: &scope,
            depth: 0,
        };
        let _ = order_by.visit(&mut rw);
    }
}

/// A parsed query in canonical form.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedQuery {
    pub query: Query,
}

impl NormalizedQuery {
    pub fn parse(sql: &str) -> Result<Self, SqlError> {
        let mut query = parse_query(sql)?;
        let _ = query.visit(&mut Canonicalize);
        Ok(NormalizedQuery { query })
    }

    pub fn to_sql(&self) -> String {
        render(&self.query)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aliases_resolve_to_base_tables() {
        let q = NormalizedQuery::parse(
            "SELECT T2.Name, count(*) FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id GROUP BY T1.stadium_id",
        )
        .unwrap();
        assert_eq!(
            q.to_sql(),
            "select stadium.name, count(*) from concert join stadium on concert.stadium_id = stadium.stadium_id group by concert.stadium_id"
        );
    }

    #[test]
    fn single_source_qualifiers_are_dropped() {
        let a = NormalizedQuery::parse("SELECT T1.name FROM Singer AS T1 WHERE T1.age > 20").unwrap();
        let b = NormalizedQuery::parse("select NAME from singer where AGE > 20;").unwrap();
        assert_eq!(a.to_sql(), b.to_sql());
    }

    #[test]
    fn self_join_aliases_stay_verbatim() {
        let q = NormalizedQuery::parse("SELECT T1.name FROM emp AS T1 JOIN emp AS T2 ON T1.boss = T2.id").unwrap();
        assert_eq!(q.to_sql(), "select t1.name from emp as t1 join emp as t2 on t1.boss = t2.id");
    }

    #[test]
    fn inner_scopes_resolve_independently() {
        let q = NormalizedQuery::parse(
            "SELECT T1.name FROM a AS T1 JOIN b AS T2 ON T1.id = T2.aid WHERE T1.id IN (SELECT T1.aid FROM c AS T1)",
        )
        .unwrap();
        assert_eq!(
            q.to_sql(),
            "select a.name from a join b on a.id = b.aid where a.id in (select aid from c)"
        );
    }

    #[test]
    fn double_quoted_values_become_strings() {
        let q = NormalizedQuery::parse(r#"SELECT name FROM singer WHERE country = "France""#).unwrap();
        assert_eq!(q.to_sql(), "select name from singer where country = 'France'");
    }

    #[test]
    fn parse_errors_carry_position() {
        match parse_query("SELECT name FROM WHERE x = 1") {
            Err(SqlError::Parse { line, column, .. }) => {
                assert_eq!(line, 1);
                assert!(column > 0);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_query("DELETE FROM t"), Err(SqlError::Unsupported(_))));
    }

    #[test]
    fn order_by_detection() {
        assert!(has_top_level_order_by("SELECT a FROM t ORDER BY a"));
        assert!(!has_top_level_order_by("SELECT a FROM t WHERE a IN (SELECT b FROM u ORDER BY b LIMIT 1)"));
        assert!(has_top_level_order_by("SELEC a FROM t ORDER BY a"));
    }
}
