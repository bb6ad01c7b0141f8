use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::ast::*;
use super::lexer::QuoteStyle;
use super::{parse_query, SqlError};
use crate::schema::{ColumnRef, DatabaseSchema};

/// Tables and columns a query touches, in schema-canonical casing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldReference {
    pub tables: BTreeSet<String>,
    pub columns: BTreeSet<ColumnRef>,
}

/// Parses `sql` and resolves every table and column it references against
/// `schema`.
pub fn extract_refs(sql: &str, schema: &DatabaseSchema) -> Result<GoldReference, SqlError> {
    let query = parse_query(sql)?;
    let mut r = Resolver { schema, out: GoldReference::default() };
    r.query(&query, None, &[])?;
    Ok(r.out)
}

fn norm(s: &str) -> String {
    s.to_lowercase()
}

#[derive(Debug, Clone)]
enum SourceKind {
    Base(usize),
    /// Output column names of a subquery or CTE; `open` accepts any name
    /// (recursive CTEs whose shape is not known yet).
    Derived { outputs: Vec<Option<String>>, open: bool },
}

#[derive(Debug, Clone)]
struct Source {
    name: String,
    kind: SourceKind,
}

#[derive(Debug, Clone)]
struct CteDef {
    name: String,
    outputs: Vec<Option<String>>,
    open: bool,
}

#[derive(Default)]
struct Scope<'p> {
    sources: Vec<Source>,
    /// Columns merged by USING / NATURAL; unqualified use is not ambiguous.
    merged: Vec<String>,
    aliases: Vec<String>,
    parent: Option<&'p Scope<'p>>,
}

#[derive(Clone, Copy, PartialEq)]
enum Clause {
    Normal,
    OrderBy,
}

struct Resolver<'s> {
    schema: &'s DatabaseSchema,
    out: GoldReference,
}

impl<'s> Resolver<'s> {
    fn add_table(&mut self, idx: usize) {
        self.out.tables.insert(self.schema.tables[idx].name.clone());
    }

    fn add_column(&mut self, idx: usize, column: &str) -> bool {
        let table = &self.schema.tables[idx];
        match table.column(column) {
            Some(c) => {
                self.out.columns.insert(ColumnRef::new(&table.name, &c.original_name));
                true
            }
            None => false,
        }
    }

    fn add_all_columns(&mut self, idx: usize) {
        let table = &self.schema.tables[idx];
        for c in &table.columns {
            self.out.columns.insert(ColumnRef::new(&table.name, &c.original_name));
        }
    }

    fn source_has(&self, src: &Source, column: &str) -> bool {
        match &src.kind {
            SourceKind::Base(i) => self.schema.tables[*i].column(column).is_some(),
            SourceKind::Derived { outputs, open } => {
                *open || outputs.iter().flatten().any(|o| o.eq_ignore_ascii_case(column))
            }
        }
    }

    fn source_columns(&self, src: &Source) -> Vec<Option<String>> {
        match &src.kind {
            SourceKind::Base(i) => self.schema.tables[*i]
                .columns
                .iter()
                .map(|c| Some(c.original_name.clone()))
                .collect(),
            SourceKind::Derived { outputs, .. } => outputs.clone(),
        }
    }

    /// Resolves a query and returns its output column names.
    fn query(&mut self, q: &Query, parent: Option<&Scope>, ctes: &[CteDef]) -> Result<Vec<Option<String>>, SqlError> {
        let mut env: Vec<CteDef> = ctes.to_vec();
        for cte in &q.ctes {
            let name = norm(&cte.name.value);
            let declared: Vec<Option<String>> = cte.columns.iter().map(|c| Some(c.value.clone())).collect();
            // Make the CTE visible to itself for recursive definitions.
            let mut inner_env = env.clone();
            inner_env.push(CteDef { name: name.clone(), outputs: declared.clone(), open: declared.is_empty() });
            let outputs = self.query(&cte.query, parent, &inner_env)?;
            let outputs = if declared.is_empty() { outputs } else { declared };
            env.push(CteDef { name, outputs, open: false });
        }
        let outputs = self.set_expr(&q.body, parent, &env, &q.order_by)?;
        let limit_scope = Scope { parent, ..Scope::default() };
        for e in q.limit.iter().chain(q.offset.iter()) {
            self.expr(e, &limit_scope, &env, Clause::Normal)?;
        }
        Ok(outputs)
    }

    fn set_expr(
        &mut self,
        body: &SetExpr,
        parent: Option<&Scope>,
        ctes: &[CteDef],
        order_by: &[OrderItem],
    ) -> Result<Vec<Option<String>>, SqlError> {
        match body {
            SetExpr::Select(sel) => self.select(sel, parent, ctes, order_by),
            SetExpr::Values(rows) => {
                let scope = Scope { parent, ..Scope::default() };
                for row in rows {
                    for e in row {
                        self.expr(e, &scope, ctes, Clause::Normal)?;
                    }
                }
                for item in order_by {
                    self.expr(&item.expr, &scope, ctes, Clause::OrderBy)?;
                }
                Ok(vec![None; rows.first().map_or(0, Vec::len)])
            }
            SetExpr::Nested(q) => {
                let out = self.query(q, parent, ctes)?;
                let scope = Scope {
                    parent,
                    aliases: out.iter().flatten().map(|s| norm(s)).collect(),
                    ..Scope::default()
                };
                for item in order_by {
                    self.order_term(&item.expr, &scope, ctes, None)?;
                }
                Ok(out)
            }
            SetExpr::SetOp { left, right, .. } => {
                // ORDER BY of a compound statement binds to the leftmost
                // operand's result columns.
                let out = self.set_expr(left, parent, ctes, order_by)?;
                self.set_expr(right, parent, ctes, &[])?;
                Ok(out)
            }
        }
    }

    fn select(
        &mut self,
        sel: &Select,
        parent: Option<&Scope>,
        ctes: &[CteDef],
        order_by: &[OrderItem],
    ) -> Result<Vec<Option<String>>, SqlError> {
        let mut scope = Scope { parent, ..Scope::default() };
        for twj in &sel.from {
            self.table_with_joins(twj, &mut scope, parent, ctes)?;
        }

        let mut outputs = Vec::new();
        let mut has_wildcard = false;
        for item in &sel.items {
            match item {
                SelectItem::Wildcard => {
                    has_wildcard = true;
                    if scope.sources.is_empty() {
                        return Err(SqlError::Unresolved("*".into()));
                    }
                    for src in scope.sources.clone() {
                        if let SourceKind::Base(i) = src.kind {
                            self.add_all_columns(i);
                        }
                        outputs.extend(self.source_columns(&src));
                    }
                }
                SelectItem::QualifiedWildcard(q) => {
                    has_wildcard = true;
                    let src = scope
                        .sources
                        .iter()
                        .find(|s| s.name == norm(&q.value))
                        .cloned()
                        .ok_or_else(|| SqlError::Unresolved(format!("{}.*", q.value)))?;
                    if let SourceKind::Base(i) = src.kind {
                        self.add_all_columns(i);
                    }
                    outputs.extend(self.source_columns(&src));
                }
                SelectItem::Expr { expr, alias } => {
                    self.expr(expr, &scope, ctes, Clause::Normal)?;
                    outputs.push(match (alias, expr) {
                        (Some(a), _) => Some(a.value.clone()),
                        (None, Expr::Column { name, .. }) => Some(name.value.clone()),
                        _ => None,
                    });
                }
            }
        }
        scope.aliases = sel
            .items
            .iter()
            .filter_map(|i| match i {
                SelectItem::Expr { alias: Some(a), .. } => Some(norm(&a.value)),
                _ => None,
            })
            .collect();

        if let Some(w) = &sel.selection {
            self.expr(w, &scope, ctes, Clause::Normal)?;
        }
        for g in &sel.group_by {
            if !is_integer_literal(g) {
                self.expr(g, &scope, ctes, Clause::Normal)?;
            }
        }
        if let Some(h) = &sel.having {
            self.expr(h, &scope, ctes, Clause::Normal)?;
        }
        let item_count = if has_wildcard { None } else { Some(sel.items.len()) };
        for item in order_by {
            self.order_term(&item.expr, &scope, ctes, item_count)?;
        }
        Ok(outputs)
    }

    fn order_term(&mut self, e: &Expr, scope: &Scope, ctes: &[CteDef], item_count: Option<usize>) -> Result<(), SqlError> {
        if let Expr::Literal(Literal::Number(n)) = e {
            // Positional term: the select item's columns are already counted.
            if let (Ok(pos), Some(count)) = (n.parse::<usize>(), item_count) {
                if pos == 0 || pos > count {
                    return Err(SqlError::Unresolved(format!("ORDER BY term {n} out of range")));
                }
            }
            return Ok(());
        }
        self.expr(e, scope, ctes, Clause::OrderBy)
    }

    fn table_with_joins(
        &mut self,
        twj: &TableWithJoins,
        scope: &mut Scope,
        outer: Option<&Scope>,
        ctes: &[CteDef],
    ) -> Result<(), SqlError> {
        self.table_factor(&twj.factor, scope, outer, ctes)?;
        for join in &twj.joins {
            let before = scope.sources.len();
            self.table_factor(&join.factor, scope, outer, ctes)?;
            match &join.constraint {
                JoinConstraint::On(e) => self.expr(e, scope, ctes, Clause::Normal)?,
                JoinConstraint::Using(cols) => {
                    for c in cols {
                        if !self.merge_column(scope, before, &c.value) {
                            return Err(SqlError::Unresolved(c.value.clone()));
                        }
                    }
                }
                JoinConstraint::Natural => {
                    let mut common = Vec::new();
                    for right in &scope.sources[before..] {
                        for name in self.source_columns(right).into_iter().flatten() {
                            if scope.sources[..before].iter().any(|l| self.source_has(l, &name)) {
                                common.push(name);
                            }
                        }
                    }
                    for name in common {
                        self.merge_column(scope, before, &name);
                    }
                }
                JoinConstraint::None => {}
            }
        }
        Ok(())
    }

    /// Records a USING/NATURAL column on both sides of the join whose right
    /// side starts at source index `split`.
    fn merge_column(&mut self, scope: &mut Scope, split: usize, column: &str) -> bool {
        let left: Vec<Source> = scope.sources[..split].iter().filter(|s| self.source_has(s, column)).cloned().collect();
        let right: Vec<Source> = scope.sources[split..].iter().filter(|s| self.source_has(s, column)).cloned().collect();
        if left.is_empty() || right.is_empty() {
            return false;
        }
        for src in left.iter().chain(right.iter()) {
            if let SourceKind::Base(i) = src.kind {
                self.add_column(i, column);
            }
        }
        scope.merged.push(norm(column));
        true
    }

    fn table_factor(
        &mut self,
        factor: &TableFactor,
        scope: &mut Scope,
        outer: Option<&Scope>,
        ctes: &[CteDef],
    ) -> Result<(), SqlError> {
        match factor {
            TableFactor::Table { name, alias } => {
                let key = norm(&name.value);
                let visible = alias.as_ref().map_or(key.clone(), |a| norm(&a.value));
                if let Some(cte) = ctes.iter().rev().find(|c| c.name == key) {
                    scope.sources.push(Source {
                        name: visible,
                        kind: SourceKind::Derived { outputs: cte.outputs.clone(), open: cte.open },
                    });
                    return Ok(());
                }
                let idx = self
                    .schema
                    .table_index(&name.value)
                    .ok_or_else(|| SqlError::Unresolved(name.value.clone()))?;
                self.add_table(idx);
                scope.sources.push(Source { name: visible, kind: SourceKind::Base(idx) });
            }
            TableFactor::Derived { query, alias } => {
                let outputs = self.query(query, outer, ctes)?;
                scope.sources.push(Source {
                    name: alias.as_ref().map_or(String::new(), |a| norm(&a.value)),
                    kind: SourceKind::Derived { outputs, open: false },
                });
            }
            TableFactor::Nested(inner) => self.table_with_joins(inner, scope, outer, ctes)?,
        }
        Ok(())
    }

    fn column(&mut self, qualifier: Option<&Ident>, name: &Ident, scope: &Scope, clause: Clause) -> Result<(), SqlError> {
        let col = &name.value;
        if let Some(q) = qualifier {
            let qn = norm(&q.value);
            let mut cur = Some(scope);
            while let Some(s) = cur {
                if let Some(src) = s.sources.iter().rev().find(|src| src.name == qn) {
                    return match &src.kind {
                        SourceKind::Base(i) => {
                            if self.add_column(*i, col) || is_rowid(col) {
                                Ok(())
                            } else {
                                Err(SqlError::Unresolved(format!("{}.{}", q.value, col)))
                            }
                        }
                        SourceKind::Derived { .. } if self.source_has(src, col) => Ok(()),
                        SourceKind::Derived { outputs, .. } if outputs.iter().any(Option::is_none) => Ok(()),
                        SourceKind::Derived { .. } => Err(SqlError::Unresolved(format!("{}.{}", q.value, col))),
                    };
                }
                cur = s.parent;
            }
            return Err(SqlError::Unresolved(format!("{}.{}", q.value, col)));
        }

        let key = norm(col);
        if clause == Clause::OrderBy && scope.aliases.contains(&key) {
            return Ok(());
        }
        let mut cur = Some(scope);
        while let Some(s) = cur {
            let owners: Vec<&Source> = s.sources.iter().filter(|src| self.source_has(src, col)).collect();
            match owners.len() {
                0 => {}
                1 => {
                    if let SourceKind::Base(i) = owners[0].kind {
                        self.add_column(i, col);
                    }
                    return Ok(());
                }
                _ if s.merged.contains(&key) => {
                    let bases: Vec<usize> = owners
                        .iter()
                        .filter_map(|o| match o.kind {
                            SourceKind::Base(i) => Some(i),
                            _ => None,
                        })
                        .collect();
                    for i in bases {
                        self.add_column(i, col);
                    }
                    return Ok(());
                }
                _ => {
                    let names: Vec<String> = owners
                        .iter()
                        .map(|o| match o.kind {
                            SourceKind::Base(i) => self.schema.tables[i].name.clone(),
                            _ => o.name.clone(),
                        })
                        .collect();
                    return Err(SqlError::Ambiguous { column: col.clone(), owners: names.join(", ") });
                }
            }
            if s.aliases.contains(&key) {
                return Ok(());
            }
            cur = s.parent;
        }
        if is_rowid(col) && !scope.sources.is_empty() {
            return Ok(());
        }
        if name.quote == Some(QuoteStyle::Double) {
            // SQLite reads an unresolvable double-quoted identifier as a string.
            return Ok(());
        }
        if key == "true" || key == "false" {
            return Ok(());
        }
        Err(SqlError::Unresolved(col.clone()))
    }

    fn expr(&mut self, e: &Expr, scope: &Scope, ctes: &[CteDef], clause: Clause) -> Result<(), SqlError> {
        match e {
            Expr::Column { qualifier, name } => self.column(qualifier.as_ref(), name, scope, clause),
            Expr::Literal(_) => Ok(()),
            Expr::Unary { expr, .. } | Expr::IsNull { expr, .. } | Expr::Cast { expr, .. } | Expr::Collate { expr, .. } => {
                self.expr(expr, scope, ctes, clause)
            }
            Expr::Binary { left, right, .. } => {
                self.expr(left, scope, ctes, clause)?;
                self.expr(right, scope, ctes, clause)
            }
            Expr::Function { args, filter, over, .. } => {
                for a in args {
                    self.expr(a, scope, ctes, clause)?;
                }
                if let Some(f) = filter {
                    self.expr(f, scope, ctes, Clause::Normal)?;
                }
                if let Some(w) = over {
                    for p in &w.partition_by {
                        self.expr(p, scope, ctes, clause)?;
                    }
                    for o in &w.order_by {
                        self.expr(&o.expr, scope, ctes, clause)?;
                    }
                }
                Ok(())
            }
            Expr::Case { operand, whens, else_result } => {
                if let Some(o) = operand {
                    self.expr(o, scope, ctes, clause)?;
                }
                for (w, t) in whens {
                    self.expr(w, scope, ctes, clause)?;
                    self.expr(t, scope, ctes, clause)?;
                }
                if let Some(e) = else_result {
                    self.expr(e, scope, ctes, clause)?;
                }
                Ok(())
            }
            Expr::Between { expr, low, high, .. } => {
                self.expr(expr, scope, ctes, clause)?;
                self.expr(low, scope, ctes, clause)?;
                self.expr(high, scope, ctes, clause)
            }
            Expr::Like { expr, pattern, escape, .. } => {
                self.expr(expr, scope, ctes, clause)?;
                self.expr(pattern, scope, ctes, clause)?;
                if let Some(esc) = escape {
                    self.expr(esc, scope, ctes, clause)?;
                }
                Ok(())
            }
            Expr::InList { expr, list, .. } => {
                self.expr(expr, scope, ctes, clause)?;
                for item in list {
                    self.expr(item, scope, ctes, clause)?;
                }
                Ok(())
            }
            Expr::InSubquery { expr, query, .. } => {
                self.expr(expr, scope, ctes, clause)?;
                self.query(query, Some(scope), ctes).map(|_| ())
            }
            Expr::InTable { expr, table, .. } => {
                self.expr(expr, scope, ctes, clause)?;
                if ctes.iter().any(|c| c.name == norm(&table.value)) {
                    return Ok(());
                }
                let idx = self
                    .schema
                    .table_index(&table.value)
                    .ok_or_else(|| SqlError::Unresolved(table.value.clone()))?;
                self.add_table(idx);
                Ok(())
            }
            Expr::Exists(q) | Expr::Subquery(q) => self.query(q, Some(scope), ctes).map(|_| ()),
            Expr::Tuple(items) => {
                for item in items {
                    self.expr(item, scope, ctes, clause)?;
                }
                Ok(())
            }
        }
    }
}

fn is_integer_literal(e: &Expr) -> bool {
    matches!(e, Expr::Literal(Literal::Number(n)) if n.bytes().all(|b| b.is_ascii_digit()))
}

fn is_rowid(col: &str) -> bool {
    ["rowid", "oid", "_rowid_"].iter().any(|r| r.eq_ignore_ascii_case(col))
}
