//! Syntax tree for the supported SQLite subset.

use super::lexer::QuoteStyle;

#[derive(Debug, Clone, PartialEq)]
pub struct Ident {
    pub value: String,
    pub quote: Option<QuoteStyle>,
}

impl Ident {
    pub fn bare(value: impl Into<String>) -> Self {
        Self { value: value.into(), quote: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Statement {
    Query(Box<Query>),
    CreateTable(CreateTable),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub ctes: Vec<Cte>,
    pub body: SetExpr,
    pub order_by: Vec<OrderItem>,
    pub limit: Option<Expr>,
    pub offset: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cte {
    pub name: Ident,
    pub columns: Vec<Ident>,
    pub query: Query,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetOperator {
    Union,
    UnionAll,
    Intersect,
    Except,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SetExpr {
    Select(Box<Select>),
    Values(Vec<Vec<Expr>>),
    Nested(Box<Query>),
    SetOp {
        op: SetOperator,
        left: Box<SetExpr>,
        right: Box<SetExpr>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Select {
    pub distinct: bool,
    pub items: Vec<SelectItem>,
    pub from: Vec<TableWithJoins>,
    pub selection: Option<Expr>,
    pub group_by: Vec<Expr>,
    pub having: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectItem {
    Wildcard,
    QualifiedWildcard(Ident),
    Expr { expr: Expr, alias: Option<Ident> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableWithJoins {
    pub factor: TableFactor,
    pub joins: Vec<Join>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TableFactor {
    Table { name: Ident, alias: Option<Ident> },
    Derived { query: Box<Query>, alias: Option<Ident> },
    Nested(Box<TableWithJoins>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinKind {
    Inner,
    Left,
    Right,
    Full,
    Cross,
}

#[derive(Debug, Clone, PartialEq)]
pub enum JoinConstraint {
    On(Expr),
    Using(Vec<Ident>),
    Natural,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Join {
    pub kind: JoinKind,
    pub factor: TableFactor,
    pub constraint: JoinConstraint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderItem {
    pub expr: Expr,
    pub descending: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Number(String),
    String(String),
    Blob(String),
    Null,
    CurrentTime(String),
    Param(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSpec {
    pub partition_by: Vec<Expr>,
    pub order_by: Vec<OrderItem>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Column { qualifier: Option<Ident>, name: Ident },
    Literal(Literal),
    Unary { op: String, expr: Box<Expr> },
    Binary { op: String, left: Box<Expr>, right: Box<Expr> },
    Function {
        name: String,
        distinct: bool,
        star: bool,
        args: Vec<Expr>,
        filter: Option<Box<Expr>>,
        over: Option<WindowSpec>,
    },
    Case {
        operand: Option<Box<Expr>>,
        whens: Vec<(Expr, Expr)>,
        else_result: Option<Box<Expr>>,
    },
    Cast { expr: Box<Expr>, type_name: String },
    Between { expr: Box<Expr>, negated: bool, low: Box<Expr>, high: Box<Expr> },
    Like {
        expr: Box<Expr>,
        op: String,
        negated: bool,
        pattern: Box<Expr>,
        escape: Option<Box<Expr>>,
    },
    InList { expr: Box<Expr>, negated: bool, list: Vec<Expr> },
    InSubquery { expr: Box<Expr>, negated: bool, query: Box<Query> },
    InTable { expr: Box<Expr>, negated: bool, table: Ident },
    IsNull { expr: Box<Expr>, negated: bool },
    Exists(Box<Query>),
    Subquery(Box<Query>),
    Tuple(Vec<Expr>),
    Collate { expr: Box<Expr>, collation: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnDef {
    pub name: Ident,
    pub type_name: String,
    pub primary_key: bool,
    pub references: Option<(Ident, Vec<Ident>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForeignKeyDef {
    pub columns: Vec<Ident>,
    pub foreign_table: Ident,
    pub referred_columns: Vec<Ident>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CreateTable {
    pub name: Ident,
    pub columns: Vec<ColumnDef>,
    pub primary_key: Vec<Ident>,
    pub foreign_keys: Vec<ForeignKeyDef>,
}
