use super::ast::*;
use super::lexer::{is_reserved, tokenize, Tok, Token};
use super::SqlError;

type PResult<T> = Result<T, SqlError>;

/// Parses exactly one `SELECT`/`WITH`/`VALUES` statement, with an optional
/// trailing semicolon.
pub fn parse_query(sql: &str) -> PResult<Query> {
    let mut p = Parser::new(sql)?;
    let q = p.query()?;
    p.eat_sym(";");
    p.expect_eof()?;
    Ok(q)
}

/// Parses a single `CREATE TABLE` statement. Comments around it are ignored.
pub fn parse_create_table(sql: &str) -> PResult<CreateTable> {
    let mut p = Parser::new(sql)?;
    let ct = p.create_table()?;
    p.eat_sym(";");
    p.expect_eof()?;
    Ok(ct)
}

/// Parses a semicolon-separated list of statements.
pub fn parse_statements(sql: &str) -> PResult<Vec<Statement>> {
    let mut p = Parser::new(sql)?;
    let mut out = Vec::new();
    loop {
        while p.eat_sym(";") {}
        if p.at_eof() {
            break;
        }
        if p.peek_kw("CREATE") {
            out.push(Statement::CreateTable(p.create_table()?));
        } else {
            out.push(Statement::Query(Box::new(p.query()?)));
        }
        if !p.eat_sym(";") && !p.at_eof() {
            return Err(p.error("expected ';' between statements"));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    src: &'a str,
    tokens: Vec<Token>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> PResult<Self> {
        Ok(Self {
            src,
            tokens: tokenize(src)?,
            pos: 0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn advance(&mut self) -> Tok {
        let t = self.tokens[self.pos].tok.clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn at_eof(&self) -> bool {
        matches!(self.peek(), Tok::Eof)
    }

    fn error(&self, message: impl Into<String>) -> SqlError {
        let tok = &self.tokens[self.pos];
        let found = match &tok.tok {
            Tok::Eof => "end of input".to_string(),
            _ => format!("{:?}", &self.src[tok.offset..tok.offset + tok.len]),
        };
        SqlError::syntax(self.src, tok.offset, format!("{}, found {found}", message.into()))
    }

    fn expect_eof(&self) -> PResult<()> {
        if self.at_eof() {
            Ok(())
        } else {
            Err(self.error("expected end of statement"))
        }
    }

    fn tok_is_kw(tok: &Tok, kw: &str) -> bool {
        matches!(tok, Tok::Word(w) if w.eq_ignore_ascii_case(kw))
    }

    fn peek_kw(&self, kw: &str) -> bool {
        Self::tok_is_kw(self.peek(), kw)
    }

    fn peek_kw_at(&self, n: usize, kw: &str) -> bool {
        Self::tok_is_kw(self.peek_at(n), kw)
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.peek_kw(kw) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.error(format!("expected {kw}")))
        }
    }

    fn peek_sym(&self, sym: &str) -> bool {
        matches!(self.peek(), Tok::Sym(s) if *s == sym)
    }

    fn eat_sym(&mut self, sym: &str) -> bool {
        if self.peek_sym(sym) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, sym: &str) -> PResult<()> {
        if self.eat_sym(sym) {
            Ok(())
        } else {
            Err(self.error(format!("expected '{sym}'")))
        }
    }

    /// Any identifier, including keywords used as names (e.g. `date`).
    fn ident(&mut self) -> PResult<Ident> {
        match self.peek().clone() {
            Tok::Word(w) => {
                self.advance();
                Ok(Ident::bare(w))
            }
            Tok::Quoted { text, style } => {
                self.advance();
                Ok(Ident { value: text, quote: Some(style) })
            }
            _ => Err(self.error("expected identifier")),
        }
    }

    /// An identifier that may not be a reserved word.
    fn name(&mut self) -> PResult<Ident> {
        if let Tok::Word(w) = self.peek() {
            if is_reserved(w) {
                return Err(self.error("expected identifier"));
            }
        }
        self.ident()
    }

    /// Optional `[AS] alias` after a table factor or select expression.
    fn alias(&mut self) -> PResult<Option<Ident>> {
        if self.eat_kw("AS") {
            return match self.peek().clone() {
                Tok::Str(s) => {
                    self.advance();
                    Ok(Some(Ident::bare(s)))
                }
                _ => self.ident().map(Some),
            };
        }
        match self.peek().clone() {
            Tok::Word(w) if !is_reserved(&w) => {
                self.advance();
                Ok(Some(Ident::bare(w)))
            }
            Tok::Quoted { text, style } => {
                self.advance();
                Ok(Some(Ident { value: text, quote: Some(style) }))
            }
            _ => Ok(None),
        }
    }

    // ----------------------------------------------------------------- queries

    fn query(&mut self) -> PResult<Query> {
        let mut ctes = Vec::new();
        if self.eat_kw("WITH") {
            self.eat_kw("RECURSIVE");
            loop {
                ctes.push(self.cte()?);
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        let body = self.set_expr()?;
        let mut order_by = Vec::new();
        if self.peek_kw("ORDER") {
            self.advance();
            self.expect_kw("BY")?;
            order_by = self.order_items()?;
        }
        let (mut limit, mut offset) = (None, None);
        if self.eat_kw("LIMIT") {
            let first = self.expr()?;
            if self.eat_kw("OFFSET") {
                limit = Some(first);
                offset = Some(self.expr()?);
            } else if self.eat_sym(",") {
                // LIMIT <offset>, <count>
                offset = Some(first);
                limit = Some(self.expr()?);
            } else {
                limit = Some(first);
            }
        }
        Ok(Query {
            ctes,
            body,
            order_by,
            limit,
            offset,
        })
    }

    fn cte(&mut self) -> PResult<Cte> {
        let name = self.name()?;
        let mut columns = Vec::new();
        if self.eat_sym("(") {
            loop {
                columns.push(self.ident()?);
                if !self.eat_sym(",") {
                    break;
                }
            }
            self.expect_sym(")")?;
        }
        self.expect_kw("AS")?;
        if self.eat_kw("NOT") {
            self.expect_kw("MATERIALIZED")?;
        } else {
            self.eat_kw("MATERIALIZED");
        }
        self.expect_sym("(")?;
        let query = self.query()?;
        self.expect_sym(")")?;
        Ok(Cte { name, columns, query })
    }

    fn set_expr(&mut self) -> PResult<SetExpr> {
        let mut left = self.set_operand()?;
        loop {
            let op = if self.eat_kw("UNION") {
                if self.eat_kw("ALL") {
                    SetOperator::UnionAll
                } else {
                    SetOperator::Union
                }
            } else if self.eat_kw("INTERSECT") {
                SetOperator::Intersect
            } else if self.eat_kw("EXCEPT") {
                SetOperator::Except
            } else {
                break;
            };
            let right = self.set_operand()?;
            left = SetExpr::SetOp {
                op,
                left: Box::new(left),
                right: Box::new(right),
            };
        }
        Ok(left)
    }

    fn set_operand(&mut self) -> PResult<SetExpr> {
        if self.peek_kw("SELECT") {
            Ok(SetExpr::Select(Box::new(self.select()?)))
        } else if self.eat_kw("VALUES") {
            let mut rows = Vec::new();
            loop {
                self.expect_sym("(")?;
                rows.push(self.expr_list()?);
                self.expect_sym(")")?;
                if !self.eat_sym(",") {
                    break;
                }
            }
            Ok(SetExpr::Values(rows))
        } else if self.peek_sym("(") && (self.peek_kw_at(1, "SELECT") || self.peek_kw_at(1, "WITH")) {
            self.advance();
            let q = self.query()?;
            self.expect_sym(")")?;
            Ok(SetExpr::Nested(Box::new(q)))
        } else {
            Err(self.error("expected SELECT"))
        }
    }

    fn select(&mut self) -> PResult<Select> {
        self.expect_kw("SELECT")?;
        let distinct = if self.eat_kw("DISTINCT") {
            true
        } else {
            self.eat_kw("ALL");
            false
        };
        let mut items = Vec::new();
        loop {
            items.push(self.select_item()?);
            if !self.eat_sym(",") {
                break;
            }
        }
        let mut from = Vec::new();
        if self.eat_kw("FROM") {
            loop {
                from.push(self.table_with_joins()?);
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        let selection = if self.eat_kw("WHERE") { Some(self.expr()?) } else { None };
        let mut group_by = Vec::new();
        if self.peek_kw("GROUP") {
            self.advance();
            self.expect_kw("BY")?;
            group_by = self.expr_list()?;
        }
        let having = if self.eat_kw("HAVING") { Some(self.expr()?) } else { None };
        if self.eat_kw("WINDOW") {
            // Named windows: `WINDOW w AS (...)`; the definitions carry no
            // schema references beyond what the OVER clauses repeat.
            loop {
                self.ident()?;
                self.expect_kw("AS")?;
                self.expect_sym("(")?;
                self.window_body()?;
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        Ok(Select {
            distinct,
            items,
            from,
            selection,
            group_by,
            having,
        })
    }

    fn select_item(&mut self) -> PResult<SelectItem> {
        if self.eat_sym("*") {
            return Ok(SelectItem::Wildcard);
        }
        let is_word = matches!(self.peek(), Tok::Word(_) | Tok::Quoted { .. });
        if is_word
            && matches!(self.peek_at(1), Tok::Sym("."))
            && matches!(self.peek_at(2), Tok::Sym("*"))
        {
            let q = self.ident()?;
            self.advance();
            self.advance();
            return Ok(SelectItem::QualifiedWildcard(q));
        }
        let expr = self.expr()?;
        let alias = self.alias()?;
        Ok(SelectItem::Expr { expr, alias })
    }

    fn table_with_joins(&mut self) -> PResult<TableWithJoins> {
        let factor = self.table_factor()?;
        let mut joins = Vec::new();
        loop {
            let natural = self.eat_kw("NATURAL");
            let kind = if self.eat_kw("LEFT") {
                self.eat_kw("OUTER");
                JoinKind::Left
            } else if self.eat_kw("RIGHT") {
                self.eat_kw("OUTER");
                JoinKind::Right
            } else if self.eat_kw("FULL") {
                self.eat_kw("OUTER");
                JoinKind::Full
            } else if self.eat_kw("INNER") {
                JoinKind::Inner
            } else if self.eat_kw("CROSS") {
                JoinKind::Cross
            } else if self.peek_kw("JOIN") {
                JoinKind::Inner
            } else if natural {
                return Err(self.error("expected JOIN after NATURAL"));
            } else {
                break;
            };
            self.expect_kw("JOIN")?;
            let factor = self.table_factor()?;
            let constraint = if natural {
                JoinConstraint::Natural
            } else if self.eat_kw("ON") {
                JoinConstraint::On(self.expr()?)
            } else if self.eat_kw("USING") {
                self.expect_sym("(")?;
                let mut cols = Vec::new();
                loop {
                    cols.push(self.ident()?);
                    if !self.eat_sym(",") {
                        break;
                    }
                }
                self.expect_sym(")")?;
                JoinConstraint::Using(cols)
            } else {
                JoinConstraint::None
            };
            joins.push(Join { kind, factor, constraint });
        }
        Ok(TableWithJoins { factor, joins })
    }

    fn table_factor(&mut self) -> PResult<TableFactor> {
        if self.eat_sym("(") {
            if self.peek_kw("SELECT") || self.peek_kw("WITH") || self.peek_kw("VALUES") {
                let query = self.query()?;
                self.expect_sym(")")?;
                let alias = self.alias()?;
                return Ok(TableFactor::Derived {
                    query: Box::new(query),
                    alias,
                });
            }
            let inner = self.table_with_joins()?;
            self.expect_sym(")")?;
            return Ok(TableFactor::Nested(Box::new(inner)));
        }
        let mut name = self.name()?;
        if self.eat_sym(".") {
            // schema-qualified: main.t
            name = self.ident()?;
        }
        let alias = self.alias()?;
        if self.eat_kw("INDEXED") {
            self.expect_kw("BY")?;
            self.ident()?;
        } else if self.peek_kw("NOT") && self.peek_kw_at(1, "INDEXED") {
            self.advance();
            self.advance();
        }
        Ok(TableFactor::Table { name, alias })
    }

    fn order_items(&mut self) -> PResult<Vec<OrderItem>> {
        let mut items = Vec::new();
        loop {
            let expr = self.expr()?;
            let descending = if self.eat_kw("DESC") {
                true
            } else {
                self.eat_kw("ASC");
                false
            };
            if self.eat_kw("NULLS") && !self.eat_kw("FIRST") {
                self.expect_kw("LAST")?;
            }
            items.push(OrderItem { expr, descending });
            if !self.eat_sym(",") {
                break;
            }
        }
        Ok(items)
    }

    fn expr_list(&mut self) -> PResult<Vec<Expr>> {
        let mut out = Vec::new();
        loop {
            out.push(self.expr()?);
            if !self.eat_sym(",") {
                break;
            }
        }
        Ok(out)
    }

    // ------------------------------------------------------------- expressions

    fn expr(&mut self) -> PResult<Expr> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> PResult<Expr> {
        let mut left = self.and_expr()?;
        while self.eat_kw("OR") {
            let right = self.and_expr()?;
            left = binary("OR", left, right);
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> PResult<Expr> {
        let mut left = self.not_expr()?;
        while self.eat_kw("AND") {
            let right = self.not_expr()?;
            left = binary("AND", left, right);
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> PResult<Expr> {
        if self.peek_kw("NOT") && !self.peek_kw_at(1, "EXISTS") {
            self.advance();
            let e = self.not_expr()?;
            return Ok(Expr::Unary { op: "NOT".into(), expr: Box::new(e) });
        }
        self.equality()
    }

    fn equality(&mut self) -> PResult<Expr> {
        let mut left = self.comparison()?;
        loop {
            if let Some(op) = ["=", "==", "!=", "<>"].iter().find(|s| self.peek_sym(s)) {
                self.advance();
                let right = self.comparison()?;
                left = binary(op, left, right);
                continue;
            }
            if self.eat_kw("IS") {
                let negated = self.eat_kw("NOT");
                if self.eat_kw("DISTINCT") {
                    self.expect_kw("FROM")?;
                    let right = self.comparison()?;
                    let op = if negated { "IS NOT DISTINCT FROM" } else { "IS DISTINCT FROM" };
                    left = binary(op, left, right);
                } else if self.eat_kw("NULL") {
                    left = Expr::IsNull { expr: Box::new(left), negated };
                } else {
                    let right = self.comparison()?;
                    left = binary(if negated { "IS NOT" } else { "IS" }, left, right);
                }
                continue;
            }
            if self.eat_kw("ISNULL") {
                left = Expr::IsNull { expr: Box::new(left), negated: false };
                continue;
            }
            if self.eat_kw("NOTNULL") {
                left = Expr::IsNull { expr: Box::new(left), negated: true };
                continue;
            }
            let negated = if self.peek_kw("NOT")
                && ["IN", "LIKE", "GLOB", "MATCH", "REGEXP", "BETWEEN", "NULL"]
                    .iter()
                    .any(|k| self.peek_kw_at(1, k))
            {
                self.advance();
                true
            } else {
                false
            };
            if negated && self.eat_kw("NULL") {
                left = Expr::IsNull { expr: Box::new(left), negated: true };
                continue;
            }
            if self.eat_kw("IN") {
                left = self.in_rest(left, negated)?;
                continue;
            }
            if let Some(op) = ["LIKE", "GLOB", "MATCH", "REGEXP"].iter().find(|k| self.peek_kw(k)) {
                self.advance();
                let pattern = self.comparison()?;
                let escape = if self.eat_kw("ESCAPE") {
                    Some(Box::new(self.comparison()?))
                } else {
                    None
                };
                left = Expr::Like {
                    expr: Box::new(left),
                    op: op.to_string(),
                    negated,
                    pattern: Box::new(pattern),
                    escape,
                };
                continue;
            }
            if self.eat_kw("BETWEEN") {
                let low = self.comparison()?;
                self.expect_kw("AND")?;
                let high = self.comparison()?;
                left = Expr::Between {
                    expr: Box::new(left),
                    negated,
                    low: Box::new(low),
                    high: Box::new(high),
                };
                continue;
            }
            if negated {
                return Err(self.error("expected IN, LIKE, GLOB, MATCH, REGEXP or BETWEEN after NOT"));
            }
            break;
        }
        Ok(left)
    }

    fn in_rest(&mut self, left: Expr, negated: bool) -> PResult<Expr> {
        if self.eat_sym("(") {
            if self.peek_kw("SELECT") || self.peek_kw("WITH") || self.peek_kw("VALUES") {
                let q = self.query()?;
                self.expect_sym(")")?;
                return Ok(Expr::InSubquery { expr: Box::new(left), negated, query: Box::new(q) });
            }
            let list = if self.peek_sym(")") { Vec::new() } else { self.expr_list()? };
            self.expect_sym(")")?;
            return Ok(Expr::InList { expr: Box::new(left), negated, list });
        }
        let mut table = self.name()?;
        if self.eat_sym(".") {
            table = self.ident()?;
        }
        Ok(Expr::InTable { expr: Box::new(left), negated, table })
    }

    fn comparison(&mut self) -> PResult<Expr> {
        let mut left = self.bitwise()?;
        while let Some(op) = ["<", "<=", ">", ">="].iter().find(|s| self.peek_sym(s)) {
            self.advance();
            let right = self.bitwise()?;
            left = binary(op, left, right);
        }
        Ok(left)
    }

    fn bitwise(&mut self) -> PResult<Expr> {
        let mut left = self.additive()?;
        while let Some(op) = ["&", "|", "<<", ">>"].iter().find(|s| self.peek_sym(s)) {
            self.advance();
            let right = self.additive()?;
            left = binary(op, left, right);
        }
        Ok(left)
    }

    fn additive(&mut self) -> PResult<Expr> {
        let mut left = self.multiplicative()?;
        while let Some(op) = ["+", "-"].iter().find(|s| self.peek_sym(s)) {
            self.advance();
            let right = self.multiplicative()?;
            left = binary(op, left, right);
        }
        Ok(left)
    }

    fn multiplicative(&mut self) -> PResult<Expr> {
        let mut left = self.concat()?;
        while let Some(op) = ["*", "/", "%"].iter().find(|s| self.peek_sym(s)) {
            self.advance();
            let right = self.concat()?;
            left = binary(op, left, right);
        }
        Ok(left)
    }

    fn concat(&mut self) -> PResult<Expr> {
        let mut left = self.unary()?;
        while let Some(op) = ["||", "->", "->>"].iter().find(|s| self.peek_sym(s)) {
            self.advance();
            let right = self.unary()?;
            left = binary(op, left, right);
        }
        Ok(left)
    }

    fn unary(&mut self) -> PResult<Expr> {
        if let Some(op) = ["-", "+", "~"].iter().find(|s| self.peek_sym(s)) {
            self.advance();
            let e = self.unary()?;
            return Ok(Expr::Unary { op: op.to_string(), expr: Box::new(e) });
        }
        let mut e = self.primary()?;
        while self.eat_kw("COLLATE") {
            let collation = self.ident()?.value;
            e = Expr::Collate { expr: Box::new(e), collation };
        }
        Ok(e)
    }

    fn primary(&mut self) -> PResult<Expr> {
        match self.peek().clone() {
            Tok::Num(n) => {
                self.advance();
                Ok(Expr::Literal(Literal::Number(n)))
            }
            Tok::Str(s) => {
                self.advance();
                Ok(Expr::Literal(Literal::String(s)))
            }
            Tok::Blob(b) => {
                self.advance();
                Ok(Expr::Literal(Literal::Blob(b)))
            }
            Tok::Param(p) => {
                self.advance();
                Ok(Expr::Literal(Literal::Param(p)))
            }
            Tok::Sym("(") => {
                self.advance();
                if self.peek_kw("SELECT") || self.peek_kw("WITH") || self.peek_kw("VALUES") {
                    let q = self.query()?;
                    self.expect_sym(")")?;
                    return Ok(Expr::Subquery(Box::new(q)));
                }
                let mut list = self.expr_list()?;
                self.expect_sym(")")?;
                Ok(if list.len() == 1 { list.pop().unwrap() } else { Expr::Tuple(list) })
            }
            Tok::Word(w) => self.word_primary(&w),
            Tok::Quoted { .. } => self.column_ref(),
            _ => Err(self.error("expected expression")),
        }
    }

    fn word_primary(&mut self, word: &str) -> PResult<Expr> {
        let upper = word.to_ascii_uppercase();
        match upper.as_str() {
            "NULL" => {
                self.advance();
                return Ok(Expr::Literal(Literal::Null));
            }
            "CURRENT_DATE" | "CURRENT_TIME" | "CURRENT_TIMESTAMP" => {
                self.advance();
                return Ok(Expr::Literal(Literal::CurrentTime(upper)));
            }
            "CASE" => return self.case_expr(),
            "CAST" => {
                self.advance();
                self.expect_sym("(")?;
                let e = self.expr()?;
                self.expect_kw("AS")?;
                let type_name = self.type_name()?;
                self.expect_sym(")")?;
                return Ok(Expr::Cast { expr: Box::new(e), type_name });
            }
            "EXISTS" => {
                self.advance();
                self.expect_sym("(")?;
                let q = self.query()?;
                self.expect_sym(")")?;
                return Ok(Expr::Exists(Box::new(q)));
            }
            "NOT" if self.peek_kw_at(1, "EXISTS") => {
                self.advance();
                let e = self.primary()?;
                return Ok(Expr::Unary { op: "NOT".into(), expr: Box::new(e) });
            }
            _ => {}
        }
        if matches!(self.peek_at(1), Tok::Sym("(")) {
            return self.function_call();
        }
        if is_reserved(word) {
            return Err(self.error("expected expression"));
        }
        self.column_ref()
    }

    fn column_ref(&mut self) -> PResult<Expr> {
        let first = self.ident()?;
        if !self.peek_sym(".") {
            return Ok(Expr::Column { qualifier: None, name: first });
        }
        self.advance();
        let second = self.ident()?;
        if self.eat_sym(".") {
            // schema.table.column
            let third = self.ident()?;
            return Ok(Expr::Column { qualifier: Some(second), name: third });
        }
        Ok(Expr::Column { qualifier: Some(first), name: second })
    }

    fn function_call(&mut self) -> PResult<Expr> {
        let name = self.ident()?.value;
        self.expect_sym("(")?;
        let mut distinct = false;
        let mut star = false;
        let mut args = Vec::new();
        if self.eat_sym("*") {
            star = true;
        } else if !self.peek_sym(")") {
            distinct = self.eat_kw("DISTINCT");
            args = self.expr_list()?;
            if self.peek_kw("ORDER") {
                // aggregate ORDER BY: group_concat(x ORDER BY y)
                self.advance();
                self.expect_kw("BY")?;
                for item in self.order_items()? {
                    args.push(item.expr);
                }
            }
        }
        self.expect_sym(")")?;
        let filter = if self.peek_kw("FILTER") && matches!(self.peek_at(1), Tok::Sym("(")) {
            self.advance();
            self.advance();
            self.expect_kw("WHERE")?;
            let e = self.expr()?;
            self.expect_sym(")")?;
            Some(Box::new(e))
        } else {
            None
        };
        let over = if self.eat_kw("OVER") {
            if self.eat_sym("(") {
                Some(self.window_body()?)
            } else {
                self.ident()?;
                Some(WindowSpec { partition_by: vec![], order_by: vec![] })
            }
        } else {
            None
        };
        Ok(Expr::Function { name, distinct, star, args, filter, over })
    }

    /// Parses the inside of `OVER ( ... )` after the opening parenthesis,
    /// consuming the closing one.
    fn window_body(&mut self) -> PResult<WindowSpec> {
        let mut spec = WindowSpec { partition_by: vec![], order_by: vec![] };
        if matches!(self.peek(), Tok::Word(w) if !["PARTITION", "ORDER", "ROWS", "RANGE", "GROUPS"].iter().any(|k| w.eq_ignore_ascii_case(k)))
        {
            // base window name
            self.ident()?;
        }
        if self.eat_kw("PARTITION") {
            self.expect_kw("BY")?;
            spec.partition_by = self.expr_list()?;
        }
        if self.peek_kw("ORDER") {
            self.advance();
            self.expect_kw("BY")?;
            spec.order_by = self.order_items()?;
        }
        // Frame clause: skip to the matching parenthesis.
        let mut depth = 0usize;
        loop {
            match self.peek() {
                Tok::Eof => return Err(self.error("unterminated window specification")),
                Tok::Sym("(") => depth += 1,
                Tok::Sym(")") if depth == 0 => {
                    self.advance();
                    return Ok(spec);
                }
                Tok::Sym(")") => depth -= 1,
                _ => {}
            }
            self.advance();
        }
    }

    fn case_expr(&mut self) -> PResult<Expr> {
        self.expect_kw("CASE")?;
        let operand = if self.peek_kw("WHEN") { None } else { Some(Box::new(self.expr()?)) };
        let mut whens = Vec::new();
        while self.eat_kw("WHEN") {
            let cond = self.expr()?;
            self.expect_kw("THEN")?;
            let result = self.expr()?;
            whens.push((cond, result));
        }
        if whens.is_empty() {
            return Err(self.error("expected WHEN"));
        }
        let else_result = if self.eat_kw("ELSE") { Some(Box::new(self.expr()?)) } else { None };
        self.expect_kw("END")?;
        Ok(Expr::Case { operand, whens, else_result })
    }

    fn type_name(&mut self) -> PResult<String> {
        let mut parts = Vec::new();
        while let Tok::Word(w) = self.peek().clone() {
            if !parts.is_empty() && is_type_terminator(&w) {
                break;
            }
            self.advance();
            parts.push(w);
        }
        if parts.is_empty() {
            return Err(self.error("expected type name"));
        }
        let mut name = parts.join(" ");
        if self.eat_sym("(") {
            let mut args = Vec::new();
            loop {
                let neg = self.eat_sym("-") || {
                    self.eat_sym("+");
                    false
                };
                match self.advance() {
                    Tok::Num(n) => args.push(if neg { format!("-{n}") } else { n }),
                    _ => return Err(self.error("expected number in type arguments")),
                }
                if !self.eat_sym(",") {
                    break;
                }
            }
            self.expect_sym(")")?;
            name = format!("{name}({})", args.join(","));
        }
        Ok(name)
    }

    // --------------------------------------------------------------------- DDL

    fn create_table(&mut self) -> PResult<CreateTable> {
        self.expect_kw("CREATE")?;
        if !self.eat_kw("TEMP") {
            self.eat_kw("TEMPORARY");
        }
        self.expect_kw("TABLE")?;
        if self.eat_kw("IF") {
            self.expect_kw("NOT")?;
            self.expect_kw("EXISTS")?;
        }
        let mut name = self.ident()?;
        if self.eat_sym(".") {
            name = self.ident()?;
        }
        self.expect_sym("(")?;
        let mut table = CreateTable { name, columns: vec![], primary_key: vec![], foreign_keys: vec![] };
        loop {
            if self.peek_kw("CONSTRAINT")
                || self.peek_kw("PRIMARY")
                || self.peek_kw("FOREIGN")
                || self.peek_kw("UNIQUE")
                || self.peek_kw("CHECK")
            {
                self.table_constraint(&mut table)?;
            } else {
                let col = self.column_def()?;
                if col.primary_key {
                    table.primary_key.push(col.name.clone());
                }
                if let Some((t, cols)) = &col.references {
                    table.foreign_keys.push(ForeignKeyDef {
                        columns: vec![col.name.clone()],
                        foreign_table: t.clone(),
                        referred_columns: cols.clone(),
                    });
                }
                table.columns.push(col);
            }
            if !self.eat_sym(",") {
                break;
            }
        }
        self.expect_sym(")")?;
        while matches!(self.peek(), Tok::Word(_)) {
            // WITHOUT ROWID, STRICT
            self.advance();
            self.eat_sym(",");
        }
        Ok(table)
    }

    fn ident_list(&mut self) -> PResult<Vec<Ident>> {
        self.expect_sym("(")?;
        let mut out = Vec::new();
        loop {
            out.push(self.ident()?);
            if self.eat_kw("COLLATE") {
                self.ident()?;
            }
            if !self.eat_kw("ASC") {
                self.eat_kw("DESC");
            }
            if !self.eat_sym(",") {
                break;
            }
        }
        self.expect_sym(")")?;
        Ok(out)
    }

    fn table_constraint(&mut self, table: &mut CreateTable) -> PResult<()> {
        if self.eat_kw("CONSTRAINT") {
            self.ident()?;
        }
        if self.eat_kw("PRIMARY") {
            self.expect_kw("KEY")?;
            table.primary_key = self.ident_list()?;
            self.skip_conflict_clause()?;
        } else if self.eat_kw("UNIQUE") {
            self.ident_list()?;
            self.skip_conflict_clause()?;
        } else if self.eat_kw("CHECK") {
            self.expect_sym("(")?;
            self.expr()?;
            self.expect_sym(")")?;
        } else if self.eat_kw("FOREIGN") {
            self.expect_kw("KEY")?;
            let columns = self.ident_list()?;
            let (foreign_table, referred_columns) = self.references_clause()?;
            table.foreign_keys.push(ForeignKeyDef { columns, foreign_table, referred_columns });
        } else {
            return Err(self.error("expected table constraint"));
        }
        Ok(())
    }

    fn skip_conflict_clause(&mut self) -> PResult<()> {
        if self.peek_kw("ON") && self.peek_kw_at(1, "CONFLICT") {
            self.advance();
            self.advance();
            self.ident()?;
        }
        Ok(())
    }

    fn references_clause(&mut self) -> PResult<(Ident, Vec<Ident>)> {
        self.expect_kw("REFERENCES")?;
        let table = self.ident()?;
        let cols = if self.peek_sym("(") { self.ident_list()? } else { vec![] };
        // ON DELETE/UPDATE actions, MATCH, DEFERRABLE ...
        loop {
            if self.peek_kw("ON") && (self.peek_kw_at(1, "DELETE") || self.peek_kw_at(1, "UPDATE")) {
                self.advance();
                self.advance();
                if self.eat_kw("SET") {
                    self.advance();
                } else if self.eat_kw("NO") {
                    self.expect_kw("ACTION")?;
                } else {
                    self.advance();
                }
            } else if self.eat_kw("MATCH") {
                self.ident()?;
            } else if self.peek_kw("DEFERRABLE") || (self.peek_kw("NOT") && self.peek_kw_at(1, "DEFERRABLE")) {
                self.eat_kw("NOT");
                self.advance();
                if self.eat_kw("INITIALLY") {
                    self.advance();
                }
            } else {
                break;
            }
        }
        Ok((table, cols))
    }

    fn column_def(&mut self) -> PResult<ColumnDef> {
        let name = self.ident()?;
        let mut type_parts = Vec::new();
        while let Tok::Word(w) = self.peek().clone() {
            if is_type_terminator(&w) {
                break;
            }
            self.advance();
            type_parts.push(w);
        }
        let mut type_name = type_parts.join(" ");
        if !type_name.is_empty() && self.eat_sym("(") {
            let mut args = Vec::new();
            loop {
                let neg = self.eat_sym("-");
                self.eat_sym("+");
                match self.advance() {
                    Tok::Num(n) => args.push(if neg { format!("-{n}") } else { n }),
                    _ => return Err(self.error("expected number in type arguments")),
                }
                if !self.eat_sym(",") {
                    break;
                }
            }
            self.expect_sym(")")?;
            type_name = format!("{type_name}({})", args.join(","));
        }
        let mut col = ColumnDef { name, type_name, primary_key: false, references: None };
        loop {
            if self.eat_kw("CONSTRAINT") {
                self.ident()?;
            } else if self.eat_kw("PRIMARY") {
                self.expect_kw("KEY")?;
                if !self.eat_kw("ASC") {
                    self.eat_kw("DESC");
                }
                self.skip_conflict_clause()?;
                self.eat_kw("AUTOINCREMENT");
                col.primary_key = true;
            } else if self.peek_kw("NOT") && self.peek_kw_at(1, "NULL") {
                self.advance();
                self.advance();
                self.skip_conflict_clause()?;
            } else if self.eat_kw("NULL") {
            } else if self.eat_kw("UNIQUE") {
                self.skip_conflict_clause()?;
            } else if self.eat_kw("CHECK") {
                self.expect_sym("(")?;
                self.expr()?;
                self.expect_sym(")")?;
            } else if self.eat_kw("DEFAULT") {
                if self.eat_sym("(") {
                    self.expr()?;
                    self.expect_sym(")")?;
                } else {
                    self.unary()?;
                }
            } else if self.eat_kw("COLLATE") {
                self.ident()?;
            } else if self.peek_kw("REFERENCES") {
                col.references = Some(self.references_clause()?);
            } else if self.eat_kw("GENERATED") {
                self.expect_kw("ALWAYS")?;
                self.expect_kw("AS")?;
                self.expect_sym("(")?;
                self.expr()?;
                self.expect_sym(")")?;
                if !self.eat_kw("STORED") {
                    self.eat_kw("VIRTUAL");
                }
            } else if self.peek_kw("AS") && matches!(self.peek_at(1), Tok::Sym("(")) {
                self.advance();
                self.advance();
                self.expr()?;
                self.expect_sym(")")?;
                if !self.eat_kw("STORED") {
                    self.eat_kw("VIRTUAL");
                }
            } else {
                break;
            }
        }
        Ok(col)
    }
}

fn is_type_terminator(word: &str) -> bool {
    [
        "CONSTRAINT", "PRIMARY", "NOT", "NULL", "UNIQUE", "CHECK", "DEFAULT", "COLLATE",
        "REFERENCES", "GENERATED", "AS",
    ]
    .iter()
    .any(|k| word.eq_ignore_ascii_case(k))
}

fn binary(op: &str, left: Expr, right: Expr) -> Expr {
    Expr::Binary { op: op.to_string(), left: Box::new(left), right: Box::new(right) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_paper_style_question_zero() {
        let q = parse_query(
            "SELECT `Free Meal Count (K-12)` / `Enrollment (K-12)` FROM frpm WHERE `County Name` = 'Alameda' \
             ORDER BY (CAST(`Free Meal Count (K-12)` AS REAL) / `Enrollment (K-12)`) DESC LIMIT 1",
        )
        .unwrap();
        assert_eq!(q.order_by.len(), 1);
        assert!(q.order_by[0].descending);
        assert!(q.limit.is_some());
    }

    #[test]
    fn precedence_between_and_boolean() {
        let q = parse_query("SELECT 1 FROM t WHERE a BETWEEN 1 AND 2 AND b = 3 OR c").unwrap();
        let SetExpr::Select(sel) = q.body else { panic!() };
        let Some(Expr::Binary { op, left, .. }) = sel.selection else { panic!() };
        assert_eq!(op, "OR");
        assert!(matches!(*left, Expr::Binary { ref op, .. } if op == "AND"));
    }

    #[test]
    fn limit_comma_form() {
        let q = parse_query("SELECT a FROM t LIMIT 5, 10").unwrap();
        assert_eq!(q.offset, Some(Expr::Literal(Literal::Number("5".into()))));
        assert_eq!(q.limit, Some(Expr::Literal(Literal::Number("10".into()))));
    }

    #[test]
    fn compound_left_associative() {
        let q = parse_query("SELECT a FROM t UNION SELECT b FROM u EXCEPT SELECT c FROM v").unwrap();
        let SetExpr::SetOp { op, left, .. } = q.body else { panic!() };
        assert_eq!(op, SetOperator::Except);
        assert!(matches!(*left, SetExpr::SetOp { op: SetOperator::Union, .. }));
    }

    #[test]
    fn keyword_named_columns() {
        parse_query("SELECT date, year, time, rank FROM races WHERE round = 1").unwrap();
    }

    #[test]
    fn reports_position_of_syntax_error() {
        let err = parse_query("SELECT a FROM t WHERE\n  AND b").unwrap_err();
        match err {
            SqlError::Syntax { line, column, .. } => assert_eq!((line, column), (2, 3)),
            other => panic!("{other:?}"),
        }
        assert!(parse_query("SELEC a FROM t").is_err());
        assert!(parse_query("SELECT a FROM t extra junk").is_err());
    }

    #[test]
    fn create_table_with_keys() {
        let ct = parse_create_table(
            "CREATE TABLE employee (\n    emp_id INT PRIMARY KEY,\n    `First Name` VARCHAR(100),\n    \
             dept_id INT,\n    FOREIGN KEY (dept_id) REFERENCES dept (id)\n);\n-- Sample rows\n-- 1 | x",
        )
        .unwrap();
        let names: Vec<_> = ct.columns.iter().map(|c| c.name.value.as_str()).collect();
        assert_eq!(names, ["emp_id", "First Name", "dept_id"]);
        assert_eq!(ct.columns[1].type_name, "VARCHAR(100)");
        assert_eq!(ct.primary_key, vec![Ident::bare("emp_id")]);
        assert_eq!(ct.foreign_keys[0].foreign_table.value, "dept");
    }

    #[test]
    fn composite_primary_key_clause() {
        let ct = parse_create_table("CREATE TABLE x (a INT, b INT, PRIMARY KEY (a, b))").unwrap();
        assert_eq!(ct.primary_key.len(), 2);
    }

    #[test]
    fn statements_split_on_semicolons() {
        let stmts = parse_statements("CREATE TABLE a (x INT); SELECT x FROM a;").unwrap();
        assert_eq!(stmts.len(), 2);
    }
}
