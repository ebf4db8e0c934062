//! Recursive-descent parser for the accepted SELECT subset.
//!
//! Statement-level problems (several statements, a non-SELECT statement, a
//! leading `WITH`) are reported with their own violation codes; everything
//! else that does not fit the grammar is a `PARSE_ERROR` naming the byte
//! offset, line and column, what was expected and what was found.

use super::ast::*;
use super::lexer::{is_reserved, tokenize, Token, TokenKind};
use super::violation::{Violation, ViolationCode};

/// Parses exactly one SELECT statement (a trailing `;` is tolerated).
pub fn parse_sql(text: &str) -> Result<QueryAst, Vec<Violation>> {
    let tokens = tokenize(text).map_err(|e| {
        vec![Violation::at(
            ViolationCode::ParseError,
            format!("{} at {}", e.message, position(text, e.offset)),
            Span::new(e.offset, e.offset + 1),
        )]
    })?;

    let mut statements: Vec<&[Token]> = Vec::new();
    let mut start = 0;
    for (i, token) in tokens.iter().enumerate() {
        if matches!(token.kind, TokenKind::Semicolon | TokenKind::Eof) {
            if i > start {
                statements.push(&tokens[start..i]);
            }
            start = i + 1;
        }
    }

    match statements.len() {
        0 => Err(vec![Violation::new(
            ViolationCode::ParseError,
            "empty query: expected a SELECT statement",
            None,
        )]),
        1 => {
            let stmt = statements[0];
            if let Some(v) = statement_kind_violation(&stmt[0]) {
                return Err(vec![v]);
            }
            let mut owned = stmt.to_vec();
            owned.push(tokens[tokens.len() - 1].clone());
            let mut parser = Parser {
                text,
                tokens: owned,
                pos: 0,
            };
            let query = parser.parse_query().map_err(|v| vec![v])?;
            parser.expect_eof().map_err(|v| vec![v])?;
            Ok(query)
        }
        n => {
            let first = statements[0][0].span;
            let last = statements[n - 1][statements[n - 1].len() - 1].span;
            let mut violations = vec![Violation::at(
                ViolationCode::MultiStatement,
                format!("found {n} statements; submit exactly one SELECT per request"),
                first.union(last),
            )];
            for stmt in &statements {
                if let Some(v) = statement_kind_violation(&stmt[0]) {
                    if !violations.iter().any(|x| x.code == v.code) {
                        violations.push(v);
                    }
                }
            }
            Err(violations)
        }
    }
}

/// Leading keywords of the statement kinds other than SELECT. Anything else
/// in first position is a syntax error, not a statement.
const STATEMENT_KEYWORDS: &[&str] = &[
    "ALTER", "ANALYZE", "ATTACH", "BEGIN", "COMMIT", "CREATE", "DELETE", "DETACH", "DROP", "END",
    "EXPLAIN", "INSERT", "PRAGMA", "REINDEX", "RELEASE", "REPLACE", "ROLLBACK", "SAVEPOINT",
    "UPDATE", "VACUUM", "VALUES",
];

/// Flags statements whose leading keyword is not SELECT.
fn statement_kind_violation(first: &Token) -> Option<Violation> {
    match &first.kind {
        TokenKind::Word(w) if w.eq_ignore_ascii_case("SELECT") => None,
        TokenKind::Word(w) if w.eq_ignore_ascii_case("WITH") => Some(Violation::at(
            ViolationCode::CteForbidden,
            "common table expressions (WITH) are not permitted",
            first.span,
        )),
        TokenKind::Word(w) if STATEMENT_KEYWORDS.iter().any(|k| w.eq_ignore_ascii_case(k)) => Some(Violation::at(
            ViolationCode::ForbiddenStatement,
            format!(
                "{} statements are not permitted; only SELECT is allowed",
                w.to_ascii_uppercase()
            ),
            first.span,
        )),
        _ => None,
    }
}

/// "line L, column C (offset O)" for a byte offset.
pub(crate) fn position(text: &str, offset: usize) -> String {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(offset, |nl| offset - nl - 1) + 1;
    format!("line {line}, column {col} (offset {offset})")
}

struct Parser<'a> {
    text: &'a str,
    tokens: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, Violation>;

impl<'a> Parser<'a> {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos.min(self.tokens.len() - 1)]
    }

    fn peek_nth(&self, n: usize) -> &Token {
        &self.tokens[(self.pos + n).min(self.tokens.len() - 1)]
    }

    fn advance(&mut self) -> Token {
        let tok = self.peek().clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        tok
    }

    fn last_end(&self) -> usize {
        if self.pos == 0 {
            0
        } else {
            self.tokens[self.pos - 1].span.end
        }
    }

    fn error(&self, expected: &str) -> Violation {
        let tok = self.peek();
        Violation::at(
            ViolationCode::ParseError,
            format!(
                "expected {expected}, found {} at {}",
                tok.describe(),
                position(self.text, tok.span.start)
            ),
            tok.span,
        )
    }

    fn unsupported(&self, what: &str) -> Violation {
        let tok = self.peek();
        Violation::at(
            ViolationCode::ParseError,
            format!(
                "{what} is not supported at {}",
                position(self.text, tok.span.start)
            ),
            tok.span,
        )
    }

    fn at_keyword(&self, kw: &str) -> bool {
        self.peek().is_keyword(kw)
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.at_keyword(kw) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> PResult<Token> {
        if self.at_keyword(kw) {
            Ok(self.advance())
        } else {
            Err(self.error(kw))
        }
    }

    fn at_symbol(&self, sym: &str) -> bool {
        matches!(self.peek().kind, TokenKind::Symbol(s) if s == sym)
    }

    fn eat_symbol(&mut self, sym: &str) -> bool {
        if self.at_symbol(sym) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect_symbol(&mut self, sym: &str) -> PResult<Token> {
        if self.at_symbol(sym) {
            Ok(self.advance())
        } else {
            Err(self.error(&format!("'{sym}'")))
        }
    }

    fn expect_eof(&mut self) -> PResult<()> {
        if matches!(self.peek().kind, TokenKind::Eof) {
            Ok(())
        } else {
            Err(self.error("end of statement"))
        }
    }

    fn at_query_start(&self) -> bool {
        self.at_keyword("SELECT") || self.at_keyword("WITH")
    }

    fn parse_ident(&mut self, what: &str) -> PResult<Ident> {
        let tok = self.peek().clone();
        match tok.kind {
            TokenKind::Word(w) if !is_reserved(&w) => {
                self.advance();
                Ok(Ident {
                    value: w,
                    quoted: false,
                    span: tok.span,
                })
            }
            TokenKind::QuotedIdent(w) => {
                self.advance();
                Ok(Ident {
                    value: w,
                    quoted: true,
                    span: tok.span,
                })
            }
            _ => Err(self.error(what)),
        }
    }

    fn parse_optional_alias(&mut self) -> PResult<Option<Ident>> {
        if self.eat_keyword("AS") {
            return self.parse_ident("alias").map(Some);
        }
        match &self.peek().kind {
            TokenKind::Word(w) if !is_reserved(w) => self.parse_ident("alias").map(Some),
            TokenKind::QuotedIdent(_) => self.parse_ident("alias").map(Some),
            _ => Ok(None),
        }
    }

    fn parse_query(&mut self) -> PResult<Query> {
        let start = self.peek().span.start;
        if self.at_keyword("WITH") {
            return Err(Violation::at(
                ViolationCode::CteForbidden,
                "common table expressions (WITH) are not permitted",
                self.peek().span,
            ));
        }
        let body = self.parse_select()?;
        let mut set_ops = Vec::new();
        loop {
            let op_start = self.peek().span.start;
            let op = if self.eat_keyword("UNION") {
                SetOperator::Union
            } else if self.eat_keyword("INTERSECT") {
                SetOperator::Intersect
            } else if self.eat_keyword("EXCEPT") {
                SetOperator::Except
            } else {
                break;
            };
            let all = self.eat_keyword("ALL");
            let select = self.parse_select()?;
            let span = Span::new(op_start, select.span.end);
            set_ops.push(SetOperation {
                op,
                all,
                select,
                span,
            });
        }
        let mut order_by = Vec::new();
        if self.eat_keyword("ORDER") {
            self.expect_keyword("BY")?;
            loop {
                let expr = self.parse_expr()?;
                let descending = if self.eat_keyword("DESC") {
                    Some(true)
                } else if self.eat_keyword("ASC") {
                    Some(false)
                } else {
                    None
                };
                if self.at_keyword("NULLS") {
                    return Err(self.unsupported("NULLS FIRST/LAST"));
                }
                order_by.push(OrderItem { expr, descending });
                if !self.eat_symbol(",") {
                    break;
                }
            }
        }
        let mut limit = None;
        let mut offset = None;
        if self.eat_keyword("LIMIT") {
            let first = self.parse_expr()?;
            if self.eat_keyword("OFFSET") {
                limit = Some(first);
                offset = Some(self.parse_expr()?);
            } else if self.eat_symbol(",") {
                // LIMIT <offset>, <count>
                offset = Some(first);
                limit = Some(self.parse_expr()?);
            } else {
                limit = Some(first);
            }
        }
        Ok(Query {
            body,
            set_ops,
            order_by,
            limit,
            offset,
            span: Span::new(start, self.last_end()),
        })
    }

    fn parse_select(&mut self) -> PResult<Select> {
        let start = self.expect_keyword("SELECT")?.span.start;
        let distinct = if self.eat_keyword("DISTINCT") {
            true
        } else {
            self.eat_keyword("ALL");
            false
        };
        let mut projection = Vec::new();
        loop {
            projection.push(self.parse_select_item()?);
            if !self.eat_symbol(",") {
                break;
            }
        }
        let from = if self.eat_keyword("FROM") {
            Some(self.parse_from()?)
        } else {
            None
        };
        let selection = if self.eat_keyword("WHERE") {
            Some(self.parse_expr()?)
        } else {
            None
        };
        let mut group_by = Vec::new();
        if self.eat_keyword("GROUP") {
            self.expect_keyword("BY")?;
            loop {
                group_by.push(self.parse_expr()?);
                if !self.eat_symbol(",") {
                    break;
                }
            }
        }
        let having = if self.eat_keyword("HAVING") {
            Some(self.parse_expr()?)
        } else {
            None
        };
        if self.at_keyword("WINDOW") {
            return Err(self.unsupported("WINDOW clause"));
        }
        Ok(Select {
            distinct,
            projection,
            from,
            selection,
            group_by,
            having,
            span: Span::new(start, self.last_end()),
        })
    }

    fn parse_select_item(&mut self) -> PResult<SelectItem> {
        if self.at_symbol("*") {
            let tok = self.advance();
            return Ok(SelectItem::Wildcard(tok.span));
        }
        let qualified_star = matches!(
            self.peek().kind,
            TokenKind::Word(_) | TokenKind::QuotedIdent(_)
        ) && matches!(self.peek_nth(1).kind, TokenKind::Symbol("."))
            && matches!(self.peek_nth(2).kind, TokenKind::Symbol("*"));
        if qualified_star {
            let qualifier = self.parse_ident("table name")?;
            self.advance();
            let star = self.advance();
            let span = qualifier.span.union(star.span);
            return Ok(SelectItem::QualifiedWildcard(qualifier, span));
        }
        let expr = self.parse_expr()?;
        let alias = self.parse_optional_alias()?;
        Ok(SelectItem::Expr { expr, alias })
    }

    fn parse_from(&mut self) -> PResult<FromClause> {
        let first = self.parse_table_ref()?;
        let mut joins = Vec::new();
        loop {
            let join_start = self.peek().span.start;
            let kind = if self.eat_symbol(",") {
                JoinKind::Comma
            } else if self.eat_keyword("NATURAL") {
                self.eat_keyword("LEFT");
                self.eat_keyword("OUTER");
                self.eat_keyword("INNER");
                self.expect_keyword("JOIN")?;
                JoinKind::Natural
            } else if self.eat_keyword("CROSS") {
                self.expect_keyword("JOIN")?;
                JoinKind::Cross
            } else if self.eat_keyword("INNER") {
                self.expect_keyword("JOIN")?;
                JoinKind::Inner
            } else if self.eat_keyword("LEFT") {
                self.eat_keyword("OUTER");
                self.expect_keyword("JOIN")?;
                JoinKind::Left
            } else if self.eat_keyword("RIGHT") {
                self.eat_keyword("OUTER");
                self.expect_keyword("JOIN")?;
                JoinKind::Right
            } else if self.eat_keyword("FULL") {
                self.eat_keyword("OUTER");
                self.expect_keyword("JOIN")?;
                JoinKind::Full
            } else if self.eat_keyword("JOIN") {
                JoinKind::Inner
            } else {
                break;
            };
            let table = self.parse_table_ref()?;
            let constraint = if self.eat_keyword("ON") {
                Some(JoinConstraint::On(self.parse_expr()?))
            } else if self.eat_keyword("USING") {
                self.expect_symbol("(")?;
                let mut cols = vec![self.parse_ident("column name")?];
                while self.eat_symbol(",") {
                    cols.push(self.parse_ident("column name")?);
                }
                self.expect_symbol(")")?;
                Some(JoinConstraint::Using(cols))
            } else {
                None
            };
            joins.push(Join {
                kind,
                table,
                constraint,
                span: Span::new(join_start, self.last_end()),
            });
        }
        Ok(FromClause { first, joins })
    }

    fn parse_table_ref(&mut self) -> PResult<TableRef> {
        let start = self.peek().span.start;
        if self.at_symbol("(") {
            self.advance();
            if !self.at_query_start() {
                return Err(self.error("subquery"));
            }
            let query = self.parse_query()?;
            self.expect_symbol(")")?;
            let alias = self.parse_optional_alias()?;
            return Ok(TableRef::Derived {
                query: Box::new(query),
                alias,
                span: Span::new(start, self.last_end()),
            });
        }
        let mut name = vec![self.parse_ident("table name")?];
        while self.eat_symbol(".") {
            name.push(self.parse_ident("table name")?);
        }
        if self.at_symbol("(") {
            return Err(self.unsupported("table-valued function"));
        }
        let alias = self.parse_optional_alias()?;
        Ok(TableRef::Named {
            name,
            alias,
            span: Span::new(start, self.last_end()),
        })
    }

    fn parse_expr(&mut self) -> PResult<Expr> {
        self.parse_or()
    }

    fn parse_or(&mut self) -> PResult<Expr> {
        let mut left = self.parse_and()?;
        while self.eat_keyword("OR") {
            let right = self.parse_and()?;
            left = spanned_binary(left, BinaryOp::Or, right);
        }
        Ok(left)
    }

    fn parse_and(&mut self) -> PResult<Expr> {
        let mut left = self.parse_not()?;
        while self.eat_keyword("AND") {
            let right = self.parse_not()?;
            left = spanned_binary(left, BinaryOp::And, right);
        }
        Ok(left)
    }

    fn parse_not(&mut self) -> PResult<Expr> {
        if self.at_keyword("NOT") {
            let start = self.advance().span.start;
            let inner = self.parse_not()?;
            let span = Span::new(start, inner.span.end);
            return Ok(Expr::new(
                ExprKind::Unary {
                    op: UnaryOp::Not,
                    expr: Box::new(inner),
                },
                span,
            ));
        }
        self.parse_predicate()
    }

    fn comparison_op(&self) -> Option<BinaryOp> {
        match self.peek().kind {
            TokenKind::Symbol("=") | TokenKind::Symbol("==") => Some(BinaryOp::Eq),
            TokenKind::Symbol("!=") | TokenKind::Symbol("<>") => Some(BinaryOp::NotEq),
            TokenKind::Symbol("<") => Some(BinaryOp::Lt),
            TokenKind::Symbol("<=") => Some(BinaryOp::LtEq),
            TokenKind::Symbol(">") => Some(BinaryOp::Gt),
            TokenKind::Symbol(">=") => Some(BinaryOp::GtEq),
            _ => None,
        }
    }

    fn parse_predicate(&mut self) -> PResult<Expr> {
        let mut left = self.parse_additive()?;
        loop {
            if let Some(op) = self.comparison_op() {
                self.advance();
                let right = self.parse_additive()?;
                left = spanned_binary(left, op, right);
                continue;
            }
            let start = left.span.start;
            if self.eat_keyword("ISNULL") || self.eat_keyword("NOTNULL") {
                let negated = self.tokens[self.pos - 1].is_keyword("NOTNULL");
                left = Expr::new(
                    ExprKind::IsNull {
                        expr: Box::new(left),
                        negated,
                    },
                    Span::new(start, self.last_end()),
                );
                continue;
            }
            if self.eat_keyword("IS") {
                let negated = self.eat_keyword("NOT");
                if self.eat_keyword("NULL") {
                    left = Expr::new(
                        ExprKind::IsNull {
                            expr: Box::new(left),
                            negated,
                        },
                        Span::new(start, self.last_end()),
                    );
                } else {
                    if self.at_keyword("DISTINCT") {
                        return Err(self.unsupported("IS DISTINCT FROM"));
                    }
                    let right = self.parse_additive()?;
                    let span = Span::new(start, right.span.end);
                    left = Expr::new(
                        ExprKind::Is {
                            left: Box::new(left),
                            right: Box::new(right),
                            negated,
                        },
                        span,
                    );
                }
                continue;
            }
            let negated = if self.at_keyword("NOT")
                && ["BETWEEN", "IN", "LIKE", "GLOB"]
                    .iter()
                    .any(|kw| self.peek_nth(1).is_keyword(kw))
            {
                self.advance();
                true
            } else {
                false
            };
            if self.eat_keyword("BETWEEN") {
                let low = self.parse_additive()?;
                self.expect_keyword("AND")?;
                let high = self.parse_additive()?;
                let span = Span::new(start, high.span.end);
                left = Expr::new(
                    ExprKind::Between {
                        expr: Box::new(left),
                        negated,
                        low: Box::new(low),
                        high: Box::new(high),
                    },
                    span,
                );
                continue;
            }
            if self.eat_keyword("IN") {
                self.expect_symbol("(")?;
                if self.at_query_start() {
                    let query = self.parse_query()?;
                    self.expect_symbol(")")?;
                    left = Expr::new(
                        ExprKind::InSubquery {
                            expr: Box::new(left),
                            negated,
                            query: Box::new(query),
                        },
                        Span::new(start, self.last_end()),
                    );
                } else {
                    let mut list = Vec::new();
                    if !self.at_symbol(")") {
                        loop {
                            list.push(self.parse_expr()?);
                            if !self.eat_symbol(",") {
                                break;
                            }
                        }
                    }
                    self.expect_symbol(")")?;
                    left = Expr::new(
                        ExprKind::InList {
                            expr: Box::new(left),
                            negated,
                            list,
                        },
                        Span::new(start, self.last_end()),
                    );
                }
                continue;
            }
            let like = if self.eat_keyword("LIKE") {
                Some(LikeOp::Like)
            } else if self.eat_keyword("GLOB") {
                Some(LikeOp::Glob)
            } else {
                None
            };
            if let Some(op) = like {
                let pattern = self.parse_additive()?;
                let escape = if self.eat_keyword("ESCAPE") {
                    Some(Box::new(self.parse_additive()?))
                } else {
                    None
                };
                left = Expr::new(
                    ExprKind::Like {
                        expr: Box::new(left),
                        negated,
                        op,
                        pattern: Box::new(pattern),
                        escape,
                    },
                    Span::new(start, self.last_end()),
                );
                continue;
            }
            if negated {
                return Err(self.error("BETWEEN, IN, LIKE or GLOB after NOT"));
            }
            break;
        }
        Ok(left)
    }

    fn parse_additive(&mut self) -> PResult<Expr> {
        let mut left = self.parse_multiplicative()?;
        loop {
            let op = match self.peek().kind {
                TokenKind::Symbol("+") => BinaryOp::Plus,
                TokenKind::Symbol("-") => BinaryOp::Minus,
                _ => break,
            };
            self.advance();
            let right = self.parse_multiplicative()?;
            left = spanned_binary(left, op, right);
        }
        Ok(left)
    }

    fn parse_multiplicative(&mut self) -> PResult<Expr> {
        let mut left = self.parse_concat()?;
        loop {
            let op = match self.peek().kind {
                TokenKind::Symbol("*") => BinaryOp::Multiply,
                TokenKind::Symbol("/") => BinaryOp::Divide,
                TokenKind::Symbol("%") => BinaryOp::Modulo,
                _ => break,
            };
            self.advance();
            let right = self.parse_concat()?;
            left = spanned_binary(left, op, right);
        }
        Ok(left)
    }

    fn parse_concat(&mut self) -> PResult<Expr> {
        let mut left = self.parse_unary()?;
        while self.eat_symbol("||") {
            let right = self.parse_unary()?;
            left = spanned_binary(left, BinaryOp::Concat, right);
        }
        Ok(left)
    }

    fn parse_unary(&mut self) -> PResult<Expr> {
        let op = match self.peek().kind {
            TokenKind::Symbol("-") => Some(UnaryOp::Minus),
            TokenKind::Symbol("+") => Some(UnaryOp::Plus),
            TokenKind::Symbol("~") => return Err(self.unsupported("bitwise NOT")),
            _ => None,
        };
        if let Some(op) = op {
            let start = self.advance().span.start;
            let inner = self.parse_unary()?;
            let span = Span::new(start, inner.span.end);
            return Ok(Expr::new(
                ExprKind::Unary {
                    op,
                    expr: Box::new(inner),
                },
                span,
            ));
        }
        let expr = self.parse_primary()?;
        if self.at_keyword("COLLATE") {
            return Err(self.unsupported("COLLATE"));
        }
        Ok(expr)
    }

    fn parse_primary(&mut self) -> PResult<Expr> {
        let tok = self.peek().clone();
        let start = tok.span.start;
        match &tok.kind {
            TokenKind::Number(n) => {
                self.advance();
                Ok(Expr::new(ExprKind::Literal(Literal::Number(n.clone())), tok.span))
            }
            TokenKind::String(s) => {
                self.advance();
                Ok(Expr::new(ExprKind::Literal(Literal::String(s.clone())), tok.span))
            }
            TokenKind::Symbol("(") => {
                self.advance();
                if self.at_query_start() {
                    let query = self.parse_query()?;
                    self.expect_symbol(")")?;
                    return Ok(Expr::new(
                        ExprKind::Subquery(Box::new(query)),
                        Span::new(start, self.last_end()),
                    ));
                }
                let inner = self.parse_expr()?;
                if self.at_symbol(",") {
                    return Err(self.unsupported("row value"));
                }
                self.expect_symbol(")")?;
                Ok(Expr::new(
                    ExprKind::Nested(Box::new(inner)),
                    Span::new(start, self.last_end()),
                ))
            }
            TokenKind::Word(w) if w.eq_ignore_ascii_case("NULL") => {
                self.advance();
                Ok(Expr::new(ExprKind::Literal(Literal::Null), tok.span))
            }
            TokenKind::Word(w) if w.eq_ignore_ascii_case("TRUE") => {
                self.advance();
                Ok(Expr::new(ExprKind::Literal(Literal::Bool(true)), tok.span))
            }
            TokenKind::Word(w) if w.eq_ignore_ascii_case("FALSE") => {
                self.advance();
                Ok(Expr::new(ExprKind::Literal(Literal::Bool(false)), tok.span))
            }
            TokenKind::Word(w) if w.eq_ignore_ascii_case("EXISTS") => {
                self.advance();
                self.expect_symbol("(")?;
                let query = self.parse_query()?;
                self.expect_symbol(")")?;
                Ok(Expr::new(
                    ExprKind::Exists {
                        negated: false,
                        query: Box::new(query),
                    },
                    Span::new(start, self.last_end()),
                ))
            }
            TokenKind::Word(w) if w.eq_ignore_ascii_case("CASE") => self.parse_case(),
            TokenKind::Word(w) if w.eq_ignore_ascii_case("CAST") => {
                self.advance();
                self.expect_symbol("(")?;
                let inner = self.parse_expr()?;
                self.expect_keyword("AS")?;
                let type_name = self.parse_type_name()?;
                self.expect_symbol(")")?;
                Ok(Expr::new(
                    ExprKind::Cast {
                        expr: Box::new(inner),
                        type_name,
                    },
                    Span::new(start, self.last_end()),
                ))
            }
            TokenKind::Word(w) if is_reserved(w) => Err(self.error("expression")),
            TokenKind::Word(_) | TokenKind::QuotedIdent(_) => {
                let first = self.parse_ident("expression")?;
                if self.at_symbol("(") && !first.quoted {
                    return self.parse_function(first);
                }
                if self.eat_symbol(".") {
                    let name = self.parse_ident("column name")?;
                    let span = first.span.union(name.span);
                    return Ok(Expr::new(
                        ExprKind::Column {
                            qualifier: Some(first),
                            name,
                        },
                        span,
                    ));
                }
                let span = first.span;
                Ok(Expr::new(
                    ExprKind::Column {
                        qualifier: None,
                        name: first,
                    },
                    span,
                ))
            }
            _ => Err(self.error("expression")),
        }
    }

    fn parse_type_name(&mut self) -> PResult<String> {
        let mut words = Vec::new();
        while let TokenKind::Word(w) = &self.peek().kind {
            if is_reserved(w) {
                break;
            }
            words.push(w.clone());
            self.advance();
        }
        if words.is_empty() {
            return Err(self.error("type name"));
        }
        let mut name = words.join(" ");
        if self.eat_symbol("(") {
            let mut parts = Vec::new();
            loop {
                match &self.peek().kind {
                    TokenKind::Number(n) => {
                        parts.push(n.clone());
                        self.advance();
                    }
                    _ => return Err(self.error("type size")),
                }
                if !self.eat_symbol(",") {
                    break;
                }
            }
            self.expect_symbol(")")?;
            name = format!("{name}({})", parts.join(", "));
        }
        Ok(name)
    }

    fn parse_case(&mut self) -> PResult<Expr> {
        let start = self.expect_keyword("CASE")?.span.start;
        let operand = if self.at_keyword("WHEN") {
            None
        } else {
            Some(Box::new(self.parse_expr()?))
        };
        let mut branches = Vec::new();
        while self.eat_keyword("WHEN") {
            let when = self.parse_expr()?;
            self.expect_keyword("THEN")?;
            let then = self.parse_expr()?;
            branches.push((when, then));
        }
        if branches.is_empty() {
            return Err(self.error("WHEN"));
        }
        let else_result = if self.eat_keyword("ELSE") {
            Some(Box::new(self.parse_expr()?))
        } else {
            None
        };
        self.expect_keyword("END")?;
        Ok(Expr::new(
            ExprKind::Case {
                operand,
                branches,
                else_result,
            },
            Span::new(start, self.last_end()),
        ))
    }

    fn parse_function(&mut self, name: Ident) -> PResult<Expr> {
        let start = name.span.start;
        self.expect_symbol("(")?;
        let mut distinct = false;
        let args = if self.at_symbol("*") {
            self.advance();
            FunctionArgs::Star
        } else {
            if self.eat_keyword("DISTINCT") {
                distinct = true;
            } else {
                self.eat_keyword("ALL");
            }
            let mut args = Vec::new();
            if !self.at_symbol(")") {
                loop {
                    args.push(self.parse_expr()?);
                    if !self.eat_symbol(",") {
                        break;
                    }
                }
            }
            if self.at_keyword("ORDER") {
                return Err(self.unsupported("ORDER BY inside an aggregate"));
            }
            FunctionArgs::List(args)
        };
        self.expect_symbol(")")?;
        if self.at_keyword("FILTER") {
            return Err(self.unsupported("aggregate FILTER clause"));
        }
        let over = if self.at_keyword("OVER") {
            let over_start = self.advance().span.end;
            if self.at_symbol("(") {
                let mut depth = 0usize;
                loop {
                    let tok = self.advance();
                    match tok.kind {
                        TokenKind::Symbol("(") => depth += 1,
                        TokenKind::Symbol(")") => {
                            depth -= 1;
                            if depth == 0 {
                                break;
                            }
                        }
                        TokenKind::Eof => return Err(self.error("')' closing OVER clause")),
                        _ => {}
                    }
                }
            } else {
                self.parse_ident("window name")?;
            }
            Some(self.text[over_start..self.last_end()].trim().to_string())
        } else {
            None
        };
        Ok(Expr::new(
            ExprKind::Function(FunctionCall {
                name,
                distinct,
                args,
                over,
            }),
            Span::new(start, self.last_end()),
        ))
    }
}

fn spanned_binary(left: Expr, op: BinaryOp, right: Expr) -> Expr {
    let span = left.span.union(right.span);
    Expr::new(
        ExprKind::Binary {
            left: Box::new(left),
            op,
            right: Box::new(right),
        },
        span,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codes(text: &str) -> Vec<ViolationCode> {
        parse_sql(text)
            .unwrap_err()
            .into_iter()
            .map(|v| v.code)
            .collect()
    }

    #[test]
    fn count_star_is_one_aggregate_item() {
        let q = parse_sql("SELECT COUNT(*) FROM patients").unwrap();
        assert_eq!(q.body.projection.len(), 1);
        match &q.body.projection[0] {
            SelectItem::Expr { expr, alias: None } => match &expr.kind {
                ExprKind::Function(call) => {
                    assert!(call.name.eq_ignore_case("count"));
                    assert_eq!(call.args, FunctionArgs::Star);
                }
                other => panic!("unexpected {other:?}"),
            },
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn drop_is_forbidden_statement() {
        assert_eq!(codes("DROP TABLE patients"), vec![ViolationCode::ForbiddenStatement]);
        assert_eq!(codes("pragma table_info(patients)"), vec![ViolationCode::ForbiddenStatement]);
        assert_eq!(codes("BEGIN"), vec![ViolationCode::ForbiddenStatement]);
        assert_eq!(codes("SELEC COUNT(*) FROM patients"), vec![ViolationCode::ParseError]);
    }

    #[test]
    fn two_selects_are_multi_statement() {
        assert_eq!(codes("SELECT 1; SELECT 2"), vec![ViolationCode::MultiStatement]);
        assert_eq!(
            codes("SELECT 1; DELETE FROM patients"),
            vec![ViolationCode::MultiStatement, ViolationCode::ForbiddenStatement]
        );
    }

    #[test]
    fn trailing_semicolon_is_fine() {
        assert!(parse_sql("SELECT COUNT(*) FROM patients;  ").is_ok());
    }

    #[test]
    fn cte_is_reported_with_its_own_code() {
        assert_eq!(
            codes("WITH x AS (SELECT 1) SELECT * FROM x"),
            vec![ViolationCode::CteForbidden]
        );
        assert_eq!(
            codes("SELECT COUNT(*) FROM (WITH x AS (SELECT 1) SELECT * FROM x)"),
            vec![ViolationCode::CteForbidden]
        );
    }

    #[test]
    fn syntax_errors_carry_position_and_expectation() {
        let err = parse_sql("SELECT AVG(x FROM t").unwrap_err();
        assert_eq!(err[0].code, ViolationCode::ParseError);
        assert!(err[0].message.contains("expected ')'"), "{}", err[0].message);
        assert!(err[0].message.contains("line 1, column 14"), "{}", err[0].message);
        assert_eq!(codes(""), vec![ViolationCode::ParseError]);
        assert_eq!(codes(" ; ;"), vec![ViolationCode::ParseError]);
    }

    #[test]
    fn precedence_and_rendering() {
        let q = parse_sql("select a + b * c, (a + b) * c from t where x = 1 or y = 2 and z = 3").unwrap();
        assert_eq!(
            q.to_string(),
            "SELECT a + b * c, (a + b) * c FROM t WHERE x = 1 OR y = 2 AND z = 3"
        );
    }

    #[test]
    fn predicates_round_trip() {
        let text = "SELECT COUNT(*) FROM patients WHERE age IN ('[70-80)', '[80-90)') \
                    AND num_medications BETWEEN 10 AND 20 AND weight IS NULL \
                    AND race NOT LIKE 'C%' AND insulin <> 'No' \
                    AND number_inpatient NOT IN (SELECT 1)";
        let q = parse_sql(text).unwrap();
        let rendered = q.to_string();
        let again = parse_sql(&rendered).unwrap();
        assert_eq!(again.to_string(), rendered);
        assert!(rendered.contains("num_medications BETWEEN 10 AND 20"));
        assert!(rendered.contains("race NOT LIKE 'C%'"));
    }

    #[test]
    fn quoted_identifiers_render_quoted() {
        let q = parse_sql(r#"SELECT "glyburide-metformin", COUNT(*) FROM patients GROUP BY 1"#)
            .unwrap();
        assert_eq!(
            q.to_string(),
            r#"SELECT "glyburide-metformin", COUNT(*) FROM patients GROUP BY 1"#
        );
    }

    #[test]
    fn window_functions_parse_with_raw_over_clause() {
        let q = parse_sql("SELECT AVG(x) OVER (PARTITION BY age) FROM t").unwrap();
        match &q.body.projection[0] {
            SelectItem::Expr { expr, .. } => match &expr.kind {
                ExprKind::Function(call) => {
                    assert_eq!(call.over.as_deref(), Some("(PARTITION BY age)"))
                }
                other => panic!("{other:?}"),
            },
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn limit_comma_form_is_offset_then_count() {
        let q = parse_sql("SELECT COUNT(*) FROM t LIMIT 5, 10").unwrap();
        assert_eq!(q.to_string(), "SELECT COUNT(*) FROM t LIMIT 10 OFFSET 5");
    }

    #[test]
    fn canonical_ignores_case_and_redundant_parens() {
        let a = parse_sql("SELECT Avg(( Num_Medications )) FROM t").unwrap();
        let b = parse_sql("SELECT AVG(num_medications) FROM t").unwrap();
        let key = |q: &Query| match &q.body.projection[0] {
            SelectItem::Expr { expr, .. } => expr.canonical(),
            _ => unreachable!(),
        };
        assert_eq!(key(&a), key(&b));
    }
}
