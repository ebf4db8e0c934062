//! Syntax tree for the conservative SELECT subset accepted by the gateway.
//!
//! The tree is deliberately closed: anything the parser cannot place in one
//! of these nodes is a parse error, so the validator never has to reason
//! about constructs it does not know.

use std::fmt;

use serde::Serialize;

/// Byte range into the original query text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn union(self, other: Span) -> Span {
        Span::new(self.start.min(other.start), self.end.max(other.end))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ident {
    pub value: String,
    pub quoted: bool,
    pub span: Span,
}

impl Ident {
    pub fn new(value: impl Into<String>) -> Self {
        Self {
            value: value.into(),
            quoted: false,
            span: Span::default(),
        }
    }

    pub fn normalized(&self) -> String {
        self.value.to_ascii_lowercase()
    }

    pub fn eq_ignore_case(&self, other: &str) -> bool {
        self.value.eq_ignore_ascii_case(other)
    }
}

/// The top-level statement handed to the validator.
pub type QueryAst = Query;

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub body: Select,
    pub set_ops: Vec<SetOperation>,
    pub order_by: Vec<OrderItem>,
    pub limit: Option<Expr>,
    pub offset: Option<Expr>,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetOperator {
    Union,
    Intersect,
    Except,
}

impl SetOperator {
    fn keyword(self) -> &'static str {
        match self {
            SetOperator::Union => "UNION",
            SetOperator::Intersect => "INTERSECT",
            SetOperator::Except => "EXCEPT",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetOperation {
    pub op: SetOperator,
    pub all: bool,
    pub select: Select,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Select {
    pub distinct: bool,
    pub projection: Vec<SelectItem>,
    pub from: Option<FromClause>,
    pub selection: Option<Expr>,
    pub group_by: Vec<Expr>,
    pub having: Option<Expr>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectItem {
    Wildcard(Span),
    QualifiedWildcard(Ident, Span),
    Expr { expr: Expr, alias: Option<Ident> },
}

impl SelectItem {
    pub fn span(&self) -> Span {
        match self {
            SelectItem::Wildcard(span) | SelectItem::QualifiedWildcard(_, span) => *span,
            SelectItem::Expr { expr, alias } => match alias {
                Some(alias) => expr.span.union(alias.span),
                None => expr.span,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FromClause {
    pub first: TableRef,
    pub joins: Vec<Join>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinKind {
    Comma,
    Inner,
    Left,
    Right,
    Full,
    Cross,
    Natural,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Join {
    pub kind: JoinKind,
    pub table: TableRef,
    pub constraint: Option<JoinConstraint>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum JoinConstraint {
    On(Expr),
    Using(Vec<Ident>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TableRef {
    Named {
        name: Vec<Ident>,
        alias: Option<Ident>,
        span: Span,
    },
    Derived {
        query: Box<Query>,
        alias: Option<Ident>,
        span: Span,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderItem {
    pub expr: Expr,
    pub descending: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Number(String),
    String(String),
    Null,
    Bool(bool),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Not,
    Minus,
    Plus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Or,
    And,
    Eq,
    NotEq,
    Lt,
    LtEq,
    Gt,
    GtEq,
    Plus,
    Minus,
    Multiply,
    Divide,
    Modulo,
    Concat,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Or => "OR",
            BinaryOp::And => "AND",
            BinaryOp::Eq => "=",
            BinaryOp::NotEq => "<>",
            BinaryOp::Lt => "<",
            BinaryOp::LtEq => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::GtEq => ">=",
            BinaryOp::Plus => "+",
            BinaryOp::Minus => "-",
            BinaryOp::Multiply => "*",
            BinaryOp::Divide => "/",
            BinaryOp::Modulo => "%",
            BinaryOp::Concat => "||",
        }
    }

    pub fn precedence(self) -> u8 {
        match self {
            BinaryOp::Or => 1,
            BinaryOp::And => 2,
            BinaryOp::Eq
            | BinaryOp::NotEq
            | BinaryOp::Lt
            | BinaryOp::LtEq
            | BinaryOp::Gt
            | BinaryOp::GtEq => 4,
            BinaryOp::Plus | BinaryOp::Minus => 6,
            BinaryOp::Multiply | BinaryOp::Divide | BinaryOp::Modulo => 7,
            BinaryOp::Concat => 8,
        }
    }

    fn associative(self) -> bool {
        matches!(
            self,
            BinaryOp::Or | BinaryOp::And | BinaryOp::Plus | BinaryOp::Multiply | BinaryOp::Concat
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LikeOp {
    Like,
    Glob,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FunctionArgs {
    Star,
    List(Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionCall {
    pub name: Ident,
    pub distinct: bool,
    pub args: FunctionArgs,
    /// Raw text of an `OVER (...)` / `OVER name` clause.
    pub over: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Column {
        qualifier: Option<Ident>,
        name: Ident,
    },
    Literal(Literal),
    Unary {
        op: UnaryOp,
        expr: Box<Expr>,
    },
    Binary {
        left: Box<Expr>,
        op: BinaryOp,
        right: Box<Expr>,
    },
    Function(FunctionCall),
    Case {
        operand: Option<Box<Expr>>,
        branches: Vec<(Expr, Expr)>,
        else_result: Option<Box<Expr>>,
    },
    Cast {
        expr: Box<Expr>,
        type_name: String,
    },
    IsNull {
        expr: Box<Expr>,
        negated: bool,
    },
    Is {
        left: Box<Expr>,
        right: Box<Expr>,
        negated: bool,
    },
    Between {
        expr: Box<Expr>,
        negated: bool,
        low: Box<Expr>,
        high: Box<Expr>,
    },
    InList {
        expr: Box<Expr>,
        negated: bool,
        list: Vec<Expr>,
    },
    InSubquery {
        expr: Box<Expr>,
        negated: bool,
        query: Box<Query>,
    },
    Like {
        expr: Box<Expr>,
        negated: bool,
        op: LikeOp,
        pattern: Box<Expr>,
        escape: Option<Box<Expr>>,
    },
    Subquery(Box<Query>),
    Exists {
        negated: bool,
        query: Box<Query>,
    },
    Nested(Box<Expr>),
}

const PREC_NOT: u8 = 3;
const PREC_PREDICATE: u8 = 4;
const PREC_OPERAND: u8 = 5;
const PREC_UNARY: u8 = 9;
const PREC_PRIMARY: u8 = 10;

impl Expr {
    pub fn new(kind: ExprKind, span: Span) -> Self {
        Self { kind, span }
    }

    /// `COUNT(*)`, built without a source location.
    pub fn count_star() -> Self {
        Expr::new(
            ExprKind::Function(FunctionCall {
                name: Ident::new("COUNT"),
                distinct: false,
                args: FunctionArgs::Star,
                over: None,
            }),
            Span::default(),
        )
    }

    pub fn binary(left: Expr, op: BinaryOp, right: Expr) -> Self {
        Expr::new(
            ExprKind::Binary {
                left: Box::new(left),
                op,
                right: Box::new(right),
            },
            Span::default(),
        )
    }

    pub fn integer(value: u64) -> Self {
        Expr::new(
            ExprKind::Literal(Literal::Number(value.to_string())),
            Span::default(),
        )
    }

    fn precedence(&self) -> u8 {
        match &self.kind {
            ExprKind::Binary { op, .. } => op.precedence(),
            ExprKind::Unary { op: UnaryOp::Not, .. } => PREC_NOT,
            ExprKind::Unary { .. } => PREC_UNARY,
            ExprKind::IsNull { .. }
            | ExprKind::Is { .. }
            | ExprKind::Between { .. }
            | ExprKind::InList { .. }
            | ExprKind::InSubquery { .. }
            | ExprKind::Like { .. } => PREC_PREDICATE,
            _ => PREC_PRIMARY,
        }
    }

    /// Case-insensitive structural key, independent of source spacing and
    /// redundant parentheses. Two expressions with equal keys compute the
    /// same value.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        Renderer { canonical: true }.expr(&mut out, self, 0);
        out
    }
}

#[derive(Clone, Copy)]
struct Renderer {
    canonical: bool,
}

fn needs_quotes(value: &str) -> bool {
    let mut chars = value.chars();
    let first_ok = chars
        .next()
        .map(|c| c.is_ascii_alphabetic() || c == '_')
        .unwrap_or(false);
    !first_ok
        || !value.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        || super::lexer::is_reserved(value)
}

impl Renderer {
    fn ident(&self, out: &mut String, ident: &Ident) {
        if self.canonical {
            out.push_str(&ident.normalized());
        } else if ident.quoted || needs_quotes(&ident.value) {
            out.push('"');
            out.push_str(&ident.value.replace('"', "\"\""));
            out.push('"');
        } else {
            out.push_str(&ident.value);
        }
    }

    fn child(&self, out: &mut String, expr: &Expr, min_prec: u8) {
        if self.canonical {
            if let ExprKind::Nested(inner) = &expr.kind {
                return self.child(out, inner, min_prec);
            }
        }
        if expr.precedence() < min_prec {
            out.push('(');
            self.expr(out, expr, 0);
            out.push(')');
        } else {
            self.expr(out, expr, min_prec);
        }
    }

    fn expr(&self, out: &mut String, expr: &Expr, _ctx: u8) {
        match &expr.kind {
            ExprKind::Column { qualifier, name } => {
                if let Some(q) = qualifier {
                    self.ident(out, q);
                    out.push('.');
                }
                self.ident(out, name);
            }
            ExprKind::Literal(lit) => match lit {
                Literal::Number(n) => out.push_str(n),
                Literal::String(s) => {
                    out.push('\'');
                    out.push_str(&s.replace('\'', "''"));
                    out.push('\'');
                }
                Literal::Null => out.push_str("NULL"),
                Literal::Bool(true) => out.push_str("TRUE"),
                Literal::Bool(false) => out.push_str("FALSE"),
            },
            ExprKind::Unary { op, expr: inner } => match op {
                UnaryOp::Not => {
                    out.push_str("NOT ");
                    self.child(out, inner, PREC_NOT);
                }
                UnaryOp::Minus | UnaryOp::Plus => {
                    out.push(if *op == UnaryOp::Minus { '-' } else { '+' });
                    self.child(out, inner, PREC_UNARY);
                }
            },
            ExprKind::Binary { left, op, right } => {
                let prec = op.precedence();
                self.child(out, left, prec);
                out.push(' ');
                out.push_str(op.symbol());
                out.push(' ');
                let right_prec = if op.associative() { prec } else { prec + 1 };
                self.child(out, right, right_prec);
            }
            ExprKind::Function(call) => self.function(out, call),
            ExprKind::Case {
                operand,
                branches,
                else_result,
            } => {
                out.push_str("CASE");
                if let Some(operand) = operand {
                    out.push(' ');
                    self.expr(out, operand, 0);
                }
                for (when, then) in branches {
                    out.push_str(" WHEN ");
                    self.expr(out, when, 0);
                    out.push_str(" THEN ");
                    self.expr(out, then, 0);
                }
                if let Some(e) = else_result {
                    out.push_str(" ELSE ");
                    self.expr(out, e, 0);
                }
                out.push_str(" END");
            }
            ExprKind::Cast { expr: inner, type_name } => {
                out.push_str("CAST(");
                self.expr(out, inner, 0);
                out.push_str(" AS ");
                if self.canonical {
                    out.push_str(&type_name.to_ascii_uppercase());
                } else {
                    out.push_str(type_name);
                }
                out.push(')');
            }
            ExprKind::IsNull { expr: inner, negated } => {
                self.child(out, inner, PREC_OPERAND);
                out.push_str(if *negated { " IS NOT NULL" } else { " IS NULL" });
            }
            ExprKind::Is {
                left,
                right,
                negated,
            } => {
                self.child(out, left, PREC_OPERAND);
                out.push_str(if *negated { " IS NOT " } else { " IS " });
                self.child(out, right, PREC_OPERAND);
            }
            ExprKind::Between {
                expr: inner,
                negated,
                low,
                high,
            } => {
                self.child(out, inner, PREC_OPERAND);
                out.push_str(if *negated { " NOT BETWEEN " } else { " BETWEEN " });
                self.child(out, low, PREC_OPERAND);
                out.push_str(" AND ");
                self.child(out, high, PREC_OPERAND);
            }
            ExprKind::InList {
                expr: inner,
                negated,
                list,
            } => {
                self.child(out, inner, PREC_OPERAND);
                out.push_str(if *negated { " NOT IN (" } else { " IN (" });
                for (i, item) in list.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    self.expr(out, item, 0);
                }
                out.push(')');
            }
            ExprKind::InSubquery {
                expr: inner,
                negated,
                query,
            } => {
                self.child(out, inner, PREC_OPERAND);
                out.push_str(if *negated { " NOT IN (" } else { " IN (" });
                self.query(out, query);
                out.push(')');
            }
            ExprKind::Like {
                expr: inner,
                negated,
                op,
                pattern,
                escape,
            } => {
                self.child(out, inner, PREC_OPERAND);
                out.push_str(if *negated { " NOT " } else { " " });
                out.push_str(match op {
                    LikeOp::Like => "LIKE ",
                    LikeOp::Glob => "GLOB ",
                });
                self.child(out, pattern, PREC_OPERAND);
                if let Some(escape) = escape {
                    out.push_str(" ESCAPE ");
                    self.child(out, escape, PREC_OPERAND);
                }
            }
            ExprKind::Subquery(query) => {
                out.push('(');
                self.query(out, query);
                out.push(')');
            }
            ExprKind::Exists { negated, query } => {
                if *negated {
                    out.push_str("NOT ");
                }
                out.push_str("EXISTS (");
                self.query(out, query);
                out.push(')');
            }
            ExprKind::Nested(inner) => {
                if self.canonical {
                    self.expr(out, inner, 0);
                } else {
                    out.push('(');
                    self.expr(out, inner, 0);
                    out.push(')');
                }
            }
        }
    }

    fn function(&self, out: &mut String, call: &FunctionCall) {
        if self.canonical {
            out.push_str(&call.name.value.to_ascii_uppercase());
        } else {
            self.ident(out, &call.name);
        }
        out.push('(');
        if call.distinct {
            out.push_str("DISTINCT ");
        }
        match &call.args {
            FunctionArgs::Star => out.push('*'),
            FunctionArgs::List(args) => {
                for (i, arg) in args.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    self.expr(out, arg, 0);
                }
            }
        }
        out.push(')');
        if let Some(over) = &call.over {
            out.push_str(" OVER ");
            out.push_str(over);
        }
    }

    fn select(&self, out: &mut String, select: &Select) {
        out.push_str("SELECT ");
        if select.distinct {
            out.push_str("DISTINCT ");
        }
        for (i, item) in select.projection.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            match item {
                SelectItem::Wildcard(_) => out.push('*'),
                SelectItem::QualifiedWildcard(q, _) => {
                    self.ident(out, q);
                    out.push_str(".*");
                }
                SelectItem::Expr { expr, alias } => {
                    self.expr(out, expr, 0);
                    if let Some(alias) = alias {
                        out.push_str(" AS ");
                        self.ident(out, alias);
                    }
                }
            }
        }
        if let Some(from) = &select.from {
            out.push_str(" FROM ");
            self.table_ref(out, &from.first);
            for join in &from.joins {
                out.push_str(match join.kind {
                    JoinKind::Comma => ", ",
                    JoinKind::Inner => " JOIN ",
                    JoinKind::Left => " LEFT JOIN ",
                    JoinKind::Right => " RIGHT JOIN ",
                    JoinKind::Full => " FULL JOIN ",
                    JoinKind::Cross => " CROSS JOIN ",
                    JoinKind::Natural => " NATURAL JOIN ",
                });
                self.table_ref(out, &join.table);
                match &join.constraint {
                    Some(JoinConstraint::On(e)) => {
                        out.push_str(" ON ");
                        self.expr(out, e, 0);
                    }
                    Some(JoinConstraint::Using(cols)) => {
                        out.push_str(" USING (");
                        for (i, c) in cols.iter().enumerate() {
                            if i > 0 {
                                out.push_str(", ");
                            }
                            self.ident(out, c);
                        }
                        out.push(')');
                    }
                    None => {}
                }
            }
        }
        if let Some(selection) = &select.selection {
            out.push_str(" WHERE ");
            self.expr(out, selection, 0);
        }
        if !select.group_by.is_empty() {
            out.push_str(" GROUP BY ");
            for (i, key) in select.group_by.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                self.expr(out, key, 0);
            }
        }
        if let Some(having) = &select.having {
            out.push_str(" HAVING ");
            self.expr(out, having, 0);
        }
    }

    fn table_ref(&self, out: &mut String, table: &TableRef) {
        match table {
            TableRef::Named { name, alias, .. } => {
                for (i, part) in name.iter().enumerate() {
                    if i > 0 {
                        out.push('.');
                    }
                    self.ident(out, part);
                }
                if let Some(alias) = alias {
                    out.push_str(" AS ");
                    self.ident(out, alias);
                }
            }
            TableRef::Derived { query, alias, .. } => {
                out.push('(');
                self.query(out, query);
                out.push(')');
                if let Some(alias) = alias {
                    out.push_str(" AS ");
                    self.ident(out, alias);
                }
            }
        }
    }

    fn query(&self, out: &mut String, query: &Query) {
        self.select(out, &query.body);
        for op in &query.set_ops {
            out.push(' ');
            out.push_str(op.op.keyword());
            if op.all {
                out.push_str(" ALL");
            }
            out.push(' ');
            self.select(out, &op.select);
        }
        if !query.order_by.is_empty() {
            out.push_str(" ORDER BY ");
            for (i, item) in query.order_by.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                self.expr(out, &item.expr, 0);
                match item.descending {
                    Some(true) => out.push_str(" DESC"),
                    Some(false) => out.push_str(" ASC"),
                    None => {}
                }
            }
        }
        if let Some(limit) = &query.limit {
            out.push_str(" LIMIT ");
            self.expr(out, limit, 0);
        }
        if let Some(offset) = &query.offset {
            out.push_str(" OFFSET ");
            self.expr(out, offset, 0);
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        Renderer { canonical: false }.expr(&mut out, self, 0);
        f.write_str(&out)
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        Renderer { canonical: false }.query(&mut out, self);
        f.write_str(&out)
    }
}

impl fmt::Display for Select {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        Renderer { canonical: false }.select(&mut out, self);
        f.write_str(&out)
    }
}

/// Visits every subquery directly nested in `query` (derived tables and
/// expression subqueries) without descending into them.
pub fn for_each_child_query<'a>(query: &'a Query, f: &mut dyn FnMut(&'a Query)) {
    let mut selects: Vec<&Select> = vec![&query.body];
    selects.extend(query.set_ops.iter().map(|op| &op.select));
    for select in selects {
        for item in &select.projection {
            if let SelectItem::Expr { expr, .. } = item {
                expr_child_queries(expr, f);
            }
        }
        if let Some(from) = &select.from {
            table_child_queries(&from.first, f);
            for join in &from.joins {
                table_child_queries(&join.table, f);
                if let Some(JoinConstraint::On(e)) = &join.constraint {
                    expr_child_queries(e, f);
                }
            }
        }
        for e in select
            .selection
            .iter()
            .chain(select.group_by.iter())
            .chain(select.having.iter())
        {
            expr_child_queries(e, f);
        }
    }
    for item in &query.order_by {
        expr_child_queries(&item.expr, f);
    }
    for e in query.limit.iter().chain(query.offset.iter()) {
        expr_child_queries(e, f);
    }
}

fn table_child_queries<'a>(table: &'a TableRef, f: &mut dyn FnMut(&'a Query)) {
    if let TableRef::Derived { query, .. } = table {
        f(query);
    }
}

fn expr_child_queries<'a>(expr: &'a Expr, f: &mut dyn FnMut(&'a Query)) {
    match &expr.kind {
        ExprKind::Subquery(q) | ExprKind::Exists { query: q, .. } => f(q),
        ExprKind::InSubquery { expr, query, .. } => {
            expr_child_queries(expr, f);
            f(query);
        }
        _ => expr.for_each_child(&mut |child| expr_child_queries(child, f)),
    }
}

/// Mutable counterpart of [`for_each_child_query`].
pub fn for_each_child_query_mut(query: &mut Query, f: &mut dyn FnMut(&mut Query)) {
    let Query {
        body,
        set_ops,
        order_by,
        limit,
        offset,
        ..
    } = query;
    let mut selects: Vec<&mut Select> = vec![body];
    selects.extend(set_ops.iter_mut().map(|op| &mut op.select));
    for select in selects {
        for item in &mut select.projection {
            if let SelectItem::Expr { expr, .. } = item {
                expr_child_queries_mut(expr, f);
            }
        }
        if let Some(from) = &mut select.from {
            table_child_queries_mut(&mut from.first, f);
            for join in &mut from.joins {
                table_child_queries_mut(&mut join.table, f);
                if let Some(JoinConstraint::On(e)) = &mut join.constraint {
                    expr_child_queries_mut(e, f);
                }
            }
        }
        for e in select
            .selection
            .iter_mut()
            .chain(select.group_by.iter_mut())
            .chain(select.having.iter_mut())
        {
            expr_child_queries_mut(e, f);
        }
    }
    for item in order_by {
        expr_child_queries_mut(&mut item.expr, f);
    }
    for e in limit.iter_mut().chain(offset.iter_mut()) {
        expr_child_queries_mut(e, f);
    }
}

fn table_child_queries_mut(table: &mut TableRef, f: &mut dyn FnMut(&mut Query)) {
    if let TableRef::Derived { query, .. } = table {
        f(query);
    }
}

fn expr_child_queries_mut(expr: &mut Expr, f: &mut dyn FnMut(&mut Query)) {
    match &mut expr.kind {
        ExprKind::Subquery(q) | ExprKind::Exists { query: q, .. } => f(q),
        ExprKind::InSubquery { expr, query, .. } => {
            expr_child_queries_mut(expr, f);
            f(query);
        }
        _ => expr.for_each_child_mut(&mut |child| expr_child_queries_mut(child, f)),
    }
}

impl Expr {
    /// Direct child expressions, excluding anything inside subqueries.
    pub fn for_each_child<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        match &self.kind {
            ExprKind::Column { .. } | ExprKind::Literal(_) => {}
            ExprKind::Subquery(_) | ExprKind::Exists { .. } => {}
            ExprKind::Unary { expr, .. }
            | ExprKind::Cast { expr, .. }
            | ExprKind::IsNull { expr, .. }
            | ExprKind::Nested(expr)
            | ExprKind::InSubquery { expr, .. } => f(expr),
            ExprKind::Binary { left, right, .. } | ExprKind::Is { left, right, .. } => {
                f(left);
                f(right);
            }
            ExprKind::Function(call) => {
                if let FunctionArgs::List(args) = &call.args {
                    for a in args { f(a) }
                }
            }
            ExprKind::Case {
                operand,
                branches,
                else_result,
            } => {
                if let Some(o) = operand {
                    f(o);
                }
                for (w, t) in branches {
                    f(w);
                    f(t);
                }
                if let Some(e) = else_result {
                    f(e);
                }
            }
            ExprKind::Between {
                expr, low, high, ..
            } => {
                f(expr);
                f(low);
                f(high);
            }
            ExprKind::InList { expr, list, .. } => {
                f(expr);
                for e in list { f(e) }
            }
            ExprKind::Like {
                expr,
                pattern,
                escape,
                ..
            } => {
                f(expr);
                f(pattern);
                if let Some(e) = escape {
                    f(e);
                }
            }
        }
    }

    fn for_each_child_mut(&mut self, f: &mut dyn FnMut(&mut Expr)) {
        match &mut self.kind {
            ExprKind::Column { .. } | ExprKind::Literal(_) => {}
            ExprKind::Subquery(_) | ExprKind::Exists { .. } => {}
            ExprKind::Unary { expr, .. }
            | ExprKind::Cast { expr, .. }
            | ExprKind::IsNull { expr, .. }
            | ExprKind::Nested(expr)
            | ExprKind::InSubquery { expr, .. } => f(expr),
            ExprKind::Binary { left, right, .. } | ExprKind::Is { left, right, .. } => {
                f(left);
                f(right);
            }
            ExprKind::Function(call) => {
                if let FunctionArgs::List(args) = &mut call.args {
                    for a in args.iter_mut() { f(a) }
                }
            }
            ExprKind::Case {
                operand,
                branches,
                else_result,
            } => {
                if let Some(o) = operand {
                    f(o);
                }
                for (w, t) in branches {
                    f(w);
                    f(t);
                }
                if let Some(e) = else_result {
                    f(e);
                }
            }
            ExprKind::Between {
                expr, low, high, ..
            } => {
                f(expr);
                f(low);
                f(high);
            }
            ExprKind::InList { expr, list, .. } => {
                f(expr);
                for e in list.iter_mut() { f(e) }
            }
            ExprKind::Like {
                expr,
                pattern,
                escape,
                ..
            } => {
                f(expr);
                f(pattern);
                if let Some(e) = escape {
                    f(e);
                }
            }
        }
    }
}
