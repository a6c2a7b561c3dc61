//! Recursive-descent parser over the token stream.
//!
//! Precedence, low to high: comparison (non-associative, single), additive,
//! multiplicative, unary minus (numeric literals only), postfix call and
//! attribute trailers. Assignment targets are bare names. Inline suites
//! after `:` hold only simple statements; block suites are INDENT-delimited.

use super::ast::*;
use super::lexer::{lex, TokKind, Token};
use super::SyntaxError;

pub fn parse_cell(source: &str) -> Result<CellAst, SyntaxError> {
    let tokens = lex(source)?;
    let mut parser = Parser { tokens, pos: 0 };
    parser.cell()
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

fn tok_span(t: &Token) -> Span {
    Span::new(t.line, t.col, t.line, t.end_col)
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos.min(self.tokens.len() - 1)]
    }

    fn peek_kind(&self) -> &TokKind {
        &self.peek().kind
    }

    fn next_kind(&self) -> &TokKind {
        &self.tokens[(self.pos + 1).min(self.tokens.len() - 1)].kind
    }

    fn bump(&mut self) -> Token {
        let t = self.peek().clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn check(&self, kind: &TokKind) -> bool {
        self.peek_kind() == kind
    }

    fn eat(&mut self, kind: &TokKind) -> bool {
        if self.check(kind) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn error_here(&self, expected: &[&str]) -> SyntaxError {
        let t = self.peek();
        SyntaxError {
            line: t.line,
            col: t.col,
            found: t.kind.describe(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn expect(&mut self, kind: TokKind, expected: &str) -> Result<Token, SyntaxError> {
        if self.check(&kind) {
            Ok(self.bump())
        } else {
            Err(self.error_here(&[expected]))
        }
    }

    fn expect_name(&mut self, what: &str) -> Result<(String, Span), SyntaxError> {
        match self.peek_kind().clone() {
            TokKind::Name(id) => {
                let t = self.bump();
                Ok((id, tok_span(&t)))
            }
            _ => Err(self.error_here(&[what])),
        }
    }

    fn cell(&mut self) -> Result<CellAst, SyntaxError> {
        let mut statements = Vec::new();
        while !self.check(&TokKind::Eof) {
            self.statement_into(&mut statements)?;
        }
        Ok(CellAst { statements })
    }

    /// One source line of statements: a compound statement, or a
    /// `;`-separated run of small statements.
    fn statement_into(&mut self, out: &mut Vec<Stmt>) -> Result<(), SyntaxError> {
        match self.peek_kind() {
            TokKind::Def => {
                out.push(self.function_def()?);
                Ok(())
            }
            TokKind::If => {
                out.push(self.if_stmt()?);
                Ok(())
            }
            TokKind::For => {
                out.push(self.for_stmt()?);
                Ok(())
            }
            _ => self.simple_line(out),
        }
    }

    fn simple_line(&mut self, out: &mut Vec<Stmt>) -> Result<(), SyntaxError> {
        out.push(self.small_stmt()?);
        while self.eat(&TokKind::Semi) {
            if self.check(&TokKind::Newline) {
                break;
            }
            out.push(self.small_stmt()?);
        }
        self.expect(TokKind::Newline, "end of line")?;
        Ok(())
    }

    fn small_stmt(&mut self) -> Result<Stmt, SyntaxError> {
        match self.peek_kind() {
            TokKind::Return => {
                let kw = self.bump();
                let mut span = tok_span(&kw);
                let value = if self.check(&TokKind::Newline) || self.check(&TokKind::Semi) {
                    None
                } else {
                    let expr = self.expression()?;
                    span = span.merge(expr.span());
                    Some(expr)
                };
                Ok(Stmt::Return { value, span })
            }
            TokKind::Import => {
                let kw = self.bump();
                let (module, name_span) = self.expect_name("a module name")?;
                Ok(Stmt::Import {
                    module,
                    span: tok_span(&kw).merge(name_span),
                })
            }
            TokKind::Name(_) if *self.next_kind() == TokKind::Assign => {
                let (id, name_span) = self.expect_name("a name")?;
                self.bump(); // '='
                let value = self.expression()?;
                let span = name_span.merge(value.span());
                Ok(Stmt::Assign {
                    target: Name {
                        id,
                        ctx: NameCtx::Store,
                        span: name_span,
                    },
                    value,
                    span,
                })
            }
            _ => {
                let value = self.expression()?;
                let span = value.span();
                Ok(Stmt::ExprStatement { value, span })
            }
        }
    }

    fn function_def(&mut self) -> Result<Stmt, SyntaxError> {
        let kw = self.bump();
        let (name, _) = self.expect_name("a function name")?;
        self.expect(TokKind::LParen, "'('")?;
        let mut params = Vec::new();
        if !self.check(&TokKind::RParen) {
            loop {
                let (pname, pspan) = self.expect_name("a parameter name")?;
                let default = if self.eat(&TokKind::Assign) {
                    Some(self.expression()?)
                } else {
                    None
                };
                let span = default
                    .as_ref()
                    .map(|d| pspan.merge(d.span()))
                    .unwrap_or(pspan);
                params.push(Param {
                    name: pname,
                    default,
                    span,
                });
                if !self.eat(&TokKind::Comma) {
                    break;
                }
            }
        }
        self.expect(TokKind::RParen, "')'")?;
        self.expect(TokKind::Colon, "':'")?;
        let (body, end) = self.suite()?;
        Ok(Stmt::FunctionDef(FunctionDef {
            name,
            params,
            body,
            span: tok_span(&kw).merge(end),
        }))
    }

    fn if_stmt(&mut self) -> Result<Stmt, SyntaxError> {
        let kw = self.bump();
        let test = self.expression()?;
        self.expect(TokKind::Colon, "':'")?;
        let (body, mut end) = self.suite()?;
        let mut orelse = Vec::new();
        if self.eat(&TokKind::Else) {
            self.expect(TokKind::Colon, "':'")?;
            let (stmts, else_end) = self.suite()?;
            orelse = stmts;
            end = else_end;
        }
        Ok(Stmt::If {
            test,
            body,
            orelse,
            span: tok_span(&kw).merge(end),
        })
    }

    fn for_stmt(&mut self) -> Result<Stmt, SyntaxError> {
        let kw = self.bump();
        let (id, name_span) = self.expect_name("a loop variable name")?;
        self.expect(TokKind::In, "'in'")?;
        let iter = self.expression()?;
        self.expect(TokKind::Colon, "':'")?;
        let (body, end) = self.suite()?;
        Ok(Stmt::For {
            target: Name {
                id,
                ctx: NameCtx::Store,
                span: name_span,
            },
            iter,
            body,
            span: tok_span(&kw).merge(end),
        })
    }

    /// Suite after a `:`. Returns the statements and the span end of the
    /// last one (for the enclosing statement's span).
    fn suite(&mut self) -> Result<(Vec<Stmt>, Span), SyntaxError> {
        let mut body = Vec::new();
        if self.eat(&TokKind::Newline) {
            self.expect(TokKind::Indent, "an indented block")?;
            while !self.check(&TokKind::Dedent) {
                self.statement_into(&mut body)?;
            }
            self.bump(); // Dedent
        } else {
            // Inline suite: simple statements only, ended by the newline.
            body.push(self.small_stmt()?);
            while self.eat(&TokKind::Semi) {
                if self.check(&TokKind::Newline) {
                    break;
                }
                body.push(self.small_stmt()?);
            }
            self.expect(TokKind::Newline, "end of line")?;
        }
        let end = body
            .last()
            .map(|s| s.span())
            .ok_or_else(|| self.error_here(&["a statement in the block"]))?;
        Ok((body, end))
    }

    fn expression(&mut self) -> Result<Expr, SyntaxError> {
        let left = self.arith()?;
        let op = match self.peek_kind() {
            TokKind::Eq => Some(CmpOpKind::Eq),
            TokKind::Ne => Some(CmpOpKind::Ne),
            TokKind::Lt => Some(CmpOpKind::Lt),
            TokKind::Gt => Some(CmpOpKind::Gt),
            TokKind::Le => Some(CmpOpKind::Le),
            TokKind::Ge => Some(CmpOpKind::Ge),
            _ => None,
        };
        let Some(op) = op else {
            return Ok(left);
        };
        self.bump();
        let right = self.arith()?;
        let span = left.span().merge(right.span());
        Ok(Expr::Compare {
            left: Box::new(left),
            op,
            right: Box::new(right),
            span,
        })
    }

    fn arith(&mut self) -> Result<Expr, SyntaxError> {
        let mut left = self.term()?;
        loop {
            let op = match self.peek_kind() {
                TokKind::Plus => BinOpKind::Add,
                TokKind::Minus => BinOpKind::Sub,
                _ => break,
            };
            self.bump();
            let right = self.term()?;
            let span = left.span().merge(right.span());
            left = Expr::BinOp {
                left: Box::new(left),
                op,
                right: Box::new(right),
                span,
            };
        }
        Ok(left)
    }

    fn term(&mut self) -> Result<Expr, SyntaxError> {
        let mut left = self.factor()?;
        loop {
            let op = match self.peek_kind() {
                TokKind::Star => BinOpKind::Mul,
                TokKind::Slash => BinOpKind::Div,
                TokKind::Percent => BinOpKind::Mod,
                _ => break,
            };
            self.bump();
            let right = self.factor()?;
            let span = left.span().merge(right.span());
            left = Expr::BinOp {
                left: Box::new(left),
                op,
                right: Box::new(right),
                span,
            };
        }
        Ok(left)
    }

    fn factor(&mut self) -> Result<Expr, SyntaxError> {
        if self.check(&TokKind::Minus) {
            let minus = self.bump();
            let value = match self.peek_kind().clone() {
                TokKind::Int(v) => {
                    let t = self.bump();
                    Expr::Literal {
                        value: Literal::Int(-v),
                        span: tok_span(&minus).merge(tok_span(&t)),
                    }
                }
                TokKind::Float(v) => {
                    let t = self.bump();
                    Expr::Literal {
                        value: Literal::Float(-v),
                        span: tok_span(&minus).merge(tok_span(&t)),
                    }
                }
                _ => return Err(self.error_here(&["a numeric literal after unary '-'"])),
            };
            return Ok(value);
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<Expr, SyntaxError> {
        let mut expr = self.atom()?;
        loop {
            if self.eat(&TokKind::Dot) {
                let (attr, attr_span) = self.expect_name("an attribute name")?;
                let span = expr.span().merge(attr_span);
                expr = Expr::Attribute {
                    value: Box::new(expr),
                    attr,
                    span,
                };
            } else if self.check(&TokKind::LParen) {
                self.bump();
                let (args, kwargs) = self.arguments()?;
                let close = self.expect(TokKind::RParen, "')'")?;
                let span = expr.span().merge(tok_span(&close));
                expr = Expr::Call {
                    func: Box::new(expr),
                    args,
                    kwargs,
                    span,
                };
            } else {
                break;
            }
        }
        Ok(expr)
    }

    fn arguments(&mut self) -> Result<(Vec<Expr>, Vec<Keyword>), SyntaxError> {
        let mut args = Vec::new();
        let mut kwargs: Vec<Keyword> = Vec::new();
        while !self.check(&TokKind::RParen) {
            if matches!(self.peek_kind(), TokKind::Name(_))
                && *self.next_kind() == TokKind::Assign
            {
                let (name, name_span) = self.expect_name("a keyword name")?;
                self.bump(); // '='
                let value = self.expression()?;
                let span = name_span.merge(value.span());
                kwargs.push(Keyword { name, value, span });
            } else {
                if !kwargs.is_empty() {
                    return Err(
                        self.error_here(&["a keyword argument (positional arguments cannot follow keyword arguments)"])
                    );
                }
                args.push(self.expression()?);
            }
            if !self.eat(&TokKind::Comma) {
                break;
            }
        }
        Ok((args, kwargs))
    }

    fn atom(&mut self) -> Result<Expr, SyntaxError> {
        let literal = |parser: &mut Parser, value: Literal| {
            let t = parser.bump();
            Expr::Literal {
                value,
                span: tok_span(&t),
            }
        };
        match self.peek_kind().clone() {
            TokKind::Name(id) => {
                let t = self.bump();
                Ok(Expr::Name(Name {
                    id,
                    ctx: NameCtx::Load,
                    span: tok_span(&t),
                }))
            }
            TokKind::Int(v) => Ok(literal(self, Literal::Int(v))),
            TokKind::Float(v) => Ok(literal(self, Literal::Float(v))),
            TokKind::Str(s) => Ok(literal(self, Literal::Str(s))),
            TokKind::True => Ok(literal(self, Literal::Bool(true))),
            TokKind::False => Ok(literal(self, Literal::Bool(false))),
            TokKind::NoneLit => Ok(literal(self, Literal::None)),
            TokKind::LParen => {
                self.bump();
                let inner = self.expression()?;
                self.expect(TokKind::RParen, "')'")?;
                Ok(inner)
            }
            TokKind::LBracket => {
                let open = self.bump();
                let mut elements = Vec::new();
                while !self.check(&TokKind::RBracket) {
                    elements.push(self.expression()?);
                    if !self.eat(&TokKind::Comma) {
                        break;
                    }
                }
                let close = self.expect(TokKind::RBracket, "']'")?;
                Ok(Expr::ListDisplay {
                    elements,
                    span: tok_span(&open).merge(tok_span(&close)),
                })
            }
            _ => Err(self.error_here(&["a name", "a literal", "'('", "'['"])),
        }
    }
}
