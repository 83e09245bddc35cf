//! Recursive-descent parser producing [`crate::ast`] trees.

use crate::ast::*;
use crate::error::SyntaxError;
use crate::lexer::{tokenize, Tok, Token};

pub fn parse_file(path: &str, text: &str) -> Result<SourceFile, SyntaxError> {
    let tokens = tokenize(text)?;
    let mut p = Parser { tokens, pos: 0 };
    let mut items = Vec::new();
    while !p.at(&Tok::Eof) {
        items.push(p.item()?);
    }
    Ok(SourceFile { path: path.to_string(), text: text.to_string(), items })
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, SyntaxError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let idx = (self.pos + n).min(self.tokens.len() - 1);
        &self.tokens[idx].tok
    }

    fn span(&self) -> Span {
        self.tokens[self.pos].span
    }

    fn prev_span(&self) -> Span {
        self.tokens[self.pos.saturating_sub(1)].span
    }

    fn at(&self, tok: &Tok) -> bool {
        self.peek() == tok
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.at(tok) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &Tok) -> PResult<Span> {
        if self.at(tok) {
            Ok(self.bump().span)
        } else {
            Err(self.unexpected(&tok.describe()))
        }
    }

    fn unexpected(&self, wanted: &str) -> SyntaxError {
        SyntaxError::new(self.span().start, format!("expected {wanted}, found {}", self.peek().describe()))
    }

    fn ident(&mut self) -> PResult<(String, Span)> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                let span = self.bump().span;
                Ok((name, span))
            }
            _ => Err(self.unexpected("identifier")),
        }
    }

    fn type_name(&mut self) -> PResult<TypeName> {
        let (word, _) = self.ident()?;
        Ok(TypeName::parse(&word))
    }

    fn item(&mut self) -> PResult<Item> {
        match self.peek() {
            Tok::Class => self.class().map(Item::Class),
            Tok::Test => {
                let start = self.bump().span;
                let mut f = self.function(start.start, false, false)?;
                f.span = start.to(f.span);
                Ok(Item::Test(f))
            }
            Tok::Pub | Tok::Static | Tok::Fn => {
                let start = self.span().start;
                let is_pub = self.eat(&Tok::Pub);
                let is_static = self.eat(&Tok::Static);
                self.function(start, is_pub, is_static).map(Item::Function)
            }
            _ => Err(self.unexpected("`class`, `fn` or `test`")),
        }
    }

    fn class(&mut self) -> PResult<ClassDecl> {
        let start = self.expect(&Tok::Class)?;
        let (name, _) = self.ident()?;
        self.expect(&Tok::LBrace)?;
        let mut fields = Vec::new();
        let mut methods = Vec::new();
        while !self.at(&Tok::RBrace) {
            let member_start = self.span().start;
            match self.peek() {
                Tok::Transient | Tok::Field => {
                    let transient = self.eat(&Tok::Transient);
                    self.expect(&Tok::Field)?;
                    let (fname, _) = self.ident()?;
                    self.expect(&Tok::Colon)?;
                    let ty = self.type_name()?;
                    let end = self.expect(&Tok::Semi)?;
                    fields.push(FieldDecl { name: fname, ty, transient, span: Span::new(member_start, end.end) });
                }
                Tok::Pub | Tok::Static | Tok::Fn => {
                    let is_pub = self.eat(&Tok::Pub);
                    let is_static = self.eat(&Tok::Static);
                    methods.push(self.function(member_start, is_pub, is_static)?);
                }
                _ => return Err(self.unexpected("field or method declaration")),
            }
        }
        let end = self.expect(&Tok::RBrace)?;
        Ok(ClassDecl { name, fields, methods, span: start.to(end) })
    }

    fn function(&mut self, start: usize, is_pub: bool, is_static: bool) -> PResult<FnDecl> {
        self.expect(&Tok::Fn)?;
        let (name, name_span) = self.ident()?;
        self.expect(&Tok::LParen)?;
        let mut params = Vec::new();
        if !self.at(&Tok::RParen) {
            loop {
                let (pname, _) = self.ident()?;
                self.expect(&Tok::Colon)?;
                let ty = self.type_name()?;
                params.push(Param { name: pname, ty });
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        self.expect(&Tok::RParen)?;
        let ret = if self.eat(&Tok::Arrow) { self.type_name()? } else { TypeName::Void };
        let body = self.block()?;
        let span = Span::new(start, body.span.end);
        Ok(FnDecl { name, is_pub, is_static, params, ret, body, span, name_span })
    }

    fn block(&mut self) -> PResult<Block> {
        let open = self.expect(&Tok::LBrace)?;
        let mut stmts = Vec::new();
        while !self.at(&Tok::RBrace) {
            if self.at(&Tok::Eof) {
                return Err(self.unexpected("`}`"));
            }
            stmts.push(self.stmt()?);
        }
        let close = self.expect(&Tok::RBrace)?;
        Ok(Block { stmts, span: open.to(close) })
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let start = self.span();
        match self.peek() {
            Tok::Let => {
                self.bump();
                let (name, _) = self.ident()?;
                let ty = if self.eat(&Tok::Colon) { Some(self.type_name()?) } else { None };
                self.expect(&Tok::Assign)?;
                let init = self.expr()?;
                let end = self.expect(&Tok::Semi)?;
                Ok(Stmt::Let { name, ty, init, span: start.to(end) })
            }
            Tok::If => self.if_stmt(),
            Tok::While => {
                self.bump();
                self.expect(&Tok::LParen)?;
                let cond = self.expr()?;
                self.expect(&Tok::RParen)?;
                let body = self.block()?;
                let span = start.to(body.span);
                Ok(Stmt::While { cond, body, span })
            }
            Tok::For => {
                self.bump();
                self.expect(&Tok::LParen)?;
                let (var, _) = self.ident()?;
                self.expect(&Tok::In)?;
                let iter = self.expr()?;
                self.expect(&Tok::RParen)?;
                let body = self.block()?;
                let span = start.to(body.span);
                Ok(Stmt::For { var, iter, body, span })
            }
            Tok::Return => {
                self.bump();
                let value = if self.at(&Tok::Semi) { None } else { Some(self.expr()?) };
                let end = self.expect(&Tok::Semi)?;
                Ok(Stmt::Return { value, span: start.to(end) })
            }
            Tok::Throw => {
                self.bump();
                let value = self.expr()?;
                let end = self.expect(&Tok::Semi)?;
                Ok(Stmt::Throw { value, span: start.to(end) })
            }
            Tok::Try => {
                self.bump();
                let body = self.block()?;
                self.expect(&Tok::Catch)?;
                self.expect(&Tok::LParen)?;
                let (var, _) = self.ident()?;
                self.expect(&Tok::RParen)?;
                let handler = self.block()?;
                let span = start.to(handler.span);
                Ok(Stmt::Try { body, var, handler, span })
            }
            Tok::Break => {
                self.bump();
                let end = self.expect(&Tok::Semi)?;
                Ok(Stmt::Break(start.to(end)))
            }
            Tok::Continue => {
                self.bump();
                let end = self.expect(&Tok::Semi)?;
                Ok(Stmt::Continue(start.to(end)))
            }
            _ => {
                let target = self.expr()?;
                if self.eat(&Tok::Assign) {
                    if !matches!(target.kind, ExprKind::Var(_) | ExprKind::Field(..) | ExprKind::Index(..)) {
                        return Err(SyntaxError::new(target.span.start, "invalid assignment target"));
                    }
                    let value = self.expr()?;
                    let end = self.expect(&Tok::Semi)?;
                    Ok(Stmt::Assign { target, value, span: start.to(end) })
                } else {
                    self.expect(&Tok::Semi)?;
                    Ok(Stmt::Expr(target))
                }
            }
        }
    }

    fn if_stmt(&mut self) -> PResult<Stmt> {
        let start = self.expect(&Tok::If)?;
        self.expect(&Tok::LParen)?;
        let cond = self.expr()?;
        self.expect(&Tok::RParen)?;
        let then = self.block()?;
        let mut span = start.to(then.span);
        let otherwise = if self.eat(&Tok::Else) {
            let other = if self.at(&Tok::If) { self.if_stmt()? } else { Stmt::Block(self.block()?) };
            span = span.to(other.span());
            Some(Box::new(other))
        } else {
            None
        };
        Ok(Stmt::If { cond, then, otherwise, span })
    }

    fn expr(&mut self) -> PResult<Expr> {
        self.binary(0)
    }

    fn binary(&mut self, min_prec: u8) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        while let Some((op, prec)) = binop(self.peek()) {
            if prec < min_prec {
                break;
            }
            self.bump();
            let rhs = self.binary(prec + 1)?;
            let span = lhs.span.to(rhs.span);
            lhs = Expr { kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), span };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Expr> {
        let start = self.span();
        let op = match self.peek() {
            Tok::Minus => UnOp::Neg,
            Tok::Bang => UnOp::Not,
            _ => return self.postfix(),
        };
        self.bump();
        let inner = self.unary()?;
        // Fold negative literals so `-1` is a literal, not an operation.
        let span = start.to(inner.span);
        let kind = match (op, &inner.kind) {
            (UnOp::Neg, ExprKind::Int(i)) => ExprKind::Int(i.wrapping_neg()),
            (UnOp::Neg, ExprKind::Float(f)) => ExprKind::Float(-f),
            _ => ExprKind::Unary(op, Box::new(inner)),
        };
        Ok(Expr { kind, span })
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let mut e = self.primary()?;
        loop {
            if self.eat(&Tok::Dot) {
                let (name, nspan) = self.ident()?;
                if self.at(&Tok::LParen) {
                    let args = self.args()?;
                    let span = e.span.to(self.prev_span());
                    e = Expr { kind: ExprKind::MethodCall(Box::new(e), name, args), span };
                } else {
                    let span = e.span.to(nspan);
                    e = Expr { kind: ExprKind::Field(Box::new(e), name), span };
                }
            } else if self.eat(&Tok::LBracket) {
                let idx = self.expr()?;
                let end = self.expect(&Tok::RBracket)?;
                let span = e.span.to(end);
                e = Expr { kind: ExprKind::Index(Box::new(e), Box::new(idx)), span };
            } else {
                break;
            }
        }
        Ok(e)
    }

    fn args(&mut self) -> PResult<Vec<Expr>> {
        self.expect(&Tok::LParen)?;
        let mut args = Vec::new();
        if !self.at(&Tok::RParen) {
            loop {
                args.push(self.expr()?);
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        self.expect(&Tok::RParen)?;
        Ok(args)
    }

    fn primary(&mut self) -> PResult<Expr> {
        let start = self.span();
        let lit = |kind| Ok(Expr { kind, span: start });
        match self.peek().clone() {
            Tok::Null => {
                self.bump();
                lit(ExprKind::Null)
            }
            Tok::True => {
                self.bump();
                lit(ExprKind::Bool(true))
            }
            Tok::False => {
                self.bump();
                lit(ExprKind::Bool(false))
            }
            Tok::Int(i) => {
                self.bump();
                lit(ExprKind::Int(i))
            }
            Tok::Float(f) => {
                self.bump();
                lit(ExprKind::Float(f))
            }
            Tok::Str(s) => {
                self.bump();
                lit(ExprKind::Str(s))
            }
            Tok::This => {
                self.bump();
                lit(ExprKind::This)
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr()?;
                let end = self.expect(&Tok::RParen)?;
                Ok(Expr { kind: inner.kind, span: start.to(end) })
            }
            Tok::LBracket => {
                self.bump();
                let mut items = Vec::new();
                if !self.at(&Tok::RBracket) {
                    loop {
                        items.push(self.expr()?);
                        if !self.eat(&Tok::Comma) {
                            break;
                        }
                    }
                }
                let end = self.expect(&Tok::RBracket)?;
                Ok(Expr { kind: ExprKind::List(items), span: start.to(end) })
            }
            Tok::LBrace => {
                self.bump();
                let mut entries = Vec::new();
                if !self.at(&Tok::RBrace) {
                    loop {
                        let k = self.expr()?;
                        self.expect(&Tok::Colon)?;
                        let v = self.expr()?;
                        entries.push((k, v));
                        if !self.eat(&Tok::Comma) {
                            break;
                        }
                    }
                }
                let end = self.expect(&Tok::RBrace)?;
                Ok(Expr { kind: ExprKind::Map(entries), span: start.to(end) })
            }
            Tok::New => {
                self.bump();
                let (class, _) = self.ident()?;
                self.expect(&Tok::LBrace)?;
                let mut inits = Vec::new();
                if !self.at(&Tok::RBrace) {
                    loop {
                        let (field, _) = self.ident()?;
                        self.expect(&Tok::Colon)?;
                        inits.push((field, self.expr()?));
                        if !self.eat(&Tok::Comma) {
                            break;
                        }
                    }
                }
                let end = self.expect(&Tok::RBrace)?;
                Ok(Expr { kind: ExprKind::New(class, inits), span: start.to(end) })
            }
            Tok::Ident(name) => {
                self.bump();
                if self.at(&Tok::LParen) {
                    let args = self.args()?;
                    return Ok(Expr { kind: ExprKind::Call(name, args), span: start.to(self.prev_span()) });
                }
                let is_type = name.starts_with(|c: char| c.is_ascii_uppercase());
                if is_type && self.at(&Tok::Dot) && matches!(self.peek_at(2), Tok::LParen) {
                    self.bump();
                    let (method, _) = self.ident()?;
                    let args = self.args()?;
                    return Ok(Expr {
                        kind: ExprKind::StaticCall(name, method, args),
                        span: start.to(self.prev_span()),
                    });
                }
                lit(ExprKind::Var(name))
            }
            _ => Err(self.unexpected("expression")),
        }
    }
}

fn binop(tok: &Tok) -> Option<(BinOp, u8)> {
    Some(match tok {
        Tok::OrOr => (BinOp::Or, 1),
        Tok::AndAnd => (BinOp::And, 2),
        Tok::EqEq => (BinOp::Eq, 3),
        Tok::NotEq => (BinOp::Ne, 3),
        Tok::Lt => (BinOp::Lt, 4),
        Tok::Le => (BinOp::Le, 4),
        Tok::Gt => (BinOp::Gt, 4),
        Tok::Ge => (BinOp::Ge, 4),
        Tok::Plus => (BinOp::Add, 5),
        Tok::Minus => (BinOp::Sub, 5),
        Tok::Star => (BinOp::Mul, 6),
        Tok::Slash => (BinOp::Div, 6),
        Tok::Percent => (BinOp::Rem, 6),
        _ => return None,
    })
}
