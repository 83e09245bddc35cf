//! Static checks run after parsing. A program that passes them "compiles".

use std::collections::HashSet;

use crate::ast::*;
use crate::builtins;
use crate::error::Diagnostic;
use crate::project::Program;

pub fn check_program(program: &Program) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    for file in &program.files {
        let mut cx = Checker {
            program,
            file,
            diags: &mut diags,
            scopes: Vec::new(),
            class: None,
            ret: TypeName::Void,
            loops: 0,
        };
        for item in &file.items {
            match item {
                Item::Class(class) => {
                    for field in &class.fields {
                        cx.check_type(&field.ty, field.span);
                    }
                    for method in &class.methods {
                        cx.check_fn(method, Some(class));
                    }
                }
                Item::Function(f) => cx.check_fn(f, None),
                Item::Test(f) => {
                    if !f.params.is_empty() {
                        cx.error(f.span, format!("test `{}` must not take parameters", f.name));
                    }
                    cx.check_fn(f, None);
                }
            }
        }
    }
    diags
}

struct Checker<'a> {
    program: &'a Program,
    file: &'a SourceFile,
    diags: &'a mut Vec<Diagnostic>,
    scopes: Vec<HashSet<String>>,
    /// Enclosing class of an instance method.
    class: Option<&'a ClassDecl>,
    ret: TypeName,
    loops: usize,
}

impl<'a> Checker<'a> {
    fn error(&mut self, span: Span, message: String) {
        let (line, col) = line_col(&self.file.text, span.start);
        self.diags.push(Diagnostic { file: self.file.path.clone(), line, col, message });
    }

    fn check_type(&mut self, ty: &TypeName, span: Span) {
        if let TypeName::Class(name) = ty {
            if self.program.class(name).is_none() {
                self.error(span, format!("unknown type `{name}`"));
            }
        }
    }

    fn check_fn(&mut self, f: &'a FnDecl, class: Option<&'a ClassDecl>) {
        self.class = if f.is_static { None } else { class };
        self.ret = f.ret.clone();
        self.loops = 0;
        self.check_type(&f.ret, f.name_span);
        let mut params = HashSet::new();
        for p in &f.params {
            self.check_type(&p.ty, f.name_span);
            if !params.insert(p.name.clone()) {
                self.error(f.name_span, format!("duplicate parameter `{}`", p.name));
            }
        }
        self.scopes = vec![params];
        self.block(&f.body);
    }

    fn declared(&self, name: &str) -> bool {
        self.scopes.iter().rev().any(|s| s.contains(name))
    }

    fn block(&mut self, b: &'a Block) {
        self.scopes.push(HashSet::new());
        for s in &b.stmts {
            self.stmt(s);
        }
        self.scopes.pop();
    }

    fn stmt(&mut self, s: &'a Stmt) {
        match s {
            Stmt::Let { name, ty, init, span } => {
                self.expr(init);
                if let Some(ty) = ty {
                    self.check_type(ty, *span);
                }
                self.scopes.last_mut().expect("scope").insert(name.clone());
            }
            Stmt::Assign { target, value, .. } => {
                self.expr(target);
                self.expr(value);
            }
            Stmt::If { cond, then, otherwise, .. } => {
                self.expr(cond);
                self.block(then);
                if let Some(o) = otherwise {
                    self.stmt(o);
                }
            }
            Stmt::Block(b) => self.block(b),
            Stmt::While { cond, body, .. } => {
                self.expr(cond);
                self.loops += 1;
                self.block(body);
                self.loops -= 1;
            }
            Stmt::For { var, iter, body, .. } => {
                self.expr(iter);
                self.loops += 1;
                self.scopes.push(HashSet::from([var.clone()]));
                self.block(body);
                self.scopes.pop();
                self.loops -= 1;
            }
            Stmt::Return { value, span } => match (value, self.ret.clone()) {
                (Some(_), TypeName::Void) => self.error(*span, "cannot return a value from a void function".into()),
                (None, ty) if ty != TypeName::Void => self.error(*span, format!("missing return value of type `{ty}`")),
                (Some(v), ty) => {
                    self.expr(v);
                    if let Some(lit) = literal_type(v) {
                        if !literal_fits(&lit, &ty) {
                            self.error(v.span, format!("`{lit}` literal returned from function declared `-> {ty}`"));
                        }
                    }
                }
                (None, _) => {}
            },
            Stmt::Throw { value, .. } => self.expr(value),
            Stmt::Try { body, var, handler, .. } => {
                self.block(body);
                self.scopes.push(HashSet::from([var.clone()]));
                self.block(handler);
                self.scopes.pop();
            }
            Stmt::Break(span) | Stmt::Continue(span) => {
                if self.loops == 0 {
                    self.error(*span, "`break`/`continue` outside of a loop".into());
                }
            }
            Stmt::Expr(e) => self.expr(e),
        }
    }

    fn exprs(&mut self, es: &'a [Expr]) {
        for e in es {
            self.expr(e);
        }
    }

    fn expr(&mut self, e: &'a Expr) {
        match &e.kind {
            ExprKind::Null | ExprKind::Bool(_) | ExprKind::Int(_) | ExprKind::Float(_) | ExprKind::Str(_) => {}
            ExprKind::List(items) => self.exprs(items),
            ExprKind::Map(entries) => {
                for (k, v) in entries {
                    self.expr(k);
                    self.expr(v);
                }
            }
            ExprKind::Var(name) => {
                if !self.declared(name) {
                    self.error(e.span, format!("undeclared variable `{name}`"));
                }
            }
            ExprKind::This => {
                if self.class.is_none() {
                    self.error(e.span, "`this` outside of an instance method".into());
                }
            }
            ExprKind::Field(obj, name) => {
                if let (ExprKind::This, Some(class)) = (&obj.kind, self.class) {
                    if !class.fields.iter().any(|f| &f.name == name) {
                        self.error(e.span, format!("class `{}` has no field `{name}`", class.name));
                    }
                }
                self.expr(obj);
            }
            ExprKind::Index(obj, idx) => {
                self.expr(obj);
                self.expr(idx);
            }
            ExprKind::Call(name, args) => {
                self.exprs(args);
                if let Some(f) = self.program.function(name) {
                    if f.params.len() != args.len() {
                        self.error(
                            e.span,
                            format!("`{name}` takes {} arguments, {} given", f.params.len(), args.len()),
                        );
                    }
                } else if let Some(b) = builtins::lookup(name) {
                    if !b.accepts(args.len()) {
                        self.error(e.span, format!("wrong number of arguments to builtin `{name}`"));
                    }
                } else {
                    self.error(e.span, format!("unknown function `{name}`"));
                }
            }
            ExprKind::MethodCall(recv, name, args) => {
                self.expr(recv);
                self.exprs(args);
                if let (ExprKind::This, Some(class)) = (&recv.kind, self.class) {
                    match class.methods.iter().find(|m| &m.name == name && !m.is_static) {
                        None => self.error(e.span, format!("class `{}` has no instance method `{name}`", class.name)),
                        Some(m) if m.params.len() != args.len() => self.error(
                            e.span,
                            format!("`{}.{name}` takes {} arguments, {} given", class.name, m.params.len(), args.len()),
                        ),
                        Some(_) => {}
                    }
                }
            }
            ExprKind::StaticCall(class, method, args) => {
                self.exprs(args);
                let target = self.program.class(class).map(|c| c.method(method).filter(|m| m.is_static));
                match target {
                    None => self.error(e.span, format!("unknown class `{class}`")),
                    Some(None) => self.error(e.span, format!("class `{class}` has no static function `{method}`")),
                    Some(Some(m)) if m.params.len() != args.len() => self.error(
                        e.span,
                        format!("`{class}.{method}` takes {} arguments, {} given", m.params.len(), args.len()),
                    ),
                    Some(Some(_)) => {}
                }
            }
            ExprKind::New(class, inits) => {
                for (_, v) in inits {
                    self.expr(v);
                }
                match self.program.class(class) {
                    None => self.error(e.span, format!("unknown class `{class}`")),
                    Some(entry) => {
                        for (field, _) in inits {
                            if entry.info.field(field).is_none() {
                                self.error(e.span, format!("class `{class}` has no field `{field}`"));
                            }
                        }
                    }
                }
            }
            ExprKind::Unary(_, inner) => self.expr(inner),
            ExprKind::Binary(_, l, r) => {
                self.expr(l);
                self.expr(r);
            }
        }
    }
}

fn literal_type(e: &Expr) -> Option<TypeName> {
    Some(match &e.kind {
        ExprKind::Bool(_) => TypeName::Bool,
        ExprKind::Int(_) => TypeName::Int,
        ExprKind::Float(_) => TypeName::Float,
        ExprKind::Str(_) => TypeName::Str,
        ExprKind::List(_) => TypeName::List,
        ExprKind::Map(_) => TypeName::Map,
        _ => return None,
    })
}

fn literal_fits(lit: &TypeName, declared: &TypeName) -> bool {
    declared == lit || *declared == TypeName::Any || (*declared == TypeName::Float && *lit == TypeName::Int)
}
