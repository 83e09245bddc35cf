//! Tree-walking interpreter.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ast::*;
use crate::builtins;
use crate::error::RuntimeError;
use crate::project::{Program, TestCase};
use crate::value::{MapKey, Object, Value};

type Eval<T> = Result<T, RuntimeError>;

/// Services the embedding application provides to subject code: probes,
/// codec access and external services. See [`builtins::BUILTINS`].
pub trait Host: Send + Sync {
    fn call(&self, name: &str, args: &[Value], cx: &mut HostContext<'_>) -> Eval<Value>;
}

/// A host that supplies nothing; every host builtin faults.
pub struct NoHost;

impl Host for NoHost {
    fn call(&self, name: &str, _args: &[Value], _cx: &mut HostContext<'_>) -> Eval<Value> {
        Err(RuntimeError::fault(format!("builtin `{name}` is not available in this runtime")))
    }
}

pub struct HostContext<'a> {
    pub program: &'a Program,
    pub output: &'a mut String,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub seed: u64,
    pub deadline: Option<Instant>,
    pub max_depth: usize,
    /// Record which `Class.method` pairs are entered.
    pub track_coverage: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { seed: 0, deadline: None, max_depth: 150, track_coverage: false }
    }
}

enum Flow {
    Normal,
    Return(Value),
    Break,
    Continue,
}

struct Frame {
    scopes: Vec<Vec<(String, Value)>>,
    this: Option<Value>,
}

impl Frame {
    fn lookup(&self, name: &str) -> Option<&Value> {
        self.scopes.iter().rev().flat_map(|s| s.iter().rev()).find(|(n, _)| n == name).map(|(_, v)| v)
    }

    fn lookup_mut(&mut self, name: &str) -> Option<&mut Value> {
        self.scopes.iter_mut().rev().flat_map(|s| s.iter_mut().rev()).find(|(n, _)| n == name).map(|(_, v)| v)
    }

    fn define(&mut self, name: &str, v: Value) {
        self.scopes.last_mut().expect("frame has a scope").push((name.to_string(), v));
    }
}

pub struct Interpreter<'a> {
    program: &'a Program,
    host: &'a dyn Host,
    rng: ChaCha8Rng,
    output: String,
    deadline: Option<Instant>,
    max_depth: usize,
    depth: usize,
    steps: u64,
    coverage: Option<HashSet<String>>,
    frames: Vec<Frame>,
}

impl<'a> Interpreter<'a> {
    pub fn new(program: &'a Program, host: &'a dyn Host, opts: RunOptions) -> Self {
        Interpreter {
            program,
            host,
            rng: ChaCha8Rng::seed_from_u64(opts.seed),
            output: String::new(),
            deadline: opts.deadline,
            max_depth: opts.max_depth,
            depth: 0,
            steps: 0,
            coverage: opts.track_coverage.then(HashSet::new),
            frames: Vec::new(),
        }
    }

    /// Text written by `print` so far.
    pub fn output(&self) -> &str {
        &self.output
    }

    pub fn take_output(&mut self) -> String {
        std::mem::take(&mut self.output)
    }

    /// `Class.method` names entered so far, when coverage tracking is on.
    pub fn coverage(&self) -> Option<&HashSet<String>> {
        self.coverage.as_ref()
    }

    pub fn call_function(&mut self, name: &str, args: Vec<Value>) -> Eval<Value> {
        let f = self
            .program
            .function(name)
            .cloned()
            .ok_or_else(|| RuntimeError::fault(format!("unknown function `{name}`")))?;
        self.invoke(&f, None, args)
    }

    pub fn call_method(&mut self, receiver: &Value, name: &str, args: Vec<Value>) -> Eval<Value> {
        self.method_call(receiver.clone(), name, args)
    }

    pub fn call_static(&mut self, class: &str, name: &str, args: Vec<Value>) -> Eval<Value> {
        let f = self.static_fn(class, name)?;
        self.invoke(&f, None, args)
    }

    pub fn run_test(&mut self, test: &TestCase) -> Eval<()> {
        self.invoke(&test.decl, None, Vec::new()).map(|_| ())
    }

    fn static_fn(&self, class: &str, name: &str) -> Eval<Arc<FnDecl>> {
        self.program
            .class(class)
            .and_then(|c| c.method(name))
            .filter(|m| m.is_static)
            .cloned()
            .ok_or_else(|| RuntimeError::fault(format!("unknown static function `{class}.{name}`")))
    }

    fn tick(&mut self) -> Eval<()> {
        self.steps += 1;
        if self.steps.is_multiple_of(256) {
            if let Some(deadline) = self.deadline {
                if Instant::now() >= deadline {
                    return Err(RuntimeError::Timeout);
                }
            }
        }
        Ok(())
    }

    fn invoke(&mut self, f: &FnDecl, this: Option<Value>, args: Vec<Value>) -> Eval<Value> {
        if args.len() != f.params.len() {
            return Err(RuntimeError::fault(format!(
                "`{}` takes {} arguments, {} given",
                f.name,
                f.params.len(),
                args.len()
            )));
        }
        if self.depth >= self.max_depth {
            return Err(RuntimeError::StackOverflow);
        }
        let params = f.params.iter().map(|p| p.name.clone()).zip(args).collect();
        self.frames.push(Frame { scopes: vec![params], this });
        self.depth += 1;
        let result = self.block(&f.body);
        self.depth -= 1;
        self.frames.pop();
        match result? {
            Flow::Return(v) => Ok(v),
            _ => Ok(Value::Null),
        }
    }

    fn frame(&mut self) -> &mut Frame {
        self.frames.last_mut().expect("active frame")
    }

    fn block(&mut self, b: &Block) -> Eval<Flow> {
        self.frame().scopes.push(Vec::new());
        let mut flow = Ok(Flow::Normal);
        for s in &b.stmts {
            match self.stmt(s) {
                Ok(Flow::Normal) => continue,
                other => {
                    flow = other;
                    break;
                }
            }
        }
        self.frame().scopes.pop();
        flow
    }

    fn stmt(&mut self, s: &Stmt) -> Eval<Flow> {
        self.tick()?;
        match s {
            Stmt::Let { name, init, .. } => {
                let v = self.expr(init)?;
                self.frame().define(name, v);
            }
            Stmt::Assign { target, value, .. } => {
                let v = self.expr(value)?;
                self.assign(target, v)?;
            }
            Stmt::If { cond, then, otherwise, .. } => {
                if self.truthy(cond)? {
                    return self.block(then);
                } else if let Some(o) = otherwise {
                    return self.stmt(o);
                }
            }
            Stmt::Block(b) => return self.block(b),
            Stmt::While { cond, body, .. } => {
                while self.truthy(cond)? {
                    match self.block(body)? {
                        Flow::Break => break,
                        Flow::Return(v) => return Ok(Flow::Return(v)),
                        Flow::Normal | Flow::Continue => self.tick()?,
                    }
                }
            }
            Stmt::For { var, iter, body, .. } => {
                let items = match self.expr(iter)? {
                    Value::List(l) => l.read(|v| v.clone()),
                    Value::Map(m) => m.read(|m| m.keys().map(MapKey::to_value).collect()),
                    other => return Err(RuntimeError::fault(format!("cannot iterate over {}", other.type_name()))),
                };
                for item in items {
                    self.frame().scopes.push(vec![(var.clone(), item)]);
                    let flow = self.block(body);
                    self.frame().scopes.pop();
                    match flow? {
                        Flow::Break => break,
                        Flow::Return(v) => return Ok(Flow::Return(v)),
                        Flow::Normal | Flow::Continue => {}
                    }
                }
            }
            Stmt::Return { value, .. } => {
                let v = match value {
                    Some(e) => self.expr(e)?,
                    None => Value::Null,
                };
                return Ok(Flow::Return(v));
            }
            Stmt::Throw { value, .. } => {
                let v = self.expr(value)?;
                return Err(RuntimeError::Thrown(v));
            }
            Stmt::Try { body, var, handler, .. } => {
                let depth = self.frame().scopes.len();
                match self.block(body) {
                    Err(e) if e.is_catchable() => {
                        self.frame().scopes.truncate(depth);
                        let caught = match e {
                            RuntimeError::Thrown(v) => v,
                            other => Value::str(&other.to_string()),
                        };
                        self.frame().scopes.push(vec![(var.clone(), caught)]);
                        let flow = self.block(handler);
                        self.frame().scopes.pop();
                        return flow;
                    }
                    other => return other,
                }
            }
            Stmt::Break(_) => return Ok(Flow::Break),
            Stmt::Continue(_) => return Ok(Flow::Continue),
            Stmt::Expr(e) => {
                self.expr(e)?;
            }
        }
        Ok(Flow::Normal)
    }

    fn truthy(&mut self, e: &Expr) -> Eval<bool> {
        match self.expr(e)? {
            Value::Bool(b) => Ok(b),
            other => Err(RuntimeError::fault(format!("condition is {}, not bool", other.type_name()))),
        }
    }

    fn assign(&mut self, target: &Expr, v: Value) -> Eval<()> {
        match &target.kind {
            ExprKind::Var(name) => {
                let slot = self
                    .frame()
                    .lookup_mut(name)
                    .ok_or_else(|| RuntimeError::fault(format!("undeclared variable `{name}`")))?;
                *slot = v;
                Ok(())
            }
            ExprKind::Field(obj, field) => match self.expr(obj)? {
                Value::Object(o) => {
                    let known = o.read(|o| o.class.field(field).is_some());
                    if !known {
                        return Err(RuntimeError::fault(format!("no field `{field}`")));
                    }
                    o.write(|o| o.fields.insert(field.clone(), v));
                    Ok(())
                }
                other => Err(RuntimeError::fault(format!("cannot set field `{field}` on {}", other.type_name()))),
            },
            ExprKind::Index(obj, idx) => {
                let container = self.expr(obj)?;
                let idx = self.expr(idx)?;
                match container {
                    Value::List(l) => {
                        let i = list_index(&idx, l.read(|v| v.len()))?;
                        l.write(|items| items[i] = v);
                        Ok(())
                    }
                    Value::Map(m) => {
                        let key = map_key(&idx)?;
                        m.write(|m| m.insert(key, v));
                        Ok(())
                    }
                    other => Err(RuntimeError::fault(format!("cannot index-assign into {}", other.type_name()))),
                }
            }
            _ => Err(RuntimeError::fault("invalid assignment target")),
        }
    }

    fn exprs(&mut self, es: &[Expr]) -> Eval<Vec<Value>> {
        es.iter().map(|e| self.expr(e)).collect()
    }

    fn expr(&mut self, e: &Expr) -> Eval<Value> {
        Ok(match &e.kind {
            ExprKind::Null => Value::Null,
            ExprKind::Bool(b) => Value::Bool(*b),
            ExprKind::Int(i) => Value::Int(*i),
            ExprKind::Float(f) => Value::Float(*f),
            ExprKind::Str(s) => Value::str(s),
            ExprKind::List(items) => Value::list(self.exprs(items)?),
            ExprKind::Map(entries) => {
                let mut map = BTreeMap::new();
                for (k, v) in entries {
                    let k = map_key(&self.expr(k)?)?;
                    let v = self.expr(v)?;
                    map.insert(k, v);
                }
                Value::map(map)
            }
            ExprKind::Var(name) => self
                .frame()
                .lookup(name)
                .cloned()
                .ok_or_else(|| RuntimeError::fault(format!("undeclared variable `{name}`")))?,
            ExprKind::This => {
                self.frame().this.clone().ok_or_else(|| RuntimeError::fault("`this` outside of a method"))?
            }
            ExprKind::Field(obj, field) => match self.expr(obj)? {
                Value::Object(o) => o
                    .read(|o| {
                        if o.class.field(field).is_some() {
                            Some(o.fields.get(field).cloned().unwrap_or(Value::Null))
                        } else {
                            None
                        }
                    })
                    .ok_or_else(|| RuntimeError::fault(format!("no field `{field}`")))?,
                Value::Null => return Err(RuntimeError::fault(format!("null dereference reading `{field}`"))),
                other => return Err(RuntimeError::fault(format!("{} has no field `{field}`", other.type_name()))),
            },
            ExprKind::Index(obj, idx) => {
                let container = self.expr(obj)?;
                let idx = self.expr(idx)?;
                match container {
                    Value::List(l) => {
                        let i = list_index(&idx, l.read(|v| v.len()))?;
                        l.read(|v| v[i].clone())
                    }
                    Value::Map(m) => {
                        let key = map_key(&idx)?;
                        m.read(|m| m.get(&key).cloned()).unwrap_or(Value::Null)
                    }
                    other => return Err(RuntimeError::fault(format!("cannot index into {}", other.type_name()))),
                }
            }
            ExprKind::Call(name, args) => {
                let args = self.exprs(args)?;
                if let Some(f) = self.program.function(name).cloned() {
                    self.invoke(&f, None, args)?
                } else {
                    self.builtin(name, args)?
                }
            }
            ExprKind::MethodCall(recv, name, args) => {
                let recv = self.expr(recv)?;
                let args = self.exprs(args)?;
                self.method_call(recv, name, args)?
            }
            ExprKind::StaticCall(class, name, args) => {
                let args = self.exprs(args)?;
                let f = self.static_fn(class, name)?;
                self.invoke(&f, None, args)?
            }
            ExprKind::New(class, inits) => {
                let entry =
                    self.program.class(class).ok_or_else(|| RuntimeError::fault(format!("unknown class `{class}`")))?;
                let info = entry.info.clone();
                let mut fields: BTreeMap<String, Value> =
                    info.fields.iter().map(|f| (f.name.clone(), Value::Null)).collect();
                for (name, init) in inits {
                    let v = self.expr(init)?;
                    fields.insert(name.clone(), v);
                }
                Value::object(info, fields)
            }
            ExprKind::Unary(UnOp::Not, inner) => match self.expr(inner)? {
                Value::Bool(b) => Value::Bool(!b),
                other => return Err(RuntimeError::fault(format!("cannot negate {}", other.type_name()))),
            },
            ExprKind::Unary(UnOp::Neg, inner) => match self.expr(inner)? {
                Value::Int(i) => Value::Int(i.checked_neg().ok_or_else(|| RuntimeError::fault("integer overflow"))?),
                Value::Float(f) => Value::Float(-f),
                other => return Err(RuntimeError::fault(format!("cannot negate {}", other.type_name()))),
            },
            ExprKind::Binary(BinOp::And, l, r) => Value::Bool(self.truthy(l)? && self.truthy(r)?),
            ExprKind::Binary(BinOp::Or, l, r) => Value::Bool(self.truthy(l)? || self.truthy(r)?),
            ExprKind::Binary(op, l, r) => {
                let l = self.expr(l)?;
                let r = self.expr(r)?;
                self.binary(*op, l, r)?
            }
        })
    }

    fn binary(&mut self, op: BinOp, l: Value, r: Value) -> Eval<Value> {
        use Value::*;
        let overflow = || RuntimeError::fault("integer overflow");
        Ok(match (op, &l, &r) {
            (BinOp::Eq, _, _) => Bool(self.equal(&l, &r)?),
            (BinOp::Ne, _, _) => Bool(!self.equal(&l, &r)?),
            (BinOp::Add, Str(a), b) => Value::str(&format!("{a}{}", b.display())),
            (BinOp::Add, a, Str(b)) => Value::str(&format!("{}{b}", a.display())),
            (_, Int(a), Int(b)) => match op {
                BinOp::Add => Int(a.checked_add(*b).ok_or_else(overflow)?),
                BinOp::Sub => Int(a.checked_sub(*b).ok_or_else(overflow)?),
                BinOp::Mul => Int(a.checked_mul(*b).ok_or_else(overflow)?),
                BinOp::Div | BinOp::Rem if *b == 0 => return Err(RuntimeError::fault("division by zero")),
                BinOp::Div => Int(a.checked_div(*b).ok_or_else(overflow)?),
                BinOp::Rem => Int(a.checked_rem(*b).ok_or_else(overflow)?),
                BinOp::Lt => Bool(a < b),
                BinOp::Le => Bool(a <= b),
                BinOp::Gt => Bool(a > b),
                BinOp::Ge => Bool(a >= b),
                _ => unreachable!("handled above"),
            },
            (_, Int(_) | Float(_), Int(_) | Float(_)) => {
                let a = as_float(&l);
                let b = as_float(&r);
                match op {
                    BinOp::Add => Float(a + b),
                    BinOp::Sub => Float(a - b),
                    BinOp::Mul => Float(a * b),
                    BinOp::Div => Float(a / b),
                    BinOp::Rem => Float(a % b),
                    BinOp::Lt => Bool(a < b),
                    BinOp::Le => Bool(a <= b),
                    BinOp::Gt => Bool(a > b),
                    BinOp::Ge => Bool(a >= b),
                    _ => unreachable!("handled above"),
                }
            }
            (BinOp::Lt, Str(a), Str(b)) => Bool(a < b),
            (BinOp::Le, Str(a), Str(b)) => Bool(a <= b),
            (BinOp::Gt, Str(a), Str(b)) => Bool(a > b),
            (BinOp::Ge, Str(a), Str(b)) => Bool(a >= b),
            _ => {
                return Err(RuntimeError::fault(format!(
                    "unsupported operands {} {op:?} {}",
                    l.type_name(),
                    r.type_name()
                )))
            }
        })
    }

    /// Equality used by `==` and `assert_eq`: structural for scalars, lists and
    /// maps; for objects, the class's `equals` method if it declares one and
    /// reference identity otherwise.
    pub fn equal(&mut self, a: &Value, b: &Value) -> Eval<bool> {
        let mut seen = HashSet::new();
        self.equal_inner(a, b, &mut seen)
    }

    fn equal_inner(&mut self, a: &Value, b: &Value, seen: &mut HashSet<(usize, usize)>) -> Eval<bool> {
        use Value::*;
        Ok(match (a, b) {
            (Null, Null) => true,
            (Bool(x), Bool(y)) => x == y,
            (Int(x), Int(y)) => x == y,
            (Int(_) | Float(_), Int(_) | Float(_)) => as_float(a) == as_float(b),
            (Str(x), Str(y)) => x == y,
            (List(x), List(y)) => {
                if Arc::ptr_eq(x, y) || !seen.insert((Arc::as_ptr(x) as usize, Arc::as_ptr(y) as usize)) {
                    return Ok(true);
                }
                let xs = x.read(|v| v.clone());
                let ys = y.read(|v| v.clone());
                if xs.len() != ys.len() {
                    return Ok(false);
                }
                for (p, q) in xs.iter().zip(&ys) {
                    if !self.equal_inner(p, q, seen)? {
                        return Ok(false);
                    }
                }
                true
            }
            (Map(x), Map(y)) => {
                if Arc::ptr_eq(x, y) || !seen.insert((Arc::as_ptr(x) as usize, Arc::as_ptr(y) as usize)) {
                    return Ok(true);
                }
                let xs = x.read(|m| m.clone());
                let ys = y.read(|m| m.clone());
                if xs.len() != ys.len() {
                    return Ok(false);
                }
                for ((kx, vx), (ky, vy)) in xs.iter().zip(&ys) {
                    if kx != ky || !self.equal_inner(vx, vy, seen)? {
                        return Ok(false);
                    }
                }
                true
            }
            (Object(x), Object(_)) => {
                if a.same_ref(b) {
                    return Ok(true);
                }
                let has_equals = x.read(|o| o.class.has_equals);
                if has_equals {
                    match self.method_call(a.clone(), "equals", vec![b.clone()])? {
                        Bool(r) => r,
                        other => return Err(RuntimeError::fault(format!("equals returned {}", other.type_name()))),
                    }
                } else {
                    false
                }
            }
            (Resource(_), Resource(_)) => a.same_ref(b),
            _ => false,
        })
    }

    fn method_call(&mut self, recv: Value, name: &str, args: Vec<Value>) -> Eval<Value> {
        match &recv {
            Value::Object(o) => {
                let class = o.read(|o| o.class.name.clone());
                let entry = self
                    .program
                    .class(&class)
                    .ok_or_else(|| RuntimeError::fault(format!("unknown class `{class}`")))?;
                let method = entry
                    .method(name)
                    .filter(|m| !m.is_static)
                    .cloned()
                    .ok_or_else(|| RuntimeError::fault(format!("`{class}` has no method `{name}`")))?;
                if let Some(cov) = &mut self.coverage {
                    cov.insert(format!("{class}.{name}"));
                }
                self.invoke(&method, Some(recv), args)
            }
            Value::Null => Err(RuntimeError::fault(format!("null dereference calling `{name}`"))),
            _ => self.value_method(recv, name, args),
        }
    }

    fn value_method(&mut self, recv: Value, name: &str, args: Vec<Value>) -> Eval<Value> {
        let arity = |n: usize| -> Eval<()> {
            if args.len() == n {
                Ok(())
            } else {
                Err(RuntimeError::fault(format!("`{name}` takes {n} arguments, {} given", args.len())))
            }
        };
        match (&recv, name) {
            (Value::List(l), "len") => {
                arity(0)?;
                Ok(Value::Int(l.read(|v| v.len()) as i64))
            }
            (Value::List(l), "get") => {
                arity(1)?;
                let i = list_index(&args[0], l.read(|v| v.len()))?;
                Ok(l.read(|v| v[i].clone()))
            }
            (Value::List(l), "set") => {
                arity(2)?;
                let i = list_index(&args[0], l.read(|v| v.len()))?;
                l.write(|v| v[i] = args[1].clone());
                Ok(Value::Null)
            }
            (Value::List(l), "push") => {
                arity(1)?;
                l.write(|v| v.push(args[0].clone()));
                Ok(Value::Null)
            }
            (Value::List(l), "pop") => {
                arity(0)?;
                l.write(|v| v.pop()).ok_or_else(|| RuntimeError::fault("pop from empty list"))
            }
            (Value::List(l), "contains") => {
                arity(1)?;
                let items = l.read(|v| v.clone());
                for item in &items {
                    if self.equal(item, &args[0])? {
                        return Ok(Value::Bool(true));
                    }
                }
                Ok(Value::Bool(false))
            }
            (Value::List(l), "copy") => {
                arity(0)?;
                Ok(Value::list(l.read(|v| v.clone())))
            }
            (Value::Map(m), "len") => {
                arity(0)?;
                Ok(Value::Int(m.read(|m| m.len()) as i64))
            }
            (Value::Map(m), "get") => {
                arity(1)?;
                let key = map_key(&args[0])?;
                Ok(m.read(|m| m.get(&key).cloned()).unwrap_or(Value::Null))
            }
            (Value::Map(m), "put") => {
                arity(2)?;
                let key = map_key(&args[0])?;
                Ok(m.write(|m| m.insert(key, args[1].clone())).unwrap_or(Value::Null))
            }
            (Value::Map(m), "has") => {
                arity(1)?;
                let key = map_key(&args[0])?;
                Ok(Value::Bool(m.read(|m| m.contains_key(&key))))
            }
            (Value::Map(m), "remove") => {
                arity(1)?;
                let key = map_key(&args[0])?;
                Ok(m.write(|m| m.remove(&key)).unwrap_or(Value::Null))
            }
            (Value::Map(m), "keys") => {
                arity(0)?;
                Ok(Value::list(m.read(|m| m.keys().map(MapKey::to_value).collect())))
            }
            (Value::Map(m), "values") => {
                arity(0)?;
                Ok(Value::list(m.read(|m| m.values().cloned().collect())))
            }
            (Value::Str(s), "len") => {
                arity(0)?;
                Ok(Value::Int(s.chars().count() as i64))
            }
            (Value::Str(s), "upper") => {
                arity(0)?;
                Ok(Value::str(&s.to_uppercase()))
            }
            (Value::Str(s), "lower") => {
                arity(0)?;
                Ok(Value::str(&s.to_lowercase()))
            }
            (Value::Str(s), "contains") => {
                arity(1)?;
                Ok(Value::Bool(s.contains(&*expect_str(&args[0])?)))
            }
            (Value::Str(s), "starts_with") => {
                arity(1)?;
                Ok(Value::Bool(s.starts_with(&*expect_str(&args[0])?)))
            }
            (Value::Str(s), "substr") => {
                arity(2)?;
                let chars: Vec<char> = s.chars().collect();
                let from = expect_int(&args[0])?.clamp(0, chars.len() as i64) as usize;
                let to = expect_int(&args[1])?.clamp(from as i64, chars.len() as i64) as usize;
                Ok(Value::str(&chars[from..to].iter().collect::<String>()))
            }
            _ => Err(RuntimeError::fault(format!("{} has no method `{name}`", recv.type_name()))),
        }
    }

    fn builtin(&mut self, name: &str, args: Vec<Value>) -> Eval<Value> {
        let spec = builtins::lookup(name).ok_or_else(|| RuntimeError::fault(format!("unknown function `{name}`")))?;
        if !spec.accepts(args.len()) {
            return Err(RuntimeError::fault(format!("wrong number of arguments to `{name}`")));
        }
        if spec.host {
            let mut cx = HostContext { program: self.program, output: &mut self.output };
            return self.host.call(name, &args, &mut cx);
        }
        let message = |idx: usize| args.get(idx).map(|m| format!(": {}", m.display())).unwrap_or_default();
        Ok(match name {
            "print" => {
                let line = args.iter().map(Value::display).collect::<Vec<_>>().join(" ");
                self.output.push_str(&line);
                self.output.push('\n');
                Value::Null
            }
            "str" => Value::str(&args[0].display()),
            "len" => match &args[0] {
                Value::Str(s) => Value::Int(s.chars().count() as i64),
                Value::List(l) => Value::Int(l.read(|v| v.len()) as i64),
                Value::Map(m) => Value::Int(m.read(|m| m.len()) as i64),
                other => return Err(RuntimeError::fault(format!("len of {}", other.type_name()))),
            },
            "int" => match &args[0] {
                Value::Int(i) => Value::Int(*i),
                Value::Float(f) if f.is_finite() => Value::Int(f.trunc() as i64),
                Value::Str(s) => {
                    Value::Int(s.trim().parse().map_err(|_| RuntimeError::fault(format!("not an integer: `{s}`")))?)
                }
                other => return Err(RuntimeError::fault(format!("cannot convert {} to int", other.type_name()))),
            },
            "float" => match &args[0] {
                Value::Int(i) => Value::Float(*i as f64),
                Value::Float(f) => Value::Float(*f),
                other => return Err(RuntimeError::fault(format!("cannot convert {} to float", other.type_name()))),
            },
            "type_of" => Value::str(&args[0].type_name()),
            "abs" => match &args[0] {
                Value::Int(i) => Value::Int(i.checked_abs().ok_or_else(|| RuntimeError::fault("integer overflow"))?),
                Value::Float(f) => Value::Float(f.abs()),
                other => return Err(RuntimeError::fault(format!("abs of {}", other.type_name()))),
            },
            "min" | "max" => {
                let less = matches!(self.binary(BinOp::Lt, args[0].clone(), args[1].clone())?, Value::Bool(true));
                let pick_first = if name == "min" { less } else { !less };
                if pick_first {
                    args[0].clone()
                } else {
                    args[1].clone()
                }
            }
            "range" => {
                let (from, to) = (expect_int(&args[0])?, expect_int(&args[1])?);
                if to.saturating_sub(from) > 10_000_000 {
                    return Err(RuntimeError::fault("range too large"));
                }
                Value::list((from..to).map(Value::Int).collect())
            }
            "rand_int" => {
                let bound = expect_int(&args[0])?;
                if bound <= 0 {
                    return Err(RuntimeError::fault("rand_int bound must be positive"));
                }
                Value::Int(self.rng.gen_range(0..bound))
            }
            "rand_float" => Value::Float(self.rng.gen::<f64>()),
            "resource" => Value::resource(&expect_str(&args[0])?),
            "assert" => match &args[0] {
                Value::Bool(true) => Value::Null,
                Value::Bool(false) => return Err(RuntimeError::Assertion(format!("assert{}", message(1)))),
                other => return Err(RuntimeError::fault(format!("assert on {}", other.type_name()))),
            },
            "assert_eq" => {
                if !self.equal(&args[0], &args[1])? {
                    return Err(RuntimeError::Assertion(format!(
                        "expected {} but was {}{}",
                        args[0].display(),
                        args[1].display(),
                        message(2)
                    )));
                }
                Value::Null
            }
            "assert_ne" => {
                if self.equal(&args[0], &args[1])? {
                    return Err(RuntimeError::Assertion(format!(
                        "expected a value different from {}{}",
                        args[0].display(),
                        message(2)
                    )));
                }
                Value::Null
            }
            _ => return Err(RuntimeError::fault(format!("builtin `{name}` not implemented"))),
        })
    }
}

fn as_float(v: &Value) -> f64 {
    match v {
        Value::Int(i) => *i as f64,
        Value::Float(f) => *f,
        _ => f64::NAN,
    }
}

fn expect_int(v: &Value) -> Eval<i64> {
    match v {
        Value::Int(i) => Ok(*i),
        other => Err(RuntimeError::fault(format!("expected int, got {}", other.type_name()))),
    }
}

fn expect_str(v: &Value) -> Eval<Arc<str>> {
    match v {
        Value::Str(s) => Ok(s.clone()),
        other => Err(RuntimeError::fault(format!("expected string, got {}", other.type_name()))),
    }
}

fn list_index(idx: &Value, len: usize) -> Eval<usize> {
    let i = expect_int(idx)?;
    if i < 0 || i as usize >= len {
        return Err(RuntimeError::fault(format!("index {i} out of bounds for length {len}")));
    }
    Ok(i as usize)
}

fn map_key(v: &Value) -> Eval<MapKey> {
    MapKey::from_value(v).ok_or_else(|| RuntimeError::fault(format!("{} cannot be a map key", v.type_name())))
}

/// Builds a fresh object of `class` with every declared field set to null.
pub fn blank_object(program: &Program, class: &str) -> Option<Value> {
    let info = program.class(class)?.info.clone();
    let fields = info.fields.iter().map(|f| (f.name.clone(), Value::Null)).collect();
    Some(Value::Object(crate::value::Node::new(Object { class: info, fields })))
}
