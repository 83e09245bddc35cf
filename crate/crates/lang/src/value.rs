//! Runtime values of the subject language.
//!
//! Containers and objects live behind `Arc<Node<_>>` so that workload threads
//! can share them. Every write bumps the node's version; observers that read a
//! node piecewise (the serializer) compare versions to detect concurrent
//! mutation.

use std::any::Any;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;

use crate::ast::{ClassDecl, TypeName};

/// Shape information of a class that values need at runtime.
#[derive(Debug)]
pub struct ClassInfo {
    pub name: String,
    /// Declared fields in declaration order.
    pub fields: Vec<FieldInfo>,
    /// Whether the class declares an `equals(other)` method.
    pub has_equals: bool,
}

#[derive(Debug, Clone)]
pub struct FieldInfo {
    pub name: String,
    pub ty: TypeName,
    pub transient: bool,
}

impl ClassInfo {
    pub fn from_decl(decl: &ClassDecl) -> ClassInfo {
        ClassInfo {
            name: decl.name.clone(),
            fields: decl
                .fields
                .iter()
                .map(|f| FieldInfo { name: f.name.clone(), ty: f.ty.clone(), transient: f.transient })
                .collect(),
            has_equals: decl.methods.iter().any(|m| m.name == "equals" && !m.is_static && m.params.len() == 1),
        }
    }

    pub fn field(&self, name: &str) -> Option<&FieldInfo> {
        self.fields.iter().find(|f| f.name == name)
    }
}

/// Looks up class metadata by name.
pub trait ClassResolver {
    fn resolve_class(&self, name: &str) -> Option<Arc<ClassInfo>>;
}

#[derive(Debug)]
pub struct Node<T> {
    version: AtomicU64,
    data: RwLock<T>,
}

impl<T> Node<T> {
    pub fn new(data: T) -> Arc<Self> {
        Arc::new(Node { version: AtomicU64::new(0), data: RwLock::new(data) })
    }

    pub fn version(&self) -> u64 {
        self.version.load(Ordering::Acquire)
    }

    pub fn read<R>(&self, f: impl FnOnce(&T) -> R) -> R {
        f(&self.data.read())
    }

    pub fn write<R>(&self, f: impl FnOnce(&mut T) -> R) -> R {
        let mut guard = self.data.write();
        let out = f(&mut guard);
        self.version.fetch_add(1, Ordering::AcqRel);
        out
    }
}

pub type ListRef = Arc<Node<Vec<Value>>>;
pub type MapRef = Arc<Node<BTreeMap<MapKey, Value>>>;
pub type ObjRef = Arc<Node<Object>>;

#[derive(Debug)]
pub struct Object {
    pub class: Arc<ClassInfo>,
    pub fields: BTreeMap<String, Value>,
}

// Long object chains (linked lists, parent pointers) would otherwise be torn
// down recursively and could exhaust the stack.
impl Drop for Object {
    fn drop(&mut self) {
        let mut pending: Vec<Value> = std::mem::take(&mut self.fields).into_values().collect();
        while let Some(v) = pending.pop() {
            match v {
                Value::Object(n) => {
                    if let Ok(node) = Arc::try_unwrap(n) {
                        pending.extend(std::mem::take(&mut node.data.into_inner().fields).into_values());
                    }
                }
                Value::List(n) => {
                    if let Ok(node) = Arc::try_unwrap(n) {
                        pending.extend(node.data.into_inner());
                    }
                }
                Value::Map(n) => {
                    if let Ok(node) = Arc::try_unwrap(n) {
                        pending.extend(node.data.into_inner().into_values());
                    }
                }
                _ => {}
            }
        }
    }
}

/// An opaque handle to something the subject cannot copy: sockets, threads,
/// host-side tokens. Never serializable.
pub struct Resource {
    pub kind: String,
    pub payload: Option<Box<dyn Any + Send + Sync>>,
}

impl fmt::Debug for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Resource({})", self.kind)
    }
}

/// Map keys are restricted to integers and strings; integers sort first.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MapKey {
    Int(i64),
    Str(String),
}

impl MapKey {
    pub fn from_value(v: &Value) -> Option<MapKey> {
        match v {
            Value::Int(i) => Some(MapKey::Int(*i)),
            Value::Str(s) => Some(MapKey::Str(s.to_string())),
            _ => None,
        }
    }

    pub fn to_value(&self) -> Value {
        match self {
            MapKey::Int(i) => Value::Int(*i),
            MapKey::Str(s) => Value::str(s),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(Arc<str>),
    List(ListRef),
    Map(MapRef),
    Object(ObjRef),
    Resource(Arc<Resource>),
}

impl Value {
    pub fn str(s: &str) -> Value {
        Value::Str(Arc::from(s))
    }

    pub fn list(items: Vec<Value>) -> Value {
        Value::List(Node::new(items))
    }

    pub fn map(entries: BTreeMap<MapKey, Value>) -> Value {
        Value::Map(Node::new(entries))
    }

    pub fn object(class: Arc<ClassInfo>, fields: BTreeMap<String, Value>) -> Value {
        Value::Object(Node::new(Object { class, fields }))
    }

    pub fn resource(kind: &str) -> Value {
        Value::Resource(Arc::new(Resource { kind: kind.to_string(), payload: None }))
    }

    pub fn type_name(&self) -> String {
        match self {
            Value::Null => "null".into(),
            Value::Bool(_) => "bool".into(),
            Value::Int(_) => "int".into(),
            Value::Float(_) => "float".into(),
            Value::Str(_) => "string".into(),
            Value::List(_) => "list".into(),
            Value::Map(_) => "map".into(),
            Value::Object(o) => o.read(|o| o.class.name.clone()),
            Value::Resource(r) => format!("resource<{}>", r.kind),
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    /// Identity for heap values, never true across distinct allocations.
    pub fn same_ref(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::List(a), Value::List(b)) => Arc::ptr_eq(a, b),
            (Value::Map(a), Value::Map(b)) => Arc::ptr_eq(a, b),
            (Value::Object(a), Value::Object(b)) => Arc::ptr_eq(a, b),
            (Value::Resource(a), Value::Resource(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }

    /// Human-facing rendering used by `print` and string concatenation.
    /// Not canonical and not cycle-safe beyond a fixed depth.
    pub fn display(&self) -> String {
        let mut out = String::new();
        self.display_into(&mut out, 0);
        out
    }

    fn display_into(&self, out: &mut String, depth: usize) {
        if depth > 8 {
            out.push_str("...");
            return;
        }
        match self {
            Value::Null => out.push_str("null"),
            Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Value::Int(i) => out.push_str(&i.to_string()),
            Value::Float(f) => out.push_str(&format!("{f:?}")),
            Value::Str(s) => out.push_str(s),
            Value::List(l) => {
                let items = l.read(|v| v.clone());
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    item.display_into(out, depth + 1);
                }
                out.push(']');
            }
            Value::Map(m) => {
                let entries = m.read(|m| m.clone());
                out.push('{');
                for (i, (k, v)) in entries.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    k.to_value().display_into(out, depth + 1);
                    out.push_str(": ");
                    v.display_into(out, depth + 1);
                }
                out.push('}');
            }
            Value::Object(o) => {
                let (name, fields) = o.read(|o| (o.class.name.clone(), o.fields.clone()));
                out.push_str(&name);
                out.push('{');
                for (i, (k, v)) in fields.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    out.push_str(k);
                    out.push_str(": ");
                    v.display_into(out, depth + 1);
                }
                out.push('}');
            }
            Value::Resource(r) => out.push_str(&format!("<resource {}>", r.kind)),
        }
    }
}
