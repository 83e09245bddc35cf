//! Host builtins for running subject code: probes, codec access, resource
//! files and external services.

use std::collections::{BTreeMap, HashMap};
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;
use prodcarve_lang::value::Resource;
use prodcarve_lang::{Host, HostContext, RuntimeError, Value};

use crate::codec::{decode_str, serialize_value, SerializeError, Shape};
use crate::collector::Collector;
use crate::model::{MethodId, SerializedValue};

/// Where a subject's production-only services are described, relative to the
/// subject root.
pub const SERVICES_FILE: &str = "workload/services.json";

/// Canned responses of external services, keyed by service name and then by
/// the comma-joined display form of the call arguments.
#[derive(Debug, Clone, Default)]
pub struct ServiceTable(BTreeMap<String, BTreeMap<String, serde_json::Value>>);

impl ServiceTable {
    /// Loads the subject's service table; a subject without one has no services.
    pub fn load(subject_root: &Path) -> std::io::Result<ServiceTable> {
        let path = subject_root.join(SERVICES_FILE);
        if !path.exists() {
            return Ok(ServiceTable::default());
        }
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map(ServiceTable).map_err(std::io::Error::other)
    }

    fn call(&self, name: &str, args: &[Value]) -> Result<Value, RuntimeError> {
        let key = args.iter().map(Value::display).collect::<Vec<_>>().join(",");
        let answer = self
            .0
            .get(name)
            .and_then(|s| s.get(&key))
            .ok_or_else(|| RuntimeError::fault(format!("service `{name}` has no answer for ({key})")))?;
        Ok(match answer {
            serde_json::Value::Bool(b) => Value::Bool(*b),
            serde_json::Value::Number(n) => {
                n.as_i64().map(Value::Int).unwrap_or_else(|| Value::Float(n.as_f64().unwrap_or(0.0)))
            }
            serde_json::Value::String(s) => Value::str(s),
            _ => Value::Null,
        })
    }
}

struct ProbeToken {
    method: MethodId,
    receiving: Result<SerializedValue, SerializeError>,
    parameters: Result<Vec<SerializedValue>, SerializeError>,
}

#[derive(Default)]
pub struct RuntimeHost {
    collector: Option<Arc<Collector>>,
    services: Option<ServiceTable>,
    resource_root: Option<PathBuf>,
    ids: Mutex<HashMap<String, MethodId>>,
}

impl RuntimeHost {
    /// A host for test runs: no collection, no external services.
    pub fn new() -> Self {
        RuntimeHost::default()
    }

    pub fn with_collector(mut self, collector: Arc<Collector>) -> Self {
        self.collector = Some(collector);
        self
    }

    /// Makes external services reachable, as they are in production.
    pub fn with_services(mut self, services: ServiceTable) -> Self {
        self.services = Some(services);
        self
    }

    /// Directory that `load_resource` paths are relative to.
    pub fn with_resource_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.resource_root = Some(root.into());
        self
    }

    fn method_id(&self, text: &str) -> Result<MethodId, RuntimeError> {
        if let Some(id) = self.ids.lock().get(text) {
            return Ok(id.clone());
        }
        let id: MethodId = text.parse().map_err(|e| RuntimeError::fault(format!("{e}")))?;
        self.ids.lock().insert(text.to_string(), id.clone());
        Ok(id)
    }

    fn probe_enter(&self, args: &[Value]) -> Result<Value, RuntimeError> {
        let Some(_) = &self.collector else {
            return Ok(Value::Null);
        };
        let method = self.method_id(&expect_str(&args[0], "probe_enter")?)?;
        let receiving = serialize_value(&args[1]);
        let parameters = match &args[2] {
            Value::List(items) => items.read(|items| items.clone()).iter().map(serialize_value).collect(),
            other => {
                return Err(RuntimeError::fault(format!(
                    "probe_enter expects a parameter list, got {}",
                    other.type_name()
                )))
            }
        };
        let token = ProbeToken { method, receiving, parameters };
        Ok(Value::Resource(Arc::new(Resource { kind: "probe".into(), payload: Some(Box::new(token)) })))
    }

    fn probe_exit(&self, args: &[Value]) -> Result<Value, RuntimeError> {
        let result = args[1].clone();
        if let (Some(collector), Value::Resource(r)) = (&self.collector, &args[0]) {
            if let Some(token) = r.payload.as_ref().and_then(|p| p.downcast_ref::<ProbeToken>()) {
                collector.record_invocation(&token.method, token.receiving.clone(), token.parameters.clone(), &result);
            }
        }
        Ok(result)
    }

    fn load_resource(&self, path: &str) -> Result<Value, RuntimeError> {
        let rel = Path::new(path);
        if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
            return Err(RuntimeError::fault(format!(
                "resource path `{path}` must be relative and stay inside the project"
            )));
        }
        let root = self.resource_root.as_deref().unwrap_or(Path::new("."));
        std::fs::read_to_string(root.join(rel))
            .map(|s| Value::str(&s))
            .map_err(|e| RuntimeError::fault(format!("cannot read resource `{path}`: {e}")))
    }
}

fn expect_str(v: &Value, builtin: &str) -> Result<Arc<str>, RuntimeError> {
    match v {
        Value::Str(s) => Ok(s.clone()),
        other => Err(RuntimeError::fault(format!("{builtin} expects a string, got {}", other.type_name()))),
    }
}

impl Host for RuntimeHost {
    fn call(&self, name: &str, args: &[Value], cx: &mut HostContext<'_>) -> Result<Value, RuntimeError> {
        match name {
            "probe_enter" => self.probe_enter(args),
            "probe_exit" => self.probe_exit(args),
            "serialize" => serialize_value(&args[0])
                .map(|s| Value::str(s.as_str()))
                .map_err(|e| RuntimeError::fault(e.to_string())),
            "deserialize" => {
                let text = expect_str(&args[0], name)?;
                let shape = Shape::parse(&expect_str(&args[1], name)?);
                decode_str(&text, &shape, cx.program).map_err(|e| RuntimeError::fault(e.to_string()))
            }
            "load_resource" => self.load_resource(&expect_str(&args[0], name)?),
            "assert_serial_eq" => {
                let expected = expect_str(&args[0], name)?;
                let actual = serialize_value(&args[1]).map_err(|e| RuntimeError::fault(e.to_string()))?;
                if *expected == *actual.as_str() {
                    return Ok(Value::Null);
                }
                let context = args.get(2).map(|m| format!("{}: ", m.display())).unwrap_or_default();
                Err(RuntimeError::Assertion(format!("{context}expected {expected}, got {}", actual.as_str())))
            }
            "service" => {
                let service = expect_str(&args[0], name)?;
                match &self.services {
                    Some(table) => table.call(&service, &args[1..]),
                    None => Err(RuntimeError::fault(format!("service `{service}` is unavailable in this environment"))),
                }
            }
            other => Err(RuntimeError::fault(format!("builtin `{other}` is not available in this runtime"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use prodcarve_lang::{Interpreter, Program, RunOptions};

    fn program(src: &str) -> Program {
        Program::build(vec![("src/m.sl".into(), src.into())]).unwrap()
    }

    #[test]
    fn codec_builtins_round_trip() {
        let p = program(
            r#"
            class Box { field v: list; transient field c: map; }
            fn go() -> string {
                let b = new Box { v: [1, "two"], c: {1: 2} };
                let text = serialize(b);
                let back = deserialize(text, "Box");
                assert_serial_eq(text, back);
                return text;
            }
            "#,
        );
        let host = RuntimeHost::new();
        let mut it = Interpreter::new(&p, &host, RunOptions::default());
        let out = it.call_function("go", vec![]).unwrap();
        assert_eq!(out.display(), r#"Box#0{v:list#1[1,"two"]}"#);
    }

    #[test]
    fn serial_assertion_failure_is_an_assertion() {
        let p = program(r#"fn go() { assert_serial_eq("1", 2, "ctx"); }"#);
        let host = RuntimeHost::new();
        let err = Interpreter::new(&p, &host, RunOptions::default()).call_function("go", vec![]).unwrap_err();
        assert!(matches!(&err, RuntimeError::Assertion(m) if m == "ctx: expected 1, got 2"), "{err:?}");
    }

    #[test]
    fn services_exist_only_when_enabled() {
        let p = program(r#"fn go(s: string) -> string { return service("names", s, 2); }"#);
        let table: ServiceTable = ServiceTable(serde_json::from_str(r#"{"names": {"a,2": "Alpha"}}"#).unwrap());
        let prod = RuntimeHost::new().with_services(table);
        let out =
            Interpreter::new(&p, &prod, RunOptions::default()).call_function("go", vec![Value::str("a")]).unwrap();
        assert_eq!(out.display(), "Alpha");
        let test = RuntimeHost::new();
        assert!(Interpreter::new(&p, &test, RunOptions::default()).call_function("go", vec![Value::str("a")]).is_err());
    }

    #[test]
    fn resource_paths_stay_inside_root() {
        let host = RuntimeHost::new().with_resource_root("/tmp");
        assert!(host.load_resource("../etc/passwd").is_err());
        assert!(host.load_resource("/etc/passwd").is_err());
    }
}
