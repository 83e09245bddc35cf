//! Differential unit test generation from unique object profiles.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use prodcarve_lang::ast::TypeName;
use prodcarve_lang::lexer::quote_string;
use prodcarve_lang::Program;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{decode_str, Shape};
use crate::model::{MethodId, ObjectProfile, SerializedValue, ValueKind, DEFAULT_INLINE_THRESHOLD};

pub const GENERATED_DIR: &str = "tests/generated";
pub const SUPPORT_FILE: &str = "tests/generated/support.sl";
pub const RESOURCES_DIR: &str = "resources";
pub const REPORT_FILE: &str = "synthesis-report.json";

/// The helper every generated container relies on. It only wraps the codec
/// builtins so that tests read uniformly.
pub const SUPPORT_SOURCE: &str = r#"// Generated. Loads a canonical value stored next to the generated tests.
fn carved_load(path: string, shape: string) -> any {
    return deserialize(load_resource(path), shape);
}
"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AssertMode {
    /// Compare the canonical serialization of the actual result with the
    /// recorded bytes.
    #[default]
    DeepSerial,
    /// Compare a deserialized expected value with the actual one using the
    /// subject language's own equality.
    NativeEq,
}

impl fmt::Display for AssertMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AssertMode::DeepSerial => "deep-serial",
            AssertMode::NativeEq => "native-eq",
        })
    }
}

impl FromStr for AssertMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deep-serial" => Ok(AssertMode::DeepSerial),
            "native-eq" => Ok(AssertMode::NativeEq),
            other => Err(format!("unknown assert mode `{other}` (expected deep-serial or native-eq)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub inline_threshold: usize,
    pub mode: AssertMode,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { inline_threshold: DEFAULT_INLINE_THRESHOLD, mode: AssertMode::default() }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SynthError {
    #[error("profile {seq} of {method} cannot be reconstructed: {reason}")]
    UnreconstructibleProfile { method: MethodId, seq: u64, reason: String },
    #[error("{0} does not name a public instance method of the subject")]
    UnknownMethod(MethodId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceBlob {
    /// Path relative to the generated tree's root.
    pub path: String,
    pub bytes: String,
}

#[derive(Debug, Clone)]
pub struct TestCaseArtifact {
    pub method: MethodId,
    pub name: String,
    /// The `test fn` item, without the container around it.
    pub source: String,
    pub resources: Vec<ResourceBlob>,
    pub mode: AssertMode,
    pub seq: u64,
}

/// What synthesis needs to know about a target method.
#[derive(Debug, Clone)]
pub struct SynthTarget {
    pub id: MethodId,
    pub param_names: Vec<String>,
    pub param_types: Vec<TypeName>,
    pub return_type: TypeName,
}

impl SynthTarget {
    pub fn resolve(program: &Program, id: &MethodId) -> Result<SynthTarget, SynthError> {
        let decl = program
            .class(&id.class)
            .filter(|c| c.container == id.container)
            .and_then(|c| c.method(&id.method))
            .filter(|m| m.is_pub && !m.is_static && m.params.len() == id.arity)
            .ok_or_else(|| SynthError::UnknownMethod(id.clone()))?;
        Ok(SynthTarget {
            id: id.clone(),
            param_names: decl.params.iter().map(|p| p.name.clone()).collect(),
            param_types: decl.params.iter().map(|p| p.ty.clone()).collect(),
            return_type: decl.ret.clone(),
        })
    }

    fn result_type(&self) -> TypeName {
        match &self.return_type {
            TypeName::Void => TypeName::Any,
            t => t.clone(),
        }
    }
}

/// `test_<method>_<key prefix>`.
pub fn base_test_name(p: &ObjectProfile) -> String {
    format!("test_{}_{}", p.method.method, p.key().prefix8())
}

/// Makes names unique by suffixing repeats `_2`, `_3`, ... in input order.
pub fn assign_names(bases: &[String]) -> Vec<String> {
    let mut seen: HashMap<&str, u32> = HashMap::new();
    bases
        .iter()
        .map(|b| {
            let n = seen.entry(b.as_str()).or_insert(0);
            *n += 1;
            if *n == 1 {
                b.clone()
            } else {
                format!("{b}_{n}")
            }
        })
        .collect()
}

const RESERVED: [&str; 3] = ["receiving", "actual", "expected"];

fn local_name(param: &str) -> String {
    if RESERVED.contains(&param) {
        format!("{param}_arg")
    } else {
        param.to_string()
    }
}

/// Checks that every constituent decodes to the shape the method expects.
fn check_reconstructible(p: &ObjectProfile, target: &SynthTarget, program: &Program) -> Result<(), SynthError> {
    let fail = |what: &str, e: String| SynthError::UnreconstructibleProfile {
        method: p.method.clone(),
        seq: p.seq,
        reason: format!("{what}: {e}"),
    };
    let receiver_shape = Shape::Object(target.id.class.clone());
    match decode_str(p.receiving.as_str(), &receiver_shape, program) {
        Ok(v) if v.is_null() => return Err(fail("receiving", "null receiver".into())),
        Ok(_) => {}
        Err(e) => return Err(fail("receiving", e.to_string())),
    }
    if p.parameters.len() != target.param_types.len() {
        return Err(fail(
            "parameters",
            format!("{} recorded for arity {}", p.parameters.len(), target.param_types.len()),
        ));
    }
    for (i, (v, ty)) in p.parameters.iter().zip(&target.param_types).enumerate() {
        decode_str(v.as_str(), &Shape::of(ty), program).map_err(|e| fail(&format!("param-{i}"), e.to_string()))?;
    }
    decode_str(p.result.as_str(), &Shape::of(&target.result_type()), program)
        .map_err(|e| fail("returned", e.to_string()))?;
    Ok(())
}

/// Generates the test for one profile. `name` must be unique within the
/// method; it also names the profile's resource directory.
pub fn synthesize_test(
    p: &ObjectProfile,
    target: &SynthTarget,
    program: &Program,
    cfg: &SynthConfig,
    name: &str,
) -> Result<TestCaseArtifact, SynthError> {
    check_reconstructible(p, target, program)?;
    let suffix = name.strip_prefix(&format!("test_{}_", p.method.method)).unwrap_or(name);
    let dir = format!("{RESOURCES_DIR}/{}/{suffix}", p.method.file_stem());
    let mut resources = Vec::new();
    // Either an inline string literal or a `load_resource` call producing the
    // canonical text of one constituent.
    let mut text_of = |file: String, v: &SerializedValue| -> String {
        match v.kind(cfg.inline_threshold) {
            ValueKind::InlineCapable => quote_string(v.as_str()),
            ValueKind::ResourceRequired => {
                let path = format!("{dir}/{file}.ctxt");
                resources.push(ResourceBlob { path: path.clone(), bytes: v.as_str().to_string() });
                format!("load_resource({})", quote_string(&path))
            }
        }
    };
    let value_of = |text: String, ty: &TypeName| format!("deserialize({text}, {})", quote_string(&ty.to_string()));

    let mut body = String::new();
    let receiver_ty = TypeName::Class(target.id.class.clone());
    body.push_str(&format!(
        "    let receiving = {};\n",
        value_of(text_of("receiving".into(), &p.receiving), &receiver_ty)
    ));
    let mut args = Vec::new();
    for (i, v) in p.parameters.iter().enumerate() {
        let local = local_name(&target.param_names[i]);
        body.push_str(&format!(
            "    let {local} = {};\n",
            value_of(text_of(format!("param-{i}"), v), &target.param_types[i])
        ));
        args.push(local);
    }
    body.push_str(&format!("    let actual = receiving.{}({});\n", target.id.method, args.join(", ")));
    let expected = text_of("returned".into(), &p.result);
    match cfg.mode {
        AssertMode::DeepSerial => body.push_str(&format!("    assert_serial_eq({expected}, actual);\n")),
        AssertMode::NativeEq => {
            body.push_str(&format!("    let expected = {};\n", value_of(expected, &target.result_type())));
            body.push_str("    assert_eq(expected, actual);\n");
        }
    }
    let source = format!("test fn {name}() {{\n{body}}}\n");
    Ok(TestCaseArtifact {
        method: p.method.clone(),
        name: name.to_string(),
        source,
        resources,
        mode: cfg.mode,
        seq: p.seq,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodSynthesis {
    pub unique: usize,
    pub generated: usize,
    pub unreconstructible: usize,
    /// Ids of the emitted tests.
    pub tests: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub mode: AssertMode,
    pub inline_threshold: usize,
    pub methods: BTreeMap<MethodId, MethodSynthesis>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct GeneratedSuite {
    pub artifacts: BTreeMap<MethodId, Vec<TestCaseArtifact>>,
    pub report: SynthesisReport,
}

/// Path of the generated container for a class.
pub fn container_file(class: &str) -> String {
    format!("{GENERATED_DIR}/{class}Carved.sl")
}

/// Test id the interpreter assigns to a generated test.
pub fn test_id(class: &str, name: &str) -> String {
    format!("generated.{class}Carved::{name}")
}

/// Synthesizes tests for every method's unique profiles.
pub fn synthesize_suite(
    program: &Program,
    unique: &BTreeMap<MethodId, Vec<ObjectProfile>>,
    cfg: &SynthConfig,
) -> Result<GeneratedSuite, SynthError> {
    let mut out = GeneratedSuite {
        report: SynthesisReport { mode: cfg.mode, inline_threshold: cfg.inline_threshold, ..Default::default() },
        ..Default::default()
    };
    for (method, profiles) in unique {
        let target = SynthTarget::resolve(program, method)?;
        let names = assign_names(&profiles.iter().map(base_test_name).collect::<Vec<_>>());
        let mut entry = MethodSynthesis { unique: profiles.len(), ..Default::default() };
        let mut artifacts = Vec::new();
        for (p, name) in profiles.iter().zip(&names) {
            match synthesize_test(p, &target, program, cfg, name) {
                Ok(a) => {
                    entry.tests.push(test_id(&method.class, &a.name));
                    artifacts.push(a);
                }
                Err(e) => {
                    entry.unreconstructible += 1;
                    out.report.failures.push(e.to_string());
                }
            }
        }
        entry.generated = artifacts.len();
        out.report.methods.insert(method.clone(), entry);
        out.artifacts.insert(method.clone(), artifacts);
    }
    Ok(out)
}

impl GeneratedSuite {
    /// The generated test files, support file first. Empty when no test was
    /// generated.
    pub fn files(&self) -> Vec<(String, String)> {
        let mut by_class: BTreeMap<&str, Vec<&TestCaseArtifact>> = BTreeMap::new();
        for a in self.artifacts.values().flatten() {
            by_class.entry(&a.method.class).or_default().push(a);
        }
        if by_class.is_empty() {
            return Vec::new();
        }
        let mut files = vec![(SUPPORT_FILE.to_string(), SUPPORT_SOURCE.to_string())];
        for (class, tests) in by_class {
            let mut text = format!("// Generated differential tests for {class}.\n");
            for t in tests {
                text.push('\n');
                text.push_str(&t.source);
            }
            files.push((container_file(class), text));
        }
        files
    }

    pub fn resources(&self) -> impl Iterator<Item = &ResourceBlob> {
        self.artifacts.values().flatten().flat_map(|a| &a.resources)
    }

    pub fn test_count(&self) -> usize {
        self.artifacts.values().map(Vec::len).sum()
    }

    /// Writes the test files, resource files and report under `root`,
    /// replacing any earlier generated tree.
    pub fn emit(&self, root: &Path) -> std::io::Result<()> {
        for stale in [GENERATED_DIR, RESOURCES_DIR] {
            let p = root.join(stale);
            if p.exists() {
                std::fs::remove_dir_all(&p)?;
            }
        }
        std::fs::create_dir_all(root.join(GENERATED_DIR))?;
        for (path, text) in self.files() {
            std::fs::write(root.join(path), text)?;
        }
        for blob in self.resources() {
            let path = root.join(&blob.path);
            std::fs::create_dir_all(path.parent().expect("resource files live in a directory"))?;
            std::fs::write(path, &blob.bytes)?;
        }
        std::fs::write(root.join(REPORT_FILE), serde_json::to_string_pretty(&self.report)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::serialize_value;
    use crate::exec;
    use crate::runtime::RuntimeHost;
    use prodcarve_lang::{Interpreter, RunOptions, Value};

    const SRC: &str = r#"
class Table {
    field names: map;
    field id: int;
    pub fn getName(platform: int, actual: int) -> string {
        let key = str(platform) + "/" + str(actual);
        if (this.names.has(key)) { return this.names.get(key); }
        return null;
    }
    pub fn isEmpty() -> bool { return this.names.len() == 0; }
    pub fn ident() -> Ident { return new Ident { id: this.id }; }
}
class Ident { field id: int; }
"#;

    fn program() -> Program {
        Program::build(vec![("src/table.sl".into(), SRC.into())]).unwrap()
    }

    fn receiver(p: &Program, names: &[(&str, &str)]) -> SerializedValue {
        let mut m = BTreeMap::new();
        for (k, v) in names {
            m.insert(prodcarve_lang::MapKey::Str((*k).into()), Value::str(v));
        }
        let mut fields = BTreeMap::new();
        fields.insert("names".to_string(), Value::map(m));
        fields.insert("id".to_string(), Value::Int(7));
        serialize_value(&Value::object(p.class("Table").unwrap().info.clone(), fields)).unwrap()
    }

    fn profile(p: &Program, method: &str, params: &[&str], result: &str) -> ObjectProfile {
        ObjectProfile {
            method: MethodId::new("table", "Table", method, params.len()),
            seq: 1,
            receiving: receiver(p, &[("3/1", "LiberationSans")]),
            parameters: params.iter().map(|s| SerializedValue::from_canonical(*s)).collect(),
            result: SerializedValue::from_canonical(result),
        }
    }

    fn run(program: &Program, suite: &GeneratedSuite, root: &Path) -> Vec<(String, exec::TestVerdict)> {
        let mut sources: Vec<_> = program.files.iter().map(|f| (f.path.clone(), f.text.clone())).collect();
        sources.extend(suite.files());
        let all = Program::build(sources).unwrap();
        let host = RuntimeHost::new().with_resource_root(root);
        exec::pool().install(|| {
            all.tests().iter().map(|t| (t.id.clone(), exec::run_test(&all, &host, t, 1, None, false).verdict)).collect()
        })
    }

    #[test]
    fn inline_test_matches_template() {
        let p = program();
        let prof = profile(&p, "getName", &["3", "1"], "\"LiberationSans\"");
        let target = SynthTarget::resolve(&p, &prof.method).unwrap();
        let a = synthesize_test(&prof, &target, &p, &SynthConfig::default(), "test_getName_x").unwrap();
        assert!(a.resources.is_empty());
        let expected = format!(
            "test fn test_getName_x() {{\n    let receiving = deserialize({}, \"Table\");\n    let platform = deserialize(\"3\", \"int\");\n    let actual_arg = deserialize(\"1\", \"int\");\n    let actual = receiving.getName(platform, actual_arg);\n    assert_serial_eq(\"\\\"LiberationSans\\\"\", actual);\n}}\n",
            quote_string(prof.receiving.as_str())
        );
        assert_eq!(a.source, expected);
    }

    #[test]
    fn large_constituents_go_to_resource_files() {
        let p = program();
        let mut prof = profile(&p, "getName", &["3", "1"], "\"LiberationSans\"");
        let long = "N".repeat(2000);
        prof.receiving = receiver(&p, &[("3/1", "LiberationSans"), ("9/9", &long)]);
        let target = SynthTarget::resolve(&p, &prof.method).unwrap();
        let a = synthesize_test(&prof, &target, &p, &SynthConfig::default(), "test_getName_abcd0123").unwrap();
        assert_eq!(a.resources.len(), 1);
        assert_eq!(a.resources[0].path, "resources/table.Table.getName@2/abcd0123/receiving.ctxt");
        assert!(a.source.contains("load_resource(\"resources/table.Table.getName@2/abcd0123/receiving.ctxt\")"));
        for r in &a.resources {
            assert!(a.source.contains(&r.path));
        }
    }

    #[test]
    fn generated_tests_pass_and_use_resources() {
        let p = program();
        let mut prof = profile(&p, "getName", &["3", "1"], "\"LiberationSans\"");
        prof.receiving = receiver(&p, &[("3/1", "LiberationSans"), ("9/9", &"N".repeat(2000))]);
        let mut unique = BTreeMap::new();
        unique.insert(prof.method.clone(), vec![prof.clone()]);
        unique.insert(MethodId::new("table", "Table", "isEmpty", 0), vec![profile(&p, "isEmpty", &[], "false")]);
        let suite = synthesize_suite(&p, &unique, &SynthConfig::default()).unwrap();
        assert_eq!(suite.test_count(), 2);
        let dir = tempfile::tempdir().unwrap();
        suite.emit(dir.path()).unwrap();
        let verdicts = run(&p, &suite, dir.path());
        assert!(verdicts.iter().all(|(_, v)| v.passed()), "{verdicts:?}");
        let report: SynthesisReport =
            serde_json::from_slice(&std::fs::read(dir.path().join(REPORT_FILE)).unwrap()).unwrap();
        assert_eq!(report.methods[&prof.method].generated, 1);
    }

    #[test]
    fn native_eq_fails_without_deep_equality() {
        let p = program();
        let mut prof = profile(&p, "ident", &[], "Ident#0{id:7}");
        prof.method = MethodId::new("table", "Table", "ident", 0);
        let mut unique = BTreeMap::new();
        unique.insert(prof.method.clone(), vec![prof]);
        let dir = tempfile::tempdir().unwrap();
        let deep = synthesize_suite(&p, &unique, &SynthConfig::default()).unwrap();
        assert!(run(&p, &deep, dir.path())[0].1.passed());
        let native =
            synthesize_suite(&p, &unique, &SynthConfig { mode: AssertMode::NativeEq, ..Default::default() }).unwrap();
        assert!(native.artifacts.values().next().unwrap()[0].source.contains("assert_eq(expected, actual);"));
        assert!(!run(&p, &native, dir.path())[0].1.passed());
    }

    #[test]
    fn unreconstructible_profiles_are_counted() {
        let p = program();
        let bad = profile(&p, "getName", &["\"three\"", "1"], "null");
        let mut unique = BTreeMap::new();
        unique.insert(bad.method.clone(), vec![bad, profile(&p, "getName", &["3", "1"], "\"LiberationSans\"")]);
        let suite = synthesize_suite(&p, &unique, &SynthConfig::default()).unwrap();
        let m = suite.report.methods.values().next().unwrap();
        assert_eq!((m.unique, m.generated, m.unreconstructible), (2, 1, 1));
    }

    #[test]
    fn name_collisions_get_suffixes() {
        let names = assign_names(&["test_f_aa".into(), "test_f_bb".into(), "test_f_aa".into(), "test_f_aa".into()]);
        assert_eq!(names, ["test_f_aa", "test_f_bb", "test_f_aa_2", "test_f_aa_3"]);
        // Forced collision end to end: two distinct profiles under one base name.
        let p = program();
        let a = profile(&p, "getName", &["3", "1"], "\"LiberationSans\"");
        let b = profile(&p, "getName", &["4", "1"], "null");
        let target = SynthTarget::resolve(&p, &a.method).unwrap();
        let cfg = SynthConfig { inline_threshold: 0, ..Default::default() };
        let names = assign_names(&["test_getName_same".into(), "test_getName_same".into()]);
        let ta = synthesize_test(&a, &target, &p, &cfg, &names[0]).unwrap();
        let tb = synthesize_test(&b, &target, &p, &cfg, &names[1]).unwrap();
        assert_ne!(ta.name, tb.name);
        assert!(ta.resources.iter().all(|r| tb.resources.iter().all(|s| s.path != r.path)));
    }

    #[test]
    fn empty_input_empty_tree() {
        let suite = synthesize_suite(&program(), &BTreeMap::new(), &SynthConfig::default()).unwrap();
        assert!(suite.files().is_empty());
    }

    #[test]
    fn emitted_test_reproduces_interpreter_result() {
        // The recorded result comes from actually running the method.
        let p = program();
        let prof = profile(&p, "getName", &["3", "1"], "null");
        let host = RuntimeHost::new();
        let recv = decode_str(prof.receiving.as_str(), &Shape::Any, &p).unwrap();
        let got = Interpreter::new(&p, &host, RunOptions::default())
            .call_method(&recv, "getName", vec![Value::Int(3), Value::Int(1)])
            .unwrap();
        assert_eq!(serialize_value(&got).unwrap().as_str(), "\"LiberationSans\"");
    }
}
