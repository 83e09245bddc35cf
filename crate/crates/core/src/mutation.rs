//! Extreme mutation: replace a method body with a trivial return and see
//! whether any test notices.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use prodcarve_lang::project::{file_role, FileRole};
use prodcarve_lang::{Diagnostic, Program};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, TestVerdict};
use crate::instrument::render_diags;
use crate::model::{render_target_list, MethodDescriptor, MethodId, ReturnShape};
use crate::runtime::RuntimeHost;

pub const TARGETS_FILE: &str = "targets.list";
pub const CLASSIFICATION_FILE: &str = "classification.json";
pub const DEFAULT_VARIANT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Error)]
pub enum MutationError {
    #[error("subject does not compile: {}", render_diags(.0))]
    ParseFailure(Vec<Diagnostic>),
    #[error("baseline suite fails: test {test}: {message}")]
    BaselineSuiteFails { test: String, message: String },
    #[error("{method} returns `{ty}`, which no extreme variant can instantiate")]
    UnsupportedShape { method: MethodId, ty: String },
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
}

/// The trivial body a variant substitutes.
#[derive(Debug, Clone, PartialEq)]
pub enum Replacement {
    EmptyBody,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(&'static str),
    Null,
    EmptyList,
    EmptyMap,
}

impl fmt::Display for Replacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Replacement::EmptyBody => Ok(()),
            Replacement::Bool(b) => write!(f, "return {b};"),
            Replacement::Int(i) => write!(f, "return {i};"),
            Replacement::Float(x) => write!(f, "return {x:?};"),
            Replacement::Str(s) => write!(f, "return {};", prodcarve_lang::lexer::quote_string(s)),
            Replacement::Null => write!(f, "return null;"),
            Replacement::EmptyList => write!(f, "return [];"),
            Replacement::EmptyMap => write!(f, "return {{}};"),
        }
    }
}

impl Replacement {
    /// The method body the variant installs, braces included.
    pub fn body(&self) -> String {
        match self {
            Replacement::EmptyBody => "{ }".to_string(),
            other => format!("{{ {other} }}"),
        }
    }
}

impl Serialize for Replacement {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.body())
    }
}

impl<'de> Deserialize<'de> for Replacement {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use Replacement::*;
        let body = String::deserialize(d)?;
        let catalog = [
            EmptyBody,
            Bool(true),
            Bool(false),
            Int(0),
            Int(1),
            Int(-1),
            Float(0.0),
            Float(1.0),
            Float(-1.0),
            Null,
            Str("A"),
            Str(""),
            EmptyList,
            EmptyMap,
        ];
        catalog
            .into_iter()
            .find(|r| r.body() == body)
            .ok_or_else(|| serde::de::Error::custom(format!("`{body}` is not an extreme variant body")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantOutcome {
    Detected,
    Survived,
    NotCovered,
    CompileFailed,
    /// The covering tests did not finish within the variant timeout. Counted
    /// neither as detected nor as survived.
    TimedOut,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtremeVariant {
    pub method: MethodId,
    pub replacement: Replacement,
    pub outcome: VariantOutcome,
    /// First test that failed, for detected variants.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detected_by: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetStatus {
    PseudoTested,
    WellTested,
    NotCovered,
}

impl fmt::Display for TargetStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetStatus::PseudoTested => "pseudo-tested",
            TargetStatus::WellTested => "well-tested",
            TargetStatus::NotCovered => "not-covered",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetStatusRecord {
    pub method: MethodId,
    pub covered: bool,
    /// Tests that invoke the method.
    pub covering_tests: usize,
    pub variants: Vec<ExtremeVariant>,
    /// `None` when the method was excluded (unsupported return shape).
    pub status: Option<TargetStatus>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub excluded: Option<String>,
}

/// Public instance methods of classes declared under `src/`.
pub fn enumerate_candidates(program: &Program) -> Vec<MethodDescriptor> {
    let mut out = Vec::new();
    for class in program.classes() {
        if file_role(&program.files[class.file].path) != FileRole::Source {
            continue;
        }
        for m in &class.decl.methods {
            let d = MethodDescriptor::from_decl(&class.container, &class.decl.name, m);
            if d.is_eligible() {
                out.push(d);
            }
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

pub fn generate_variants(m: &MethodDescriptor) -> Result<Vec<Replacement>, MutationError> {
    use Replacement::*;
    Ok(match m.return_shape {
        ReturnShape::Unit => vec![EmptyBody],
        ReturnShape::Boolean => vec![Bool(true), Bool(false)],
        ReturnShape::IntegerLike => vec![Int(0), Int(1), Int(-1)],
        ReturnShape::FloatLike => vec![Float(0.0), Float(1.0), Float(-1.0)],
        ReturnShape::String => vec![Null, Str("A"), Str("")],
        ReturnShape::Reference => vec![Null],
        ReturnShape::Collection if m.return_type == "map" => vec![EmptyMap],
        ReturnShape::Collection => vec![EmptyList],
        ReturnShape::Dynamic => {
            return Err(MutationError::UnsupportedShape { method: m.id.clone(), ty: m.return_type.clone() })
        }
    })
}

/// A project snapshot plus the tests that make up its suite.
#[derive(Debug, Clone)]
pub struct Suite {
    pub sources: Vec<(String, String)>,
    /// Directory `load_resource` paths resolve against.
    pub resource_root: PathBuf,
    /// Test ids to run; `None` runs every test in the project.
    pub tests: Option<BTreeSet<String>>,
}

impl Suite {
    pub fn load(root: &Path) -> Result<Suite, MutationError> {
        let sources = prodcarve_lang::project::read_sources(root).map_err(|e| match e {
            prodcarve_lang::ProjectError::Io { path, source } => MutationError::Io(path.display().to_string(), source),
            prodcarve_lang::ProjectError::Compile(d) => MutationError::ParseFailure(d),
        })?;
        Ok(Suite { sources, resource_root: root.to_path_buf(), tests: None })
    }

    pub fn program(&self) -> Result<Program, MutationError> {
        Program::build(self.sources.clone()).map_err(MutationError::ParseFailure)
    }

    fn selected<'p>(&self, program: &'p Program) -> Vec<&'p prodcarve_lang::TestCase> {
        program.tests().iter().filter(|t| self.tests.as_ref().is_none_or(|s| s.contains(&t.id))).collect()
    }

    fn host(&self) -> RuntimeHost {
        RuntimeHost::new().with_resource_root(&self.resource_root)
    }
}

#[derive(Debug, Clone)]
pub struct ClassifyConfig {
    pub variant_timeout: Duration,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig { variant_timeout: DEFAULT_VARIANT_TIMEOUT }
    }
}

/// Runs the suite once per test and returns, per `Class.method`, the ids of
/// the tests that enter it.
pub fn baseline_coverage(suite: &Suite, program: &Program) -> Result<BTreeMap<String, Vec<String>>, MutationError> {
    let host = suite.host();
    let tests = suite.selected(program);
    let runs: Vec<_> = exec::pool().install(|| {
        tests
            .par_iter()
            .map(|t| (t.id.clone(), exec::run_test(program, &host, t, exec::test_seed(&t.id, 0, 0), None, true)))
            .collect()
    });
    let mut coverage: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (id, run) in runs {
        match run.verdict {
            TestVerdict::Pass => {}
            TestVerdict::Fail(message) => return Err(MutationError::BaselineSuiteFails { test: id, message }),
            TestVerdict::TimedOut => {
                return Err(MutationError::BaselineSuiteFails { test: id, message: "timed out".into() })
            }
        }
        for m in run.coverage {
            coverage.entry(m).or_default().push(id.clone());
        }
    }
    Ok(coverage)
}

/// Classifies every candidate. The suite must pass unmutated.
pub fn classify_targets(
    suite: &Suite,
    candidates: &[MethodDescriptor],
    cfg: &ClassifyConfig,
) -> Result<Vec<TargetStatusRecord>, MutationError> {
    let program = suite.program()?;
    let coverage = baseline_coverage(suite, &program)?;
    let mut jobs = Vec::new();
    let mut records = Vec::new();
    for m in candidates {
        let covering = coverage.get(&m.id.qualified_name()).cloned().unwrap_or_default();
        let mut record = TargetStatusRecord {
            method: m.id.clone(),
            covered: !covering.is_empty(),
            covering_tests: covering.len(),
            variants: Vec::new(),
            status: None,
            excluded: None,
        };
        match generate_variants(m) {
            Ok(replacements) => {
                for r in replacements {
                    jobs.push((records.len(), record.variants.len(), covering.clone()));
                    record.variants.push(ExtremeVariant {
                        method: m.id.clone(),
                        replacement: r,
                        outcome: VariantOutcome::NotCovered,
                        detected_by: None,
                    });
                }
            }
            Err(e) => record.excluded = Some(e.to_string()),
        }
        records.push(record);
    }
    let host = suite.host();
    let results: Vec<_> = exec::pool().install(|| {
        jobs.par_iter()
            .map(|(ri, vi, covering)| {
                let variant = &records[*ri].variants[*vi];
                run_variant(suite, &program, &host, variant, covering, cfg.variant_timeout)
            })
            .collect()
    });
    for ((ri, vi, _), (outcome, detected_by)) in jobs.iter().zip(results) {
        let v = &mut records[*ri].variants[*vi];
        v.outcome = outcome;
        v.detected_by = detected_by;
    }
    for r in &mut records {
        if r.excluded.is_none() {
            r.status = Some(derive_status(r.covered, &r.variants));
        }
    }
    Ok(records)
}

pub fn derive_status(covered: bool, variants: &[ExtremeVariant]) -> TargetStatus {
    if !covered {
        TargetStatus::NotCovered
    } else if variants.iter().any(|v| v.outcome == VariantOutcome::Detected) {
        TargetStatus::WellTested
    } else {
        TargetStatus::PseudoTested
    }
}

fn run_variant(
    suite: &Suite,
    program: &Program,
    host: &RuntimeHost,
    variant: &ExtremeVariant,
    covering: &[String],
    timeout: Duration,
) -> (VariantOutcome, Option<String>) {
    if covering.is_empty() {
        return (VariantOutcome::NotCovered, None);
    }
    let Some(mutated) = splice_variant(&suite.sources, program, variant) else {
        return (VariantOutcome::CompileFailed, None);
    };
    let Ok(mutant) = Program::build(mutated) else {
        return (VariantOutcome::CompileFailed, None);
    };
    // Each test gets the full timeout, and a hang does not stop the remaining
    // tests: adding tests can then only add chances of detection.
    let mut timed_out = false;
    for id in covering {
        let Some(test) = mutant.test(id) else { continue };
        let deadline = Instant::now() + timeout;
        match exec::run_test(&mutant, host, test, exec::test_seed(id, 0, 0), Some(deadline), false).verdict {
            TestVerdict::Pass => {}
            TestVerdict::Fail(_) => return (VariantOutcome::Detected, Some(id.clone())),
            TestVerdict::TimedOut => timed_out = true,
        }
    }
    if timed_out {
        (VariantOutcome::TimedOut, None)
    } else {
        (VariantOutcome::Survived, None)
    }
}

/// A copy of the project sources with the variant's body installed.
fn splice_variant(
    sources: &[(String, String)],
    program: &Program,
    v: &ExtremeVariant,
) -> Option<Vec<(String, String)>> {
    let class = program.class(&v.method.class)?;
    let decl = class.decl.methods.iter().find(|m| m.name == v.method.method && !m.is_static)?;
    let path = &program.files[class.file].path;
    let mut out = sources.to_vec();
    let (_, text) = out.iter_mut().find(|(p, _)| p == path)?;
    let span = decl.body.span;
    text.replace_range(span.start..span.end, &v.replacement.body());
    Some(out)
}

/// Methods classified pseudo-tested, in id order.
pub fn pseudo_tested(records: &[TargetStatusRecord]) -> Vec<MethodId> {
    records.iter().filter(|r| r.status == Some(TargetStatus::PseudoTested)).map(|r| r.method.clone()).collect()
}

/// Writes `targets.list` (the pseudo-tested methods) and `classification.json`.
pub fn write_classification(out: &Path, records: &[TargetStatusRecord]) -> std::io::Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(TARGETS_FILE), render_target_list(&pseudo_tested(records)))?;
    std::fs::write(out.join(CLASSIFICATION_FILE), serde_json::to_string_pretty(records)?)
}
