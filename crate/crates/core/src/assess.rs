//! Running generated tests, filtering flaky ones, and measuring what they add.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use prodcarve_lang::project::{file_role, FileRole};
use prodcarve_lang::Program;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, TestVerdict};
use crate::instrument::render_diags;
use crate::model::{MethodDescriptor, MethodId};
use crate::mutation::{self, ClassifyConfig, MutationError, Suite, TargetStatus, TargetStatusRecord};
use crate::store::ProfileStats;
use crate::synth::{SynthesisReport, GENERATED_DIR, SUPPORT_FILE};

pub const REPORT_FILE: &str = "assessment-report.json";
pub const CSV_FILE: &str = "assessment-report.csv";
pub const DEFAULT_RUNS: u32 = 5;
pub const CSV_HEADER: &str =
    "method,invocations,collected,unique,generated_tests,passing,failing,flaky,status_before,status_after";

#[derive(Debug, Error)]
pub enum AssessError {
    #[error("no baseline classification for {0}")]
    BaselineMissing(MethodId),
    #[error("subject plus generated support does not compile: {0}")]
    CompileFailure(String),
    #[error(transparent)]
    Mutation(#[from] MutationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestOutcome {
    Pass,
    Fail,
    Flaky,
}

/// `pass` iff every run passed, `fail` iff every run failed, else `flaky`.
pub fn classify_runs(runs: &[bool]) -> TestOutcome {
    if runs.iter().all(|&r| r) {
        TestOutcome::Pass
    } else if runs.iter().all(|&r| !r) {
        TestOutcome::Fail
    } else {
        TestOutcome::Flaky
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestExecution {
    pub outcome: TestOutcome,
    pub runs: Vec<bool>,
    /// Failure message of the first failing run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cause: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContainerFailure {
    pub container: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SuiteExecution {
    pub tests: BTreeMap<String, TestExecution>,
    pub compile_failures: Vec<ContainerFailure>,
    /// Generated containers that compiled.
    #[serde(skip)]
    pub compiled: Vec<(String, String)>,
}

impl SuiteExecution {
    pub fn passing(&self) -> BTreeSet<String> {
        self.tests.iter().filter(|(_, t)| t.outcome == TestOutcome::Pass).map(|(id, _)| id.clone()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ExecuteConfig {
    pub runs: u32,
    pub test_timeout: Duration,
    pub resource_root: PathBuf,
}

fn is_generated(path: &str) -> bool {
    path.starts_with(&format!("{GENERATED_DIR}/"))
}

/// Runs every generated test `cfg.runs` times. Containers that do not compile
/// are reported and skipped; the rest are still assessed.
pub fn execute_suite(
    subject: &[(String, String)],
    generated: &[(String, String)],
    cfg: &ExecuteConfig,
) -> Result<SuiteExecution, AssessError> {
    let mut out = SuiteExecution::default();
    if generated.is_empty() {
        return Ok(out);
    }
    let support: Vec<_> = generated.iter().filter(|(p, _)| p == SUPPORT_FILE).cloned().collect();
    let mut base = subject.to_vec();
    base.extend(support.iter().cloned());
    Program::build(base.clone()).map_err(|d| AssessError::CompileFailure(render_diags(&d)))?;
    for (path, text) in generated.iter().filter(|(p, _)| p != SUPPORT_FILE) {
        let mut sources = base.clone();
        sources.push((path.clone(), text.clone()));
        match Program::build(sources) {
            Ok(_) => out.compiled.push((path.clone(), text.clone())),
            Err(d) => {
                out.compile_failures.push(ContainerFailure { container: path.clone(), message: render_diags(&d) })
            }
        }
    }
    out.compiled.splice(0..0, support);
    let mut sources = subject.to_vec();
    sources.extend(out.compiled.iter().cloned());
    let program = Program::build(sources).map_err(|d| AssessError::CompileFailure(render_diags(&d)))?;
    let host = crate::runtime::RuntimeHost::new().with_resource_root(&cfg.resource_root);
    let tests: Vec<_> = program.tests().iter().filter(|t| is_generated(&program.files[t.file].path)).collect();
    let results: Vec<(String, TestExecution)> = exec::pool().install(|| {
        tests
            .par_iter()
            .map(|t| {
                // Runs of one test stay sequential so they cannot interfere.
                let mut runs = Vec::new();
                let mut cause = None;
                for run in 0..cfg.runs {
                    let deadline = Instant::now() + cfg.test_timeout;
                    let verdict =
                        exec::run_test(&program, &host, t, exec::test_seed(&t.id, run, 0), Some(deadline), false)
                            .verdict;
                    runs.push(verdict.passed());
                    if cause.is_none() {
                        cause = match verdict {
                            TestVerdict::Pass => None,
                            TestVerdict::Fail(m) => Some(m),
                            TestVerdict::TimedOut => Some("timed out".into()),
                        };
                    }
                }
                (t.id.clone(), TestExecution { outcome: classify_runs(&runs), runs, cause })
            })
            .collect()
    });
    out.tests = results.into_iter().collect();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureTag {
    pub test: String,
    pub outcome: TestOutcome,
    pub cause: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: MethodId,
    pub invocations: u64,
    pub collected: u64,
    pub unique: u64,
    pub generated_tests: u64,
    pub passing: u64,
    pub failing: u64,
    pub flaky: u64,
    pub status_before: TargetStatus,
    pub status_after: TargetStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<FailureTag>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub targets: usize,
    pub pseudo_tested_before: usize,
    pub improved: usize,
    pub generated_tests: u64,
    pub passing: u64,
    pub failing: u64,
    pub flaky: u64,
    pub uncompiled_containers: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssessmentReport {
    pub methods: Vec<MethodRow>,
    pub summary: Summary,
}

impl AssessmentReport {
    pub fn row(&self, method: &MethodId) -> Option<&MethodRow> {
        self.methods.iter().find(|r| &r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.methods {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.method,
                r.invocations,
                r.collected,
                r.unique,
                r.generated_tests,
                r.passing,
                r.failing,
                r.flaky,
                r.status_before,
                r.status_after
            ));
        }
        out
    }
}

pub struct AssessInputs<'a> {
    /// The subject with its original tests.
    pub subject: &'a Suite,
    pub baseline: &'a [TargetStatusRecord],
    pub targets: &'a [MethodDescriptor],
    pub stats: &'a ProfileStats,
    pub synthesis: &'a SynthesisReport,
    pub execution: &'a SuiteExecution,
    /// Where generated resource files live.
    pub generated_root: PathBuf,
    pub classify: ClassifyConfig,
}

/// Reclassifies the targets with the passing generated tests added to the
/// original suite and builds the per-method report.
pub fn assess_improvement(inputs: &AssessInputs<'_>) -> Result<AssessmentReport, AssessError> {
    let before: BTreeMap<&MethodId, &TargetStatusRecord> = inputs.baseline.iter().map(|r| (&r.method, r)).collect();
    for t in inputs.targets {
        if before.get(&t.id).and_then(|r| r.status).is_none() {
            return Err(AssessError::BaselineMissing(t.id.clone()));
        }
    }
    let program = inputs.subject.program()?;
    let original: BTreeSet<String> = program
        .tests()
        .iter()
        .filter(|t| inputs.subject.tests.as_ref().is_none_or(|s| s.contains(&t.id)))
        .filter(|t| {
            file_role(&program.files[t.file].path) == FileRole::Test && !is_generated(&program.files[t.file].path)
        })
        .map(|t| t.id.clone())
        .collect();
    let passing = inputs.execution.passing();
    let mut sources: Vec<_> = inputs.subject.sources.iter().filter(|(p, _)| !is_generated(p)).cloned().collect();
    sources.extend(inputs.execution.compiled.iter().cloned());
    let augmented = Suite {
        sources,
        resource_root: inputs.generated_root.clone(),
        tests: Some(original.union(&passing).cloned().collect()),
    };
    let after = mutation::classify_targets(&augmented, inputs.targets, &inputs.classify)?;
    let after: BTreeMap<&MethodId, &TargetStatusRecord> = after.iter().map(|r| (&r.method, r)).collect();

    let mut report = AssessmentReport::default();
    for t in inputs.targets {
        let status_before = before[&t.id].status.expect("checked above");
        let status_after = after.get(&t.id).and_then(|r| r.status).unwrap_or(status_before);
        let stats = inputs.stats.get(&t.id).cloned().unwrap_or_default();
        let tests = inputs.synthesis.methods.get(&t.id).map(|m| m.tests.clone()).unwrap_or_default();
        let mut row = MethodRow {
            method: t.id.clone(),
            invocations: stats.invocations,
            collected: stats.collected,
            unique: stats.unique,
            generated_tests: tests.len() as u64,
            passing: 0,
            failing: 0,
            flaky: 0,
            status_before,
            status_after,
            failures: Vec::new(),
        };
        for id in &tests {
            // Tests in containers that did not compile count as failing.
            let (outcome, cause) = match inputs.execution.tests.get(id) {
                Some(e) => (e.outcome, e.cause.clone()),
                None => (TestOutcome::Fail, Some("container did not compile".into())),
            };
            match outcome {
                TestOutcome::Pass => row.passing += 1,
                TestOutcome::Fail => row.failing += 1,
                TestOutcome::Flaky => row.flaky += 1,
            }
            if outcome != TestOutcome::Pass {
                row.failures.push(FailureTag { test: id.clone(), outcome, cause: cause.unwrap_or_default() });
            }
        }
        report.methods.push(row);
    }
    let s = &mut report.summary;
    s.targets = report.methods.len();
    s.pseudo_tested_before = report.methods.iter().filter(|r| r.status_before == TargetStatus::PseudoTested).count();
    s.improved = report
        .methods
        .iter()
        .filter(|r| r.status_before == TargetStatus::PseudoTested && r.status_after == TargetStatus::WellTested)
        .count();
    s.generated_tests = report.methods.iter().map(|r| r.generated_tests).sum();
    s.passing = report.methods.iter().map(|r| r.passing).sum();
    s.failing = report.methods.iter().map(|r| r.failing).sum();
    s.flaky = report.methods.iter().map(|r| r.flaky).sum();
    s.uncompiled_containers = inputs.execution.compile_failures.len();
    Ok(report)
}

pub fn write_report(out: &std::path::Path, report: &AssessmentReport) -> std::io::Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(REPORT_FILE), serde_json::to_string_pretty(report)?)?;
    std::fs::write(out.join(CSV_FILE), report.to_csv())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_classification() {
        assert_eq!(classify_runs(&[true; 5]), TestOutcome::Pass);
        assert_eq!(classify_runs(&[false; 5]), TestOutcome::Fail);
        assert_eq!(classify_runs(&[true, true, false, true, true]), TestOutcome::Flaky);
    }

    fn cfg() -> ExecuteConfig {
        ExecuteConfig { runs: 5, test_timeout: Duration::from_secs(10), resource_root: PathBuf::from(".") }
    }

    #[test]
    fn flaky_and_broken_containers() {
        let subject =
            vec![("src/d.sl".to_string(), "class D { pub fn roll() -> int { return rand_int(2); } }".to_string())];
        let generated = vec![
            (SUPPORT_FILE.to_string(), crate::synth::SUPPORT_SOURCE.to_string()),
            (
                format!("{GENERATED_DIR}/DCarved.sl"),
                "test fn coin() { assert_eq(new D { }.roll(), 0); }\ntest fn steady() { assert_eq(1, 1); }\ntest fn broken() { assert_eq(1, 2); }"
                    .to_string(),
            ),
            (format!("{GENERATED_DIR}/BadCarved.sl"), "test fn nope() { undefined_fn(); }".to_string()),
        ];
        let exec = execute_suite(&subject, &generated, &cfg()).unwrap();
        assert_eq!(exec.compile_failures.len(), 1);
        assert_eq!(exec.compile_failures[0].container, format!("{GENERATED_DIR}/BadCarved.sl"));
        let outcome = |n: &str| exec.tests[&format!("generated.DCarved::{n}")].outcome;
        assert_eq!(outcome("steady"), TestOutcome::Pass);
        assert_eq!(outcome("broken"), TestOutcome::Fail);
        // Seeds differ per run, so a fair coin is very unlikely to agree five times.
        assert_eq!(outcome("coin"), TestOutcome::Flaky);
        assert!(exec.tests[&"generated.DCarved::broken".to_string()].cause.as_deref().unwrap().contains("assert"));
        // Deterministic given the seeds.
        let again = execute_suite(&subject, &generated, &cfg()).unwrap();
        assert_eq!(
            exec.tests[&"generated.DCarved::coin".to_string()].runs,
            again.tests[&"generated.DCarved::coin".to_string()].runs
        );
    }

    #[test]
    fn nothing_generated_nothing_run() {
        let exec = execute_suite(&[], &[], &cfg()).unwrap();
        assert!(exec.tests.is_empty() && exec.compile_failures.is_empty());
    }

    #[test]
    fn csv_has_table_columns() {
        let report = AssessmentReport {
            methods: vec![MethodRow {
                method: "a.C.f/0".parse().unwrap(),
                invocations: 3,
                collected: 2,
                unique: 1,
                generated_tests: 1,
                passing: 1,
                failing: 0,
                flaky: 0,
                status_before: TargetStatus::PseudoTested,
                status_after: TargetStatus::WellTested,
                failures: vec![],
            }],
            summary: Summary::default(),
        };
        assert_eq!(report.to_csv(), format!("{CSV_HEADER}\na.C.f/0,3,2,1,1,1,0,0,pseudo-tested,well-tested\n"));
    }
}
