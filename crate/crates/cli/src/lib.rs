//! Pipeline phases and the output-directory layout that connects them.
//!
//! Each phase reads only what earlier phases wrote under the output root:
//!
//! ```text
//! <out>/targets.list                   select-targets
//! <out>/classification.json            select-targets
//! <out>/instrumented/                  instrument
//! <out>/instrumentation-manifest.json  instrument
//! <out>/store/                         run (or any workload run against the instrumented tree)
//! <out>/unique-profiles/               generate
//! <out>/profile-stats.json             generate
//! <out>/generated/                     generate: subject copy plus generated tests and resources
//! <out>/test-executions.json           assess
//! <out>/assessment-report.{json,csv}   assess
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use prodcarve::assess::{self, AssessError, AssessInputs, AssessmentReport, ExecuteConfig, SuiteExecution};
use prodcarve::collector::{CollectionStats, Collector, CollectorConfig, DEFAULT_THRESHOLD_BYTES};
use prodcarve::instrument::{
    apply_probes, InstrumentError, InstrumentationManifest, InstrumentationPlan, MANIFEST_FILE,
};
use prodcarve::model::{parse_target_list, render_target_list, MethodDescriptor, MethodId, DEFAULT_INLINE_THRESHOLD};
use prodcarve::mutation::{
    self, ClassifyConfig, MutationError, Suite, TargetStatusRecord, CLASSIFICATION_FILE, DEFAULT_VARIANT_TIMEOUT,
    TARGETS_FILE,
};
use prodcarve::store::{self, ProfileStats, StoreError, PROFILE_STATS_FILE};
use prodcarve::synth::{self, AssertMode, SynthConfig, SynthError, SynthesisReport, GENERATED_DIR};
use prodcarve::workload::{run_workload, WorkloadConfig, WorkloadError, WorkloadOutput};
use prodcarve_lang::project::{copy_tree, read_sources};
use prodcarve_lang::{Program, ProjectError};
use thiserror::Error;

pub const INSTRUMENTED_DIR: &str = "instrumented";
pub const STORE_DIR: &str = "store";
pub const GENERATED_TREE: &str = "generated";
pub const EXECUTIONS_FILE: &str = "test-executions.json";
pub const WORKLOAD_OUTPUT_FILE: &str = "workload-output.txt";
pub const DEFAULT_FLAKY_RUNS: u32 = assess::DEFAULT_RUNS;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{phase} needs {}; run the earlier phase first", path.display())]
    MissingPrerequisite { phase: &'static str, path: PathBuf },
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Mutation(#[from] MutationError),
    #[error(transparent)]
    Instrument(#[from] InstrumentError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Assess(#[from] AssessError),
    #[error(transparent)]
    Project(#[from] ProjectError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::ConfigInvalid(_) => 2,
            _ => 1,
        }
    }
}

type Result<T, E = PipelineError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError {
    let path = path.display().to_string();
    move |source| PipelineError::Io { path, source }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub subject: PathBuf,
    /// Explicit target list; otherwise the pseudo-tested methods are used.
    pub targets: Option<PathBuf>,
    pub threshold_bytes: u64,
    pub inline_threshold_bytes: usize,
    pub assert_mode: AssertMode,
    pub flaky_runs: u32,
    pub variant_timeout: Duration,
    pub out: PathBuf,
    /// Seed passed to the workload's `main`.
    pub seed: i64,
    pub workload_threads: usize,
}

impl PipelineConfig {
    pub fn new(subject: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            subject: subject.into(),
            targets: None,
            threshold_bytes: DEFAULT_THRESHOLD_BYTES,
            inline_threshold_bytes: DEFAULT_INLINE_THRESHOLD,
            assert_mode: AssertMode::default(),
            flaky_runs: DEFAULT_FLAKY_RUNS,
            variant_timeout: DEFAULT_VARIANT_TIMEOUT,
            out: out.into(),
            seed: 0,
            workload_threads: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PipelineError::ConfigInvalid(m.to_string()));
        if self.threshold_bytes == 0 {
            return bad("threshold-bytes must be positive");
        }
        if self.inline_threshold_bytes == 0 {
            return bad("inline-threshold-bytes must be positive");
        }
        if self.flaky_runs == 0 {
            return bad("flaky-runs must be positive");
        }
        if self.variant_timeout.is_zero() {
            return bad("variant-timeout must be positive");
        }
        if self.workload_threads == 0 {
            return bad("workload threads must be positive");
        }
        if !self.subject.is_dir() {
            return Err(PipelineError::ConfigInvalid(format!("subject {} is not a directory", self.subject.display())));
        }
        if let Some(t) = &self.targets {
            if !t.is_file() {
                return Err(PipelineError::ConfigInvalid(format!("target list {} does not exist", t.display())));
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout { root: self.out.clone() }
    }

    fn classify_config(&self) -> ClassifyConfig {
        ClassifyConfig { variant_timeout: self.variant_timeout }
    }
}

/// Paths of phase artifacts under the output root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn targets(&self) -> PathBuf {
        self.root.join(TARGETS_FILE)
    }
    pub fn classification(&self) -> PathBuf {
        self.root.join(CLASSIFICATION_FILE)
    }
    pub fn instrumented(&self) -> PathBuf {
        self.root.join(INSTRUMENTED_DIR)
    }
    pub fn instrumentation_manifest(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }
    pub fn store(&self) -> PathBuf {
        self.root.join(STORE_DIR)
    }
    pub fn profile_stats(&self) -> PathBuf {
        self.root.join(PROFILE_STATS_FILE)
    }
    pub fn generated(&self) -> PathBuf {
        self.root.join(GENERATED_TREE)
    }
    pub fn synthesis_report(&self) -> PathBuf {
        self.generated().join(synth::REPORT_FILE)
    }
    pub fn executions(&self) -> PathBuf {
        self.root.join(EXECUTIONS_FILE)
    }
    pub fn assessment(&self) -> PathBuf {
        self.root.join(assess::REPORT_FILE)
    }
    pub fn assessment_csv(&self) -> PathBuf {
        self.root.join(assess::CSV_FILE)
    }
    pub fn workload_output(&self) -> PathBuf {
        self.root.join(WORKLOAD_OUTPUT_FILE)
    }
}

fn require(phase: &'static str, path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(PipelineError::MissingPrerequisite { phase, path })
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| PipelineError::Json { path: path.display().to_string(), source })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("reports serialize");
    std::fs::write(path, text).map_err(io_err(path))
}

fn create_out(cfg: &PipelineConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub classification: Vec<TargetStatusRecord>,
    pub targets: Vec<MethodId>,
}

/// Classifies every public instance method and writes the target list: the
/// explicit list if one was given, the pseudo-tested methods otherwise.
pub fn select_targets(cfg: &PipelineConfig) -> Result<Selection> {
    cfg.validate()?;
    create_out(cfg)?;
    let suite = Suite::load(&cfg.subject)?;
    let candidates = mutation::enumerate_candidates(&suite.program()?);
    let classification = mutation::classify_targets(&suite, &candidates, &cfg.classify_config())?;
    let targets = match &cfg.targets {
        Some(path) => load_targets(path)?,
        None => mutation::pseudo_tested(&classification),
    };
    let layout = cfg.layout();
    mutation::write_classification(&layout.root, &classification).map_err(io_err(&layout.classification()))?;
    std::fs::write(layout.targets(), render_target_list(&targets)).map_err(io_err(&layout.targets()))?;
    Ok(Selection { classification, targets })
}

fn load_targets(path: &Path) -> Result<Vec<MethodId>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_target_list(&text).map_err(|e| PipelineError::ConfigInvalid(format!("{}: {e}", path.display())))
}

/// Targets for later phases: the explicit list, else the selected one.
fn current_targets(cfg: &PipelineConfig, phase: &'static str) -> Result<Vec<MethodId>> {
    match &cfg.targets {
        Some(path) => load_targets(path),
        None => load_targets(&require(phase, cfg.layout().targets())?),
    }
}

pub fn instrument(cfg: &PipelineConfig) -> Result<InstrumentationManifest> {
    cfg.validate()?;
    let targets = current_targets(cfg, "instrument")?;
    create_out(cfg)?;
    let layout = cfg.layout();
    Ok(apply_probes(&InstrumentationPlan {
        targets,
        subject_root: cfg.subject.clone(),
        output_root: layout.instrumented(),
        manifest_path: Some(layout.instrumentation_manifest()),
    })?)
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output: WorkloadOutput,
    pub stats: CollectionStats,
}

/// Runs the subject's workload against the instrumented tree, recording into
/// a fresh profile store.
pub fn run(cfg: &PipelineConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let layout = cfg.layout();
    let tree = require("run", layout.instrumented())?;
    let mut collector_cfg = CollectorConfig::new(layout.store());
    collector_cfg.threshold_bytes = cfg.threshold_bytes;
    let collector = Arc::new(Collector::create(collector_cfg).map_err(io_err(&layout.store()))?);
    let output = run_workload(
        &tree,
        Some(collector.clone()),
        &WorkloadConfig { seed: cfg.seed, threads: cfg.workload_threads, deadline: None },
    )?;
    let stats = collector.flush_stats().map_err(io_err(&layout.store()))?;
    std::fs::write(layout.workload_output(), output.outputs.concat()).map_err(io_err(&layout.workload_output()))?;
    Ok(RunSummary { output, stats })
}

/// Deduplicates the recorded profiles and writes one test per unique profile.
pub fn generate(cfg: &PipelineConfig) -> Result<SynthesisReport> {
    cfg.validate()?;
    let layout = cfg.layout();
    let store_root = require("generate", layout.store())?;
    let targets: BTreeSet<MethodId> = current_targets(cfg, "generate")?.into_iter().collect();
    let loaded = store::load_and_stats(&store_root)?;
    store::write_unique(&loaded, &layout.root).map_err(io_err(&layout.profile_stats()))?;
    let program = Program::load(&cfg.subject)?;
    let unique = loaded.unique.into_iter().filter(|(m, _)| targets.contains(m)).collect();
    let suite = synth::synthesize_suite(
        &program,
        &unique,
        &SynthConfig { inline_threshold: cfg.inline_threshold_bytes, mode: cfg.assert_mode },
    )?;
    let tree = layout.generated();
    if tree.exists() {
        std::fs::remove_dir_all(&tree).map_err(io_err(&tree))?;
    }
    copy_tree(&cfg.subject, &tree).map_err(io_err(&tree))?;
    suite.emit(&tree).map_err(io_err(&tree))?;
    Ok(suite.report)
}

fn descriptors(program: &Program, targets: &[MethodId]) -> Result<Vec<MethodDescriptor>> {
    let all = mutation::enumerate_candidates(program);
    targets
        .iter()
        .map(|t| {
            all.iter().find(|d| &d.id == t).cloned().ok_or_else(|| {
                PipelineError::ConfigInvalid(format!("target {t} is not a public instance method of the subject"))
            })
        })
        .collect()
}

/// Runs the generated tests, then reclassifies the targets with the passing
/// ones added to the subject's suite.
pub fn assess(cfg: &PipelineConfig) -> Result<AssessmentReport> {
    cfg.validate()?;
    let layout = cfg.layout();
    let baseline: Vec<TargetStatusRecord> = read_json(&require("assess", layout.classification())?)?;
    let synthesis: SynthesisReport = read_json(&require("assess", layout.synthesis_report())?)?;
    let stats: ProfileStats = read_json(&require("assess", layout.profile_stats())?)?;
    let targets = current_targets(cfg, "assess")?;
    let subject = Suite::load(&cfg.subject)?;
    let program = subject.program()?;
    let targets = descriptors(&program, &targets)?;
    let generated: Vec<_> = read_sources(&layout.generated())?
        .into_iter()
        .filter(|(p, _)| p.starts_with(&format!("{GENERATED_DIR}/")))
        .collect();
    let execution: SuiteExecution = assess::execute_suite(
        &subject.sources,
        &generated,
        &ExecuteConfig { runs: cfg.flaky_runs, test_timeout: cfg.variant_timeout, resource_root: layout.generated() },
    )?;
    write_json(&layout.executions(), &execution)?;
    let report = assess::assess_improvement(&AssessInputs {
        subject: &subject,
        baseline: &baseline,
        targets: &targets,
        stats: &stats,
        synthesis: &synthesis,
        execution: &execution,
        generated_root: layout.generated(),
        classify: cfg.classify_config(),
    })?;
    assess::write_report(&layout.root, &report).map_err(io_err(&layout.assessment()))?;
    Ok(report)
}

/// Renders the assessment as an aligned table.
pub fn report(cfg: &PipelineConfig) -> Result<String> {
    let report: AssessmentReport = read_json(&require("report", cfg.layout().assessment())?)?;
    Ok(render_table(&report))
}

pub fn render_table(report: &AssessmentReport) -> String {
    let header = ["method", "invocations", "collected", "unique", "tests", "pass", "fail", "flaky", "before", "after"];
    let mut rows: Vec<Vec<String>> = vec![header.iter().map(|h| h.to_string()).collect()];
    for r in &report.methods {
        rows.push(vec![
            r.method.to_string(),
            r.invocations.to_string(),
            r.collected.to_string(),
            r.unique.to_string(),
            r.generated_tests.to_string(),
            r.passing.to_string(),
            r.failing.to_string(),
            r.flaky.to_string(),
            r.status_before.to_string(),
            r.status_after.to_string(),
        ]);
    }
    let widths: Vec<usize> = (0..header.len()).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in &rows {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(
                |(c, cell)| {
                    if c == 0 {
                        format!("{cell:<w$}", w = widths[c])
                    } else {
                        format!("{cell:>w$}", w = widths[c])
                    }
                },
            )
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    let s = &report.summary;
    let rate =
        if s.pseudo_tested_before == 0 { 0.0 } else { 100.0 * s.improved as f64 / s.pseudo_tested_before as f64 };
    out.push_str(&format!(
        "\n{} of {} pseudo-tested targets now well-tested ({rate:.1}%); {} tests: {} pass, {} fail, {} flaky\n",
        s.improved, s.pseudo_tested_before, s.generated_tests, s.passing, s.failing, s.flaky
    ));
    out
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub selection: Selection,
    pub instrumentation: InstrumentationManifest,
    pub run: RunSummary,
    pub synthesis: SynthesisReport,
    pub assessment: AssessmentReport,
    pub table: String,
}

/// Every phase in order, using the subject's own workload.
pub fn pipeline(cfg: &PipelineConfig) -> Result<PipelineRun> {
    let selection = select_targets(cfg)?;
    let instrumentation = instrument(cfg)?;
    let run = run(cfg)?;
    let synthesis = generate(cfg)?;
    let assessment = assess(cfg)?;
    let table = render_table(&assessment);
    Ok(PipelineRun { selection, instrumentation, run, synthesis, assessment, table })
}
